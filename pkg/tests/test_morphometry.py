"""Tests for cross-sections, radius measures and vessel descriptors."""

import math

import numpy as np
import pytest

from aaa_toolkit.centerline import centerline_from_points, extract_centerline
from aaa_toolkit.errors import EmptySectionError, GeometryError, MeasurementError, TopologyError, VolumeIOError
from aaa_toolkit.mesh import TriMesh
from aaa_toolkit.morphometry import (
    CENTERLINE_FILE,
    DESCRIPTORS_FILE,
    PROFILE_FILE,
    REPORT_FILE,
    cross_section,
    format_report,
    measure_sections,
    morphometry,
    polygon_area,
    radius_measures,
    write_morphometry,
)
from aaa_toolkit.phantom import PhantomSpec, generate
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.reconstruction import reconstruct
from aaa_toolkit.schemas import CenterlineConfig, ReconConfig, SurfaceLabel


def _ellipse(a, b, n=64):
    theta = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    return np.column_stack([a * np.cos(theta), b * np.sin(theta)])


def _axis_line(z0, z1):
    return centerline_from_points(np.array([[0.0, 0.0, z0], [0.0, 0.0, z1]]))


def test_radius_measures_of_circle():
    """Test that a sampled circle gives (R, R, 2R)."""
    radii = radius_measures(_ellipse(12.0, 12.0))

    assert radii.r_inscribed == pytest.approx(12.0, rel=0.02)
    assert radii.r_equiv_area == pytest.approx(12.0, rel=0.02)
    assert radii.d_max_chord == pytest.approx(24.0, rel=0.02)


def test_radius_measures_of_ellipse():
    """Test the ordering of the three radius definitions on an elongated contour."""
    radii = radius_measures(_ellipse(10.0, 5.0))

    assert radii.r_inscribed < radii.r_equiv_area < radii.d_max_chord / 2.0
    assert radii.r_inscribed == pytest.approx(5.0, rel=0.02)
    assert radii.d_max_chord == pytest.approx(20.0, rel=1e-9)
    assert polygon_area(_ellipse(10.0, 5.0)) == pytest.approx(math.pi * 50.0, rel=0.01)


def test_radius_measures_center_outside():
    """Test that a center outside the contour is refused."""
    with pytest.raises(GeometryError):
        radius_measures(_ellipse(10.0, 10.0), center=(20.0, 0.0))


def test_cross_section_of_tube(make_tube_mesh):
    """Test a perpendicular cut through a cylinder mesh."""
    tube = make_tube_mesh(10.0, 40.0)

    section = cross_section(tube, np.array([0.0, 0.0, 20.3]), np.array([0.0, 0.0, 1.0]))

    assert section.area_mm2 == pytest.approx(math.pi * 100.0, rel=1e-3)
    np.testing.assert_allclose(section.points[:, 2], 20.3, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(section.coords, axis=1), 10.0, rtol=1e-3)


def test_cross_section_errors(make_tube_mesh):
    """Test a plane missing the mesh and a cut through a hole."""
    tube = make_tube_mesh(10.0, 40.0)
    # Lateral triangle between rings 20 and 21.
    holed = TriMesh(tube.vertices, np.delete(tube.faces, 2 * 128 * 20, axis=0))

    with pytest.raises(EmptySectionError):
        cross_section(tube, np.array([0.0, 0.0, 100.0]), np.array([0.0, 0.0, 1.0]))
    with pytest.raises(TopologyError):
        cross_section(holed, np.array([0.0, 0.0, 20.3]), np.array([0.0, 0.0, 1.0]))


def test_measure_sections_marks_failures(make_tube_mesh):
    """Test that sections beyond the mesh become NaN and are counted."""
    metrics = RunMetrics()
    line = _axis_line(-5.5, 44.5)

    measured, failed = measure_sections(line, make_tube_mesh(10.0, 40.0), metrics)

    outside = (line.points[:, 2] < 0.0) | (line.points[:, 2] > 40.0)
    assert failed == int(outside.sum()) == 11
    assert metrics.registry.get_sample_value("sections_failed_total") == 11
    assert np.all(np.isnan(measured.d_max_chord[outside]))
    np.testing.assert_allclose(measured.d_max_chord[~outside], 20.0, rtol=1e-3)
    np.testing.assert_allclose(measured.r_equiv_area[~outside], 10.0, rtol=1e-3)


def test_morphometry_of_tube(make_tube_mesh):
    """Test descriptors of a straight cylinder, shape indices included."""
    cfg = CenterlineConfig(
        shape_indices=("size_ratio_max_over_min", "aspect_ratio_length_over_diameter"),
        surface_label=SurfaceLabel.LUMEN,
    )

    line, descriptors = morphometry(_axis_line(0.5, 39.5), make_tube_mesh(10.0, 40.0), cfg)

    assert descriptors.surface_label is SurfaceLabel.LUMEN
    assert descriptors.n_points == 40
    assert descriptors.n_failed_sections == 0
    assert descriptors.centerline_length_mm == pytest.approx(39.0)
    assert descriptors.tortuosity == pytest.approx(1.0)
    assert descriptors.max_diameter_mm == pytest.approx(20.0, rel=1e-3)
    assert descriptors.volume_mm3 == pytest.approx(math.pi * 100.0 * 40.0, rel=1e-3)
    assert descriptors.max_curvature_per_mm == 0.0
    assert descriptors.shape_indices["size_ratio_max_over_min"] == pytest.approx(1.0, rel=1e-3)
    assert descriptors.shape_indices["aspect_ratio_length_over_diameter"] == pytest.approx(1.95, rel=1e-3)
    assert not np.any(np.isnan(line.r_inscribed))


def test_morphometry_errors(make_tube_mesh, unit_cube_mesh):
    """Test a centerline that never meets the mesh and an open mesh."""
    tube = make_tube_mesh(10.0, 40.0)
    holed = TriMesh(unit_cube_mesh.vertices, unit_cube_mesh.faces[1:])

    with pytest.raises(MeasurementError):
        morphometry(_axis_line(50.0, 60.0), tube, CenterlineConfig())
    with pytest.raises(MeasurementError):
        morphometry(_axis_line(0.2, 0.8), holed, CenterlineConfig())


def test_write_morphometry(tmp_path, make_tube_mesh, small_spec):
    """Test the output tables and the report lines."""
    line, descriptors = morphometry(_axis_line(0.5, 39.5), make_tube_mesh(10.0, 40.0), CenterlineConfig())
    analytic = generate(small_spec).analytic

    write_morphometry(line, descriptors, tmp_path / "morph", analytic)

    for name in (CENTERLINE_FILE, PROFILE_FILE, DESCRIPTORS_FILE, REPORT_FILE):
        assert (tmp_path / "morph" / name).exists()
    profile = (tmp_path / "morph" / PROFILE_FILE).read_text(encoding="utf-8").splitlines()
    assert profile[0] == "s,d_max_chord,d_equiv_area,d_inscribed"
    assert len(profile) == 1 + 40
    report = (tmp_path / "morph" / REPORT_FILE).read_text(encoding="utf-8")
    assert "Maximal Diameter (pred) 2.0 cm / (true) 1.8 cm" in report
    assert "(surface: outer-wall)" in report
    assert "(true)" not in format_report(descriptors)


def test_write_morphometry_report_failure(tmp_path, make_tube_mesh):
    """Test that an unwritable report is a file I/O error naming the output directory."""
    line, descriptors = morphometry(_axis_line(0.5, 39.5), make_tube_mesh(10.0, 40.0), CenterlineConfig())
    out = tmp_path / "morph"
    (out / REPORT_FILE).mkdir(parents=True)

    with pytest.raises(VolumeIOError) as exc_info:
        write_morphometry(line, descriptors, out)

    assert exc_info.value.exit_code == 4
    assert str(out) in str(exc_info.value)


def _phantom_pipeline():
    spec = PhantomSpec()
    phantom = generate(spec)
    mesh = reconstruct(phantom.gt, ReconConfig())
    return phantom, mesh


@pytest.mark.integration
def test_phantom_morphometry_matches_analytic_record():
    """Test diameter, area and volume of the reconstructed phantom against its analytic record."""
    phantom, mesh = _phantom_pipeline()
    line = centerline_from_points(phantom.analytic.centerline_mm)

    _, descriptors = morphometry(line, mesh, CenterlineConfig())

    analytic = phantom.analytic
    assert analytic.max_diameter_mm == pytest.approx(50.0)
    assert descriptors.max_diameter_mm == pytest.approx(analytic.max_diameter_mm, rel=0.05)
    assert descriptors.surface_area_mm2 == pytest.approx(analytic.surface_area_mm2, rel=0.05)
    assert descriptors.volume_mm3 == pytest.approx(analytic.volume_mm3, rel=0.05)


@pytest.mark.slow
@pytest.mark.integration
def test_phantom_morphometry_with_extracted_centerline():
    """Test the maximal diameter measured along a fast-marching centerline."""
    phantom, mesh = _phantom_pipeline()
    line = extract_centerline(phantom.gt, CenterlineConfig())

    _, descriptors = morphometry(line, mesh, CenterlineConfig())

    assert descriptors.max_diameter_mm == pytest.approx(phantom.analytic.max_diameter_mm, rel=0.05)
    assert descriptors.centerline_length_mm == pytest.approx(phantom.analytic.centerline_length_mm, rel=0.05)
