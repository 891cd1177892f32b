"""Pydantic schemas for experiment configuration.

Every section of the INI config file maps onto one model below. Models are
frozen and reject unknown keys.
"""

from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LossMode(str, Enum):
    """Training objective family."""

    ANATOMY_AWARE = "anatomy-aware"
    BASELINE = "baseline"


class BaselineObjective(str, Enum):
    """Objective used by the baseline (unmasked) model."""

    DICE = "dice"
    COMBINED = "combined"


class Pooling(str, Enum):
    """Precision/recall aggregation across slices."""

    MICRO = "micro"
    MACRO = "macro"


class SurfaceLabel(str, Enum):
    """Which wall a reconstructed mesh represents."""

    OUTER_WALL = "outer-wall"
    LUMEN = "lumen"


SHAPE_INDEX_FORMULAS: dict[str, str] = {
    "size_ratio_max_over_min": "max chord diameter / min chord diameter along the centerline",
    "size_ratio_max_over_inlet": "max chord diameter / chord diameter at the inlet section",
    "aspect_ratio_length_over_diameter": "centerline length / max chord diameter",
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PreprocessConfig(_Section):
    """Resampling, windowing and slice selection."""

    window_lo_hu: float = Field(-150.0, description="Lower bound of the HU window")
    window_hi_hu: float = Field(600.0, description="Upper bound of the HU window")
    target_spacing: tuple[float, float, float] = Field(
        (1.0, 1.0, 1.0), description="Isotropic resampling target in mm"
    )
    crop_size: int = Field(64, ge=1, description="Side of the square training crop in pixels")
    min_aorta_voxels: int = Field(1, ge=1, description="Aorta voxels required to keep a slice")

    @field_validator("target_spacing")
    @classmethod
    def _positive_spacing(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s <= 0 for s in value):
            raise ValueError("target_spacing components must be > 0")
        return value

    @model_validator(mode="after")
    def _window_order(self) -> "PreprocessConfig":
        if self.window_lo_hu >= self.window_hi_hu:
            raise ValueError("window_lo_hu must be < window_hi_hu")
        return self


class AnatomyConfig(_Section):
    """Label table of the organ label map and the labels to preserve."""

    label_table: dict[int, str] = Field(
        default_factory=lambda: {
            0: "background",
            1: "aorta",
            2: "iliac_artery",
            3: "vertebra",
            4: "bowel",
            5: "kidney",
            6: "psoas",
        },
        description="Label id to organ name",
    )
    vascular_ids: tuple[int, ...] = Field((1, 2), description="Labels never excluded")
    aorta_id: int = Field(1, description="Label id of the abdominal aorta")
    gt_override: bool = Field(True, description="Force A=1 on ground-truth positive pixels")

    @model_validator(mode="after")
    def _vascular_subset(self) -> "AnatomyConfig":
        missing = set(self.vascular_ids) - set(self.label_table)
        if missing:
            raise ValueError(f"vascular_ids not in label_table: {sorted(missing)}")
        return self


class DistractorSpec(_Section):
    """Ellipsoidal organ that looks like thrombus in CT."""

    name: str
    label: int = Field(..., ge=1)
    center_mm: tuple[float, float, float]
    semi_axes_mm: tuple[float, float, float]
    mean_hu: float

    @field_validator("semi_axes_mm")
    @classmethod
    def _positive_axes(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(a <= 0 for a in value):
            raise ValueError("semi_axes_mm components must be > 0")
        return value


def _default_distractors() -> list[DistractorSpec]:
    return [
        DistractorSpec(name="vertebra", label=3, center_mm=(48.0, 78.0, 48.0),
                       semi_axes_mm=(8.0, 3.5, 36.0), mean_hu=80.0),
        DistractorSpec(name="bowel", label=4, center_mm=(22.0, 24.0, 40.0),
                       semi_axes_mm=(5.0, 5.0, 14.0), mean_hu=55.0),
        DistractorSpec(name="kidney", label=5, center_mm=(74.0, 26.0, 50.0),
                       semi_axes_mm=(4.5, 6.0, 16.0), mean_hu=70.0),
        DistractorSpec(name="psoas", label=6, center_mm=(24.0, 72.0, 48.0),
                       semi_axes_mm=(5.0, 5.0, 36.0), mean_hu=45.0),
    ]


class PhantomSpec(_Section):
    """
    Synthetic CTA phantom with an aneurysmal aorta.

    Geometric invariants (bulge inside the volume, distractors clear of the
    outer wall) are checked by phantom.validate_spec.
    """

    dims: tuple[int, int, int] = Field((96, 96, 96), description="Voxel counts")
    spacing: tuple[float, float, float] = Field((1.0, 1.0, 1.0), description="mm per voxel")
    origin: tuple[float, float, float] = Field((0.0, 0.0, 0.0), description="First voxel center, mm")
    axis_shape: Literal["straight", "sinusoid"] = "straight"
    axis_amplitude_mm: float = Field(0.0, ge=0.0)
    axis_wavelength_mm: float = Field(120.0, gt=0.0)
    axis_center_mm: tuple[float, float] = Field((48.0, 48.0), description="Axis x, y at zero phase")
    z_start_mm: float | None = Field(None, description="Tube start; default 8 voxels in")
    z_end_mm: float | None = Field(None, description="Tube end; default 8 voxels from the top")
    lumen_radius_mm: float = Field(10.0, gt=0.0)
    bulge_radius_mm: float = Field(25.0, gt=0.0)
    bulge_center_z_mm: float = 48.0
    bulge_sigma_z_mm: float = Field(12.0, gt=0.0)
    lumen_hu: float = 300.0
    thrombus_hu: float = 60.0
    background_hu: float = -50.0
    noise_sigma_hu: float = Field(15.0, ge=0.0)
    aorta_label: int = Field(1, ge=1)
    distractors: list[DistractorSpec] = Field(default_factory=_default_distractors)
    seed: int = 0

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value: tuple[int, int, int]) -> tuple[int, int, int]:
        if any(n < 1 for n in value):
            raise ValueError("dims components must be >= 1")
        return value

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s <= 0 for s in value):
            raise ValueError("spacing components must be > 0")
        return value


class PhantomSetConfig(_Section):
    """A cohort of jittered phantoms and its patient-level split."""

    count: int = Field(15, ge=1)
    n_train: int = Field(10, ge=0)
    n_val: int = Field(2, ge=0)
    n_test: int = Field(3, ge=0)
    jitter: bool = Field(True, description="Vary bulge size/position and axis shape per phantom")

    @model_validator(mode="after")
    def _counts(self) -> "PhantomSetConfig":
        if self.n_train + self.n_val + self.n_test != self.count:
            raise ValueError("n_train + n_val + n_test must equal count")
        return self


class MaskedLossConfig(_Section):
    """Weights and smoothing constants of the masked losses."""

    w: float = Field(0.5, ge=0.0, le=1.0, description="BCE weight in the combined loss")
    epsilon: float = Field(1e-6, gt=0.0, description="Smoothing shared by Dice and BCE")
    clamp: float = Field(1e-7, gt=0.0, lt=0.5, description="BCE probability clamp")
    baseline_mode: bool = Field(False, description="Treat the allow mask as all ones")


class UNetConfig(_Section):
    """Shape of the 2D U-Net."""

    levels: int = Field(3, ge=1)
    base_channels: int = Field(8, ge=1)
    in_channels: int = Field(1, ge=1)
    use_batchnorm: bool = True
    seed: int = 0


class AugmentConfig(_Section):
    """
    Ranges of the paired on-the-fly augmentation.

    intensity_jitter is a relative gain, e.g. 0.1 draws a multiplier in
    [0.9, 1.1].
    """

    enabled: bool = True
    rotation_deg: float = Field(10.0, ge=0.0)
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)
    translation_px: float = Field(10.0, ge=0.0)
    scale_range: tuple[float, float] = (0.9, 1.1)
    intensity_jitter: float = Field(0.1, ge=0.0, lt=1.0)
    noise_sigma: float = Field(0.02, ge=0.0, description="Gaussian noise in normalized units")
    elastic_prob: float = Field(0.5, ge=0.0, le=1.0)
    elastic_grid: int = Field(4, ge=2)
    elastic_max_px: float = Field(5.0, ge=0.0)

    @field_validator("scale_range")
    @classmethod
    def _scale_order(cls, value: tuple[float, float]) -> tuple[float, float]:
        if not 0 < value[0] <= value[1]:
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        return value


class TrainConfig(_Section):
    """Optimizer and early-stopping schedule."""

    lr: float = Field(1e-4, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps_adam: float = Field(1e-8, gt=0.0)
    batch_size: int = Field(3, ge=1)
    max_epochs: int = Field(200, ge=1)
    patience: int = Field(25, ge=1)
    steps_per_epoch: int | None = Field(None, ge=1, description="None = one pass over the training slices")
    loss_mode: LossMode = LossMode.ANATOMY_AWARE
    baseline_objective: BaselineObjective = BaselineObjective.DICE
    dtype: Literal["float32", "float64"] = "float32"
    seed: int = 0


class EvalConfig(_Section):
    """Metric conventions."""

    threshold: float = Field(0.5, ge=0.0, le=1.0)
    std_ddof: int = Field(0, ge=0, le=1, description="0 = population std, 1 = sample std")
    pooling: Pooling = Pooling.MICRO
    gate_predictions: bool = Field(
        False, description="Zero predictions inside excluded organs before scoring, for every loss mode"
    )


class ReconConfig(_Section):
    """Volume smoothing, isosurfacing and mesh smoothing."""

    volume_sigma_voxels: float = Field(1.0, ge=0.0)
    iso: float = 0.5
    laplacian_iterations: int = Field(10, ge=0)
    laplacian_lambda: float = Field(0.5, gt=0.0, le=1.0)
    taubin_iterations: int = Field(10, ge=0)
    taubin_lambda: float = 0.5
    taubin_mu: float = -0.53
    keep_largest_component: bool = True

    @model_validator(mode="after")
    def _taubin_order(self) -> "ReconConfig":
        if not (self.taubin_lambda > 0 > self.taubin_mu and abs(self.taubin_mu) > self.taubin_lambda):
            raise ValueError("taubin parameters must satisfy lambda > 0 > mu and |mu| > lambda")
        return self


class CenterlineConfig(_Section):
    """Fast-marching centerline and morphometry settings."""

    speed_epsilon_mm: float = Field(0.1, gt=0.0)
    speed_power: float = Field(1.0, gt=0.0)
    step_voxels: float = Field(0.25, gt=0.0, le=1.0)
    resample_mm: float = Field(1.0, gt=0.0)
    frame_window: int = Field(0, ge=0, description="Tangent moving-average half width")
    inlet: tuple[int, int, int] | None = Field(None, description="Inlet voxel index override")
    outlet: tuple[int, int, int] | None = Field(None, description="Outlet voxel index override")
    surface_label: SurfaceLabel = SurfaceLabel.OUTER_WALL
    shape_indices: tuple[str, ...] = Field((), description="Names from SHAPE_INDEX_FORMULAS")

    @field_validator("shape_indices")
    @classmethod
    def _known_indices(cls, value: tuple[str, ...]) -> tuple[str, ...]:
        unknown = [name for name in value if name not in SHAPE_INDEX_FORMULAS]
        if unknown:
            raise ValueError(f"unknown shape index formula(s): {unknown}")
        return value


class RunConfig(_Section):
    """Cohort and comparison seeds."""

    seed: int = 7
    compare_seeds: tuple[int, ...] = (1, 2, 3)


class ExperimentConfig(_Section):
    """All tunables of one pipeline run."""

    run: RunConfig = Field(default_factory=RunConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    anatomy: AnatomyConfig = Field(default_factory=AnatomyConfig)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    phantom_set: PhantomSetConfig = Field(default_factory=PhantomSetConfig)
    loss: MaskedLossConfig = Field(default_factory=MaskedLossConfig)
    unet: UNetConfig = Field(default_factory=UNetConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    recon: ReconConfig = Field(default_factory=ReconConfig)
    centerline: CenterlineConfig = Field(default_factory=CenterlineConfig)

    @model_validator(mode="after")
    def _crop_fits_unet(self) -> "ExperimentConfig":
        factor = 2**self.unet.levels
        if self.preprocess.crop_size % factor:
            raise ValueError(
                f"preprocess.crop_size {self.preprocess.crop_size} must be divisible by "
                f"2**unet.levels = {factor}"
            )
        return self
