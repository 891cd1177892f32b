"""Exception hierarchy shared by every toolkit module.

Library code raises these; only the CLI boundary turns them into exit codes.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    exit_code: int = 1

    def __init__(self, message: str, **context: object):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        return self.message


class UsageError(ToolkitError):
    """Command-line usage problem."""

    exit_code = 2


class ConfigurationError(ToolkitError):
    """Invalid or inconsistent configuration."""

    exit_code = 3

    def __init__(self, message: str, key: str | None = None, line: int | None = None, **context: object):
        super().__init__(message, key=key, line=line, **context)
        self.key = key
        self.line = line


class SpecificationError(ConfigurationError):
    """Phantom specification violates its geometric invariants."""


class ParameterError(ConfigurationError):
    """Algorithm parameters out of their admissible range."""


class VolumeIOError(ToolkitError):
    """File could not be read or written."""

    exit_code = 4


class NiftiFormatError(VolumeIOError):
    """Header is not a NIfTI-1 header (size or magic)."""


class UnsupportedDatatypeError(VolumeIOError):
    """NIfTI datatype code outside the supported set."""


class DimensionalityError(VolumeIOError):
    """Only 3D volumes are accepted."""


class InvariantError(ToolkitError):
    """Data violates a type invariant (shape, value set, spacing)."""


class BoundsError(ToolkitError):
    """Index outside the valid range."""


class ModeError(ToolkitError):
    """Operation mode incompatible with the data kind."""


class AlignmentError(ToolkitError):
    """Grids could not be aligned."""


class NumericInputError(ToolkitError):
    """NaN, Inf or out-of-range numeric input."""


class ShapeError(ToolkitError):
    """Array shapes incompatible with the operation."""


class TopologyError(ToolkitError):
    """Mesh or contour topology unsuitable for the operation."""


class MeasurementError(ToolkitError):
    """A geometric measurement is undefined for the input."""


class MetadataError(ToolkitError):
    """Slice positions or spacing metadata are inconsistent."""


class PathError(ToolkitError):
    """Degenerate polyline."""


class EndpointError(ToolkitError):
    """Centerline endpoint outside the vessel interior."""


class UnreachableError(ToolkitError):
    """Outlet not reachable from inlet."""


class EmptySectionError(ToolkitError):
    """Cutting plane does not intersect the mesh."""


class GeometryError(ToolkitError):
    """Point lies outside the contour it should be measured against."""


class EmptySetError(ToolkitError):
    """Aggregation over an empty set."""
