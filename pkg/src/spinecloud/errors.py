"""Exception types shared across the package.

Errors carry enough context in their message to locate the offending
input (file path, label, sample id) without a debugger.
"""


class SpineCloudError(Exception):
    """Base class for all package-specific errors."""


class FormatError(SpineCloudError):
    """Malformed file content (header JSON, PLY/OBJ, completer output)."""


class ConsistencyError(SpineCloudError):
    """Declared metadata disagrees with the actual data payload."""


class LabelError(SpineCloudError):
    """A vertebra label is out of range or absent from the input."""


class EmptyRegionError(LabelError):
    """Surface extraction requested for a label with no voxels."""


class TopologyError(SpineCloudError):
    """Mesh topology violates an operation's precondition."""


class OrderingError(SpineCloudError):
    """Vertebra meshes are not in cranio-caudal anatomical order."""


class ArityError(SpineCloudError):
    """Wrong number of per-level inputs (expected one mesh per L1..L5)."""


class InstabilityError(SpineCloudError):
    """Spring relaxation diverged; retry with a smaller time step."""


class EmptyInputError(SpineCloudError):
    """An operation received an empty mesh or point cloud."""


class EmptyMaskError(SpineCloudError):
    """A masking box selected no points."""


class DegeneracyError(SpineCloudError):
    """Input is degenerate (e.g. all points coincide) for normalization."""


class AtlasError(SpineCloudError):
    """Completion atlas is empty or inconsistent."""


class ExternalCompleterError(SpineCloudError):
    """An external completer process failed; message carries diagnostics."""


class SplitError(SpineCloudError):
    """Dataset split is infeasible for the available volumes."""
