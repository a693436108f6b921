"""Exception types raised by the package.

Every error carries a human-readable message naming the offending
shapes, indices, or config lines so failures are diagnosable from the
message alone.
"""


class BlockpruneError(Exception):
    """Base class for all package errors."""


class ShapeError(BlockpruneError):
    """Dimension or index mismatch between operands."""


class PartitionError(BlockpruneError):
    """Block geometry that does not divide the matrix extent."""


class MaskError(BlockpruneError):
    """Mask inconsistent with its matrix or degenerate (all zero)."""


class DataError(BlockpruneError):
    """Bad dataset input (empty dataset, out-of-range token or label)."""


class NonFiniteError(BlockpruneError):
    """A loss or function evaluation produced NaN or Inf."""


class CheckpointError(BlockpruneError):
    """Malformed checkpoint, mask, or block-sparse file."""


class ConfigError(BlockpruneError):
    """Invalid config file contents; message includes the line number."""
