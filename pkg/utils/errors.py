"""
Error hierarchy — every failure the toolkit reports is a DequantError subclass,
so the CLI can map config problems to exit code 1 and everything else to 2.
"""


class DequantError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DequantError):
    "Raised for unknown config keys or values that violate a module invariant."

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ImageReadError(DequantError):
    "Raised when an image file cannot be opened or decoded."


class UnsupportedImageError(DequantError):
    "Raised for formats or bit depths outside 8-bit PNG / PGM / PPM."


class DimensionMismatchError(DequantError):
    "Raised when two rasters (or arrays) must share dimensions and do not."


class PatchTooLargeError(DequantError):
    "Raised when a training patch does not fit inside the source image."


class SolverError(DequantError):
    "Raised when the LAIC linear program does not reach an optimal status."


class ShapeError(DequantError):
    "Raised by nngrad when tensor shapes are incompatible with an operation."


class GradientError(DequantError):
    "Raised when backward() is called on something other than a scalar."


class NonFiniteLossError(DequantError):
    "Raised when a training loss becomes NaN or infinite."

    def __init__(self, loss_name: str, iteration: int, value: float):
        self.loss_name = loss_name
        self.iteration = iteration
        self.value = value
        super().__init__(f"{loss_name} is non-finite ({value}) at iteration {iteration}")


class EmptyDatasetError(DequantError):
    "Raised when a manifest or pairs directory holds no usable entries."


class UnpairedFilesError(DequantError):
    "Raised when an evaluation directory has files without a partner."


class CheckpointError(DequantError):
    "Base class for checkpoint container failures."


class CheckpointVersionError(CheckpointError):
    "Raised when a checkpoint was written by an unsupported format version."


class CorruptCheckpointError(CheckpointError):
    "Raised on bad magic, truncated records or checksum mismatches."


class UsageError(DequantError):
    "Raised for malformed command lines (missing arguments, bad flag values)."
