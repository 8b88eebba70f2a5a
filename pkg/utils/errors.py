"""
Exception hierarchy for the LilNetX toolkit.
Library code raises these; CLI entry points catch them and exit non-zero.
"""
from typing import Optional


class LilNetXError(Exception):
    """Base class for all toolkit errors"""


class ShapeMismatchError(LilNetXError):
    """Raised when a tensor does not match the shape a layer expects"""

    def __init__(self, message: str, layer_index: Optional[int] = None, layer_name: Optional[str] = None):
        self.layer_index = layer_index
        self.layer_name = layer_name
        if layer_index is not None:
            message = f"layer {layer_index} ({layer_name}): {message}"
        super().__init__(message)


class StaleCacheError(LilNetXError):
    """Backward was called with a cache from an older forward pass"""


class StaleMaskError(LilNetXError):
    """A slice mask no longer matches the latent it was computed from"""


class NonFiniteError(LilNetXError):
    """A NaN or infinity showed up where finite values are required"""

    def __init__(self, message: str, name: Optional[str] = None):
        self.name = name
        if name is not None:
            message = f"{name}: {message}"
        super().__init__(message)


class ConfigError(LilNetXError):
    """Invalid, unknown or badly typed configuration value"""


class DatasetFormatError(LilNetXError):
    """Dataset file is malformed; carries the byte offset of the problem"""

    def __init__(self, message: str, path: str = "", offset: Optional[int] = None):
        self.path = path
        self.offset = offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{path}: {message}{where}" if path else f"{message}{where}")


class CodecError(LilNetXError):
    """Base class for compressed-file and coder errors"""


class TruncatedPayloadError(CodecError):
    """Payload or file ended before all declared bytes were read"""


class ChecksumError(CodecError):
    """CRC32 mismatch on a payload or on the whole file"""


class FormatVersionError(CodecError):
    """Bad magic bytes or unsupported format version"""


class InvalidLabelError(LilNetXError):
    """Class label outside [0, num_classes)"""
