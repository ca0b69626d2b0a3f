"""Exception hierarchy shared by every module of the package."""


class MidiVAEError(Exception):
    """Base class; ``code`` is the CLI exit status for the error class."""

    code = 1


class MidiParseError(MidiVAEError):
    code = 10

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class UnsupportedFormatError(MidiVAEError):
    code = 11


class EncodingError(MidiVAEError):
    code = 12


class DecodingError(MidiVAEError):
    code = 13


class CapacityError(MidiVAEError):
    code = 14


class MappingError(MidiVAEError):
    code = 15


class ContractError(MidiVAEError, ValueError):
    """Arguments violate a shape or alignment precondition."""

    code = 16


class ConfigError(MidiVAEError):
    code = 17


class CheckpointError(MidiVAEError):
    code = 18


class TrainingError(MidiVAEError):
    code = 19
