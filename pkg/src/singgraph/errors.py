"""Exception hierarchy. Everything raised on purpose derives from SingGraphError."""


class SingGraphError(Exception):
    pass


class AudioFormatError(SingGraphError):
    pass


class UnsupportedAudioError(SingGraphError):
    pass


class LengthError(SingGraphError):
    pass


class EmptyRangeError(SingGraphError):
    pass


class ConfigError(SingGraphError):
    pass


class RateMismatchError(SingGraphError):
    pass


class ManifestParseError(SingGraphError):
    def __init__(self, line_no, msg):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class IntegrityError(SingGraphError):
    pass


class AnnotationError(SingGraphError):
    pass


class LookupFailure(SingGraphError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class AlignmentError(SingGraphError):
    pass


class ShapeError(SingGraphError):
    pass


class NumericError(SingGraphError):
    pass


class TapeConsumedError(SingGraphError):
    pass


class DeterminismError(SingGraphError):
    pass


class InputError(SingGraphError):
    pass


class DataError(SingGraphError):
    pass


class MetricError(SingGraphError):
    pass


class CheckpointError(SingGraphError):
    pass
