"""Exception hierarchy shared by all pipeline stages.

Validation errors (bad input files, bad arguments, violated preconditions)
derive from ValidationError; unexpected runtime failures derive from
RuntimeStageError. The CLI maps these to exit codes 2 and 1 respectively.
"""


class McofError(Exception):
    pass


class ValidationError(McofError):
    pass


class RuntimeStageError(McofError):
    pass


class IoError(ValidationError):
    pass


class FormatError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class MissingFileError(ValidationError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing files: " + ", ".join(str(p) for p in self.missing))


class DimensionMismatch(ValidationError):
    pass


class MissingHeatmap(ValidationError):
    pass


class MissingSaliency(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DegenerateData(ValidationError):
    pass


class NonFiniteLoss(RuntimeStageError):
    pass


class EmptyPartition(ValidationError):
    pass


class MultiClassImage(ValidationError):
    pass


class NoLabeledPixels(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass
