"""Exception hierarchy shared by every pipeline stage.

Each error knows its short code, the module that raised it and the process
exit status the command line should report for it.
"""


class NegMixError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message, module="core", field=None):
        super().__init__(message)
        self.message = message
        self.module = module
        self.field = field

    @property
    def qualified_code(self):
        return f"{self.module}.{self.code}"

    def one_line(self):
        """Single machine-parsable line used by the CLI on failure"""
        text = " ".join(str(self.message).split()).replace('"', "'")
        return f'error code={self.qualified_code} message="{text}"'


class InvalidArgumentError(NegMixError, ValueError):
    code = "invalid-argument"
    exit_code = 2


class ConfigError(NegMixError):
    code = "config-error"
    exit_code = 2

    def __init__(self, message, field=None, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message, module="cli", field=field)
        self.line = line


class StorageError(NegMixError):
    code = "io-error"
    exit_code = 3


class FormatError(NegMixError):
    code = "format-error"
    exit_code = 4


class UnsupportedVersionError(FormatError):
    code = "unsupported-version"


class NumericError(NegMixError):
    code = "numeric-error"
    exit_code = 5

    def __init__(self, message, module="toy_restorer", step=None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message, module=module)
        self.step = step
