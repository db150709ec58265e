# app/errors.py


class SynthError(Exception):
    """Base error of the synthesis stack. `exit_code` is what the CLI returns."""

    exit_code = 4


class InvalidInputError(SynthError, ValueError):
    exit_code = 2


class VolumeFormatError(InvalidInputError):
    pass


class VolumeIOError(SynthError):
    exit_code = 3

    def __init__(self, path, cause: Exception):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"I/O failure on {self.path}: {cause}")


class StageError(SynthError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", SynthError.exit_code)
        super().__init__(f"Stage '{stage}' failed: {cause}")
