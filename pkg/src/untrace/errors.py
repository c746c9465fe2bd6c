"""Exception hierarchy shared by all modules.

Exit codes are stable so scripted pipelines can branch on them:
0 success, 2 precondition/contract error, 3 bench-calibration failure,
4 I/O failure, 1 anything else.
"""


class UntraceError(Exception):
    exit_code = 1


class ContractError(UntraceError):
    """A precondition or postcondition of a public operation was violated."""

    exit_code = 2


class CalibrationError(UntraceError):
    """The bench failed its clean-accuracy gate; ASR numbers would be meaningless."""

    exit_code = 3


class DataIOError(UntraceError):
    """File could not be read, decoded, or written."""

    exit_code = 4


class CheckpointError(ContractError):
    """Checkpoint/archive is corrupted or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class UndefinedCorrelationError(ContractError):
    """Correlation is undefined: one of the vectors has zero variance."""


class TrainingDivergedError(UntraceError):
    """Loss became non-finite; carries the last per-term values for diagnosis."""

    def __init__(self, message, terms=None):
        super().__init__(message)
        self.terms = dict(terms or {})


class StageError(UntraceError):
    """A pipeline stage failed; completed stage outputs are left on disk."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        if isinstance(cause, UntraceError):
            self.exit_code = cause.exit_code
