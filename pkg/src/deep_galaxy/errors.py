"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: config/usage errors -> 1,
data errors -> 2, numeric divergence -> 3.
"""


class DeepGalaxyError(Exception):
    """Base class for all package errors."""


class InvalidShapeError(DeepGalaxyError, ValueError):
    pass


class NonFiniteError(DeepGalaxyError, ArithmeticError):
    pass


class ConfigError(DeepGalaxyError, ValueError):
    pass


class DataError(DeepGalaxyError):
    pass


class ImageFormatError(DataError):
    pass


class NumericDivergenceError(DeepGalaxyError, ArithmeticError):
    """Training produced a non-finite loss.

    ``iteration`` is the iteration that diverged; ``last_good`` the last
    iteration that completed with a finite loss (0 if none did).
    """

    def __init__(self, iteration, last_good=0, run_index=None):
        self.iteration = iteration
        self.last_good = last_good
        self.run_index = run_index
        where = f"iteration {iteration}"
        if run_index is not None:
            where = f"run {run_index}, " + where
        super().__init__(
            f"non-finite loss at {where} (last good iteration: {last_good})"
        )


class CheckpointError(DeepGalaxyError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass
