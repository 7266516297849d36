class SpikeRPEError(Exception):
    """Base class for package errors."""


class DimensionError(SpikeRPEError, ValueError):
    pass


class ConfigError(SpikeRPEError, ValueError):
    pass


class NumericError(SpikeRPEError, ArithmeticError):
    pass


class TrainingDivergence(SpikeRPEError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}" + (f": {message}" if message else ""))


class LUTBuildError(SpikeRPEError):
    pass
