"""Exception hierarchy shared by all modules."""


class DNProbeError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(DNProbeError):
    pass


class NormalizationError(DNProbeError):
    pass


class ShapeError(DNProbeError):
    pass


class ParameterError(DNProbeError):
    pass


class AuditError(DNProbeError):
    pass


class NotCurlFreeError(DNProbeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(DNProbeError):
    pass


class DataError(DNProbeError):
    pass


class NonlinearSolverError(DNProbeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class OverflowGuardError(DNProbeError):
    pass


class CoverageError(DNProbeError):
    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class BranchError(DNProbeError):
    pass


class ModelClassError(DNProbeError):
    def __init__(self, message: str, condition: str):
        super().__init__(message)
        self.condition = condition


class PresetError(DNProbeError):
    pass
