"""Exception hierarchy shared by all stages."""


class SutureGraspError(Exception):
    """Base class; ``exit_code`` is used by the CLI."""

    exit_code = 1


class MaskFormatError(SutureGraspError):
    exit_code = 3


class EmptyInputError(SutureGraspError):
    exit_code = 4


class TipNotFoundError(SutureGraspError):
    exit_code = 5


class PreconditionError(SutureGraspError, ValueError):
    exit_code = 6


class ParameterRangeError(SutureGraspError, ValueError):
    exit_code = 7


class NonPositiveDisparityError(SutureGraspError, ValueError):
    exit_code = 8


class ReconstructionFailedError(SutureGraspError):
    exit_code = 9


class NoPathError(SutureGraspError):
    exit_code = 10


class ReserveExceedsCurveError(SutureGraspError, ValueError):
    exit_code = 11


class InvalidTransformError(SutureGraspError, ValueError):
    exit_code = 12


class SceneSpecError(SutureGraspError, ValueError):
    exit_code = 13


class FrustumError(SutureGraspError, ValueError):
    exit_code = 14


class ShapeMismatchError(SutureGraspError, ValueError):
    exit_code = 15


class ConfigError(SutureGraspError):
    exit_code = 2
