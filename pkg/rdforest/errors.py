"""
Error hierarchy shared by every rdforest module.

Each error carries a short machine-parseable ``code`` (printed by the CLI as
``error[CODE]: message``) and the process ``exit_code`` it maps to:

    1  usage / configuration problems   (ConfigError, MethodError)
    2  data or numerical problems       (everything else)
"""


class RDForestError(Exception):
    code = "RDFOREST"
    exit_code = 2


class ConfigError(RDForestError):
    """Invalid parameter, option combination or configuration file."""

    code = "CONFIG"
    exit_code = 1


class MethodError(RDForestError):
    """Estimation method cannot be used on this design."""

    code = "METHOD"
    exit_code = 1


class DimensionError(RDForestError):
    code = "DIMENSION"


class EmptySideError(RDForestError):
    """One side of the treatment boundary has no usable observations."""

    code = "EMPTY_SIDE"


class BoundaryError(RDForestError):
    """Point is not on the treatment boundary of the rule."""

    code = "BOUNDARY"


class DomainError(RDForestError):
    """Argument outside the domain of an analytic formula."""

    code = "DOMAIN"


class NumericalError(RDForestError):
    code = "NUMERICAL"


class SingularDesignError(RDForestError):
    """Weighted regression design is rank deficient."""

    code = "SINGULAR"


class PredictionError(RDForestError):
    code = "PREDICTION"


class GeometryError(RDForestError):
    """Buffered evaluation point fell on the wrong side of the boundary."""

    code = "GEOMETRY"


class HarnessError(RDForestError):
    code = "HARNESS"


class IoError(RDForestError):
    code = "IO"
