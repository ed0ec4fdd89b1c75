"""Exception types shared across the package.

Every error carries a short upper-case ``code`` so the command line can emit
a machine-parsable failure line.
"""


class EpiTopoError(Exception):
    code = "ERROR"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        if self.context:
            extra = " ".join(f"{k}={v}" for k, v in self.context.items())
            msg = f"{msg} ({extra})" if msg else extra
        return msg


class InvalidSpec(EpiTopoError, ValueError):
    code = "INVALID_SPEC"


class DisconnectedAfterRetries(EpiTopoError, RuntimeError):
    code = "DISCONNECTED_AFTER_RETRIES"


class ParseError(EpiTopoError, ValueError):
    code = "PARSE_ERROR"


class SelfLoopError(ParseError):
    code = "SELF_LOOP"


class RateTooLarge(EpiTopoError, ValueError):
    code = "RATE_TOO_LARGE"


class NegativeEntry(EpiTopoError, ValueError):
    code = "NEGATIVE_ENTRY"


class BetaExceedsPopulation(EpiTopoError, ValueError):
    code = "BETA_EXCEEDS_POPULATION"


class UnstableStep(EpiTopoError, FloatingPointError):
    code = "UNSTABLE_STEP"


class SeedOutOfRange(EpiTopoError, IndexError):
    code = "SEED_OUT_OF_RANGE"


class ShapeMismatch(EpiTopoError, ValueError):
    code = "SHAPE_MISMATCH"


class DomainError(EpiTopoError, ValueError):
    code = "DOMAIN_ERROR"


class NotScalar(EpiTopoError, ValueError):
    code = "NOT_SCALAR"


class GammaOutOfRange(EpiTopoError, ValueError):
    code = "GAMMA_OUT_OF_RANGE"


class NonFiniteLoss(EpiTopoError, FloatingPointError):
    code = "NON_FINITE_LOSS"


class EigenFailure(EpiTopoError, RuntimeError):
    code = "EIGEN_FAILURE"


class ConfigError(EpiTopoError, ValueError):
    code = "CONFIG_ERROR"
