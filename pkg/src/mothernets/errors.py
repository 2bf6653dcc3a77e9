"""Exception hierarchy.

Every error carries a stable ``code`` used by the CLI as an error prefix.
``ValidationError`` subclasses map to exit status 2, everything else to 1.
"""


class MotherNetsError(Exception):
    code = "E_RUNTIME"


class ValidationError(MotherNetsError, ValueError):
    code = "E_VALIDATION"


class InvalidArch(ValidationError):
    code = "E_INVALID_ARCH"


class HeterogeneousKind(ValidationError):
    code = "E_HETEROGENEOUS_KIND"


class MixedEntryKind(ValidationError):
    code = "E_MIXED_ENTRY_KIND"


class EmptyCluster(ValidationError):
    code = "E_EMPTY_CLUSTER"


class ActivationMismatch(ValidationError):
    code = "E_ACTIVATION_MISMATCH"


class InvalidG(ValidationError):
    code = "E_INVALID_G"


class InvalidTau(ValidationError):
    code = "E_INVALID_TAU"


class ShapeMismatch(ValidationError):
    code = "E_SHAPE_MISMATCH"


class NonFiniteValue(MotherNetsError, ArithmeticError):
    code = "E_NON_FINITE"


class ConvTrainingUnsupported(ValidationError):
    code = "E_CONV_TRAINING"


class StrategyUnsupported(ValidationError):
    code = "E_STRATEGY_UNSUPPORTED"


class UnhatchableSpec(ValidationError):
    code = "E_UNHATCHABLE"


class ActivationNotIdempotent(ValidationError):
    code = "E_ACTIVATION_NOT_IDEMPOTENT"


class WidthMismatch(ValidationError):
    code = "E_WIDTH_MISMATCH"


class InvalidReplicationMap(ValidationError):
    code = "E_INVALID_REPLICATION_MAP"


class EvenEnlargement(ValidationError):
    code = "E_EVEN_ENLARGEMENT"


class MissingProvenance(ValidationError):
    code = "E_MISSING_PROVENANCE"


class UnsupportedTopology(ValidationError):
    code = "E_UNSUPPORTED_TOPOLOGY"


class InsufficientTrials(ValidationError):
    code = "E_INSUFFICIENT_TRIALS"


class AssumptionViolated(ValidationError):
    code = "E_ASSUMPTION_VIOLATED"


class WeightsFormatError(ValidationError):
    code = "E_WEIGHTS_FORMAT"
