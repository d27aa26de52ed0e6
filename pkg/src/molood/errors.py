"""Exception types raised across the package."""


class MoloodError(Exception):
    """Base class for all package errors."""


class RejectedFeature(MoloodError, ValueError):
    """SMILES input uses syntax outside the supported subset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class LengthMismatch(MoloodError, ValueError):
    pass


class DimensionMismatch(MoloodError, ValueError):
    pass


class EmptyInput(MoloodError, ValueError):
    pass


class EmptyScaffold(MoloodError, ValueError):
    pass


class AcyclicScaffold(MoloodError, ValueError):
    pass


class KTooLarge(MoloodError, ValueError):
    pass


class InfeasibleQuota(MoloodError, ValueError):
    pass


class NotEnoughClusters(MoloodError, ValueError):
    pass


class TemplateParseError(MoloodError, ValueError):
    pass


class BadConfig(MoloodError, ValueError):
    pass


class NonScalarLoss(MoloodError, ValueError):
    pass


class NaNGradient(MoloodError, FloatingPointError):
    pass


class BatchTooSmall(MoloodError, ValueError):
    pass


class EmptySet(MoloodError, ValueError):
    pass


class EmptyTargets(MoloodError, ValueError):
    pass


class PoolTooSmall(MoloodError, ValueError):
    pass


class GroupTooSmall(MoloodError, ValueError):
    pass


class UnknownPolicy(MoloodError, ValueError):
    pass


class CheckpointError(MoloodError, ValueError):
    pass


class ManifestMismatch(MoloodError, ValueError):
    pass


class RunLocked(MoloodError, RuntimeError):
    pass
