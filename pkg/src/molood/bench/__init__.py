"""Strict out-of-distribution benchmark construction."""

from .clustering import allocate_quotas, assign_levels, kmeanspp, zscore_per_level
from .dataset import Dataset, Molecule, read_csv, write_csv
from .descriptors import ScaffoldRecord, build_scaffolds, descriptor
from .separation import collapse_rank, sliced_w1, wasserstein1_1d
from .split import DomainSplit, SeparationAudit, audit, build_split, partition

__all__ = [
    "Dataset", "Molecule", "read_csv", "write_csv",
    "ScaffoldRecord", "build_scaffolds", "descriptor",
    "assign_levels", "zscore_per_level", "kmeanspp", "allocate_quotas",
    "wasserstein1_1d", "sliced_w1", "collapse_rank",
    "DomainSplit", "SeparationAudit", "partition", "audit", "build_split",
]
