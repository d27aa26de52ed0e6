"""Labeled molecule collections and the ``id,smiles,property,value`` CSV schema."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from ..errors import MoloodError, RejectedFeature
from ..molgraph import MolGraph, parse_smiles

CSV_HEADER = ["id", "smiles", "property", "value"]


class DatasetError(MoloodError, ValueError):
    """Invalid dataset rows; ``rows`` holds 1-based data row numbers."""

    def __init__(self, message: str, rows: list[int]):
        shown = ", ".join(map(str, rows[:20])) + (" ..." if len(rows) > 20 else "")
        super().__init__(f"{message}: rows {shown}")
        self.rows = rows


@dataclass(frozen=True)
class Molecule:
    id: str
    smiles: str
    label: float


@dataclass
class Dataset:
    molecules: list[Molecule]
    property_name: str = "y"
    unit: str = ""
    provenance: dict = field(default_factory=lambda: {"kind": "ingested"})

    def __post_init__(self):
        ids = [m.id for m in self.molecules]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate molecule ids", [k + 1 for k, i in enumerate(ids)
                                                          if ids.index(i) != k])
        bad = [k + 1 for k, m in enumerate(self.molecules) if not math.isfinite(m.label)]
        if bad:
            raise DatasetError("non-finite labels", bad)

    def __len__(self):
        return len(self.molecules)

    @cached_property
    def graphs(self) -> dict[str, MolGraph]:
        out, bad = {}, []
        for k, m in enumerate(self.molecules):
            try:
                out[m.id] = parse_smiles(m.smiles)
            except RejectedFeature:
                bad.append(k + 1)
        if bad:
            raise DatasetError("unparseable SMILES", bad)
        return out

    @cached_property
    def by_id(self) -> dict[str, Molecule]:
        return {m.id: m for m in self.molecules}

    def labels(self, ids) -> list[float]:
        return [self.by_id[i].label for i in ids]


def read_csv(path: str | Path, property_name: str | None = None) -> Dataset:
    """Read the dataset CSV; selects one property (the first seen by default)."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != CSV_HEADER:
        raise DatasetError(f"header must be {','.join(CSV_HEADER)}", [0])
    mols, bad, unit = [], [], ""
    for k, row in enumerate(reader, start=1):
        if len(row) != 4:
            bad.append(k)
            continue
        mid, smi, prop, val = row
        if property_name is None:
            property_name = prop
        if prop != property_name:
            continue
        try:
            value = float(val)
            parse_smiles(smi)
        except (ValueError, RejectedFeature):
            bad.append(k)
            continue
        if not math.isfinite(value):
            bad.append(k)
            continue
        mols.append(Molecule(mid, smi, value))
    if bad:
        raise DatasetError("invalid dataset rows", bad)
    return Dataset(mols, property_name or "y", unit)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for m in ds.molecules:
            w.writerow([m.id, m.smiles, ds.property_name, repr(float(m.label))])
