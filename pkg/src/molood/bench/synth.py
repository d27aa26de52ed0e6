"""Seeded synthetic property datasets built from scaffold templates.

A template is SMILES with ``{R}`` placeholders; each placeholder is filled
with a substituent written as a branch (``(CC)``) or removed for hydrogen
(empty string). Labels follow

    y = a * mean_polarizability + b * ring_count + offset(family)
        + c * sin(pi * rotatable_ratio) + N(0, sigma^2)

with every constant taken from the generator config.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..errors import RejectedFeature, TemplateParseError
from ..molgraph import parse_smiles
from .dataset import Dataset, Molecule
from .descriptors import mean_polarizability, rotatable_ratio


@dataclass
class Family:
    name: str
    offset: float
    templates: list[str]
    count: int  # molecules per template


@dataclass
class GenConfig:
    families: list[Family]
    substituents: list[str]
    a: float = 1.0
    b: float = 0.25
    c: float = 0.5
    sigma: float = 0.05
    property_name: str = "y"
    unit: str = "au"

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["families"] = [Family(**f) for f in d["families"]]
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_gen_config(name_or_path: str) -> GenConfig:
    """Load a shipped generator config by name (``default``/``planted``) or from a path."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        text = p.read_text()
    else:
        text = resources.files("molood.data").joinpath(f"synthetic_{name_or_path}.json").read_text()
    return GenConfig.from_dict(json.loads(text))


def _fill(template: str, subs: tuple[str, ...]) -> str:
    parts = template.split("{R}")
    out = parts[0]
    for s, rest in zip(subs, parts[1:]):
        out += (f"({s})" if s else "") + rest
    return out


def molecule_label(smiles: str, offset: float, cfg: GenConfig) -> float:
    g = parse_smiles(smiles)
    return (cfg.a * mean_polarizability(g) + cfg.b * g.cyclomatic + offset
            + cfg.c * math.sin(math.pi * rotatable_ratio(g)))


def synth_dataset(cfg: GenConfig, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    mols: list[Molecule] = []
    for fam in cfg.families:
        for t_idx, template in enumerate(fam.templates):
            n_sites = template.count("{R}")
            combos = list(itertools.product(cfg.substituents, repeat=n_sites))
            order = rng.permutation(len(combos))
            picks = [combos[order[k % len(combos)]] for k in range(fam.count)]
            for k, subs in enumerate(picks):
                smi = _fill(template, subs)
                try:
                    base = molecule_label(smi, fam.offset, cfg)
                except RejectedFeature as exc:
                    raise TemplateParseError(f"template {template!r} -> {smi!r}: {exc}") from exc
                y = base + (cfg.sigma * rng.standard_normal() if cfg.sigma > 0 else 0.0)
                mols.append(Molecule(f"{fam.name}-{t_idx}-{k:04d}", smi, float(y)))
    return Dataset(mols, cfg.property_name, cfg.unit,
                   {"kind": "synthetic", "seed": seed, "config": cfg.to_dict()})
