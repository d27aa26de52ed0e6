import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# small corpus shared by parser, kernel and encoder tests
CORPUS = [
    "C", "CC", "CCO", "CC(=O)Nc1ccccc1", "c1ccccc1", "c1ccncc1", "C1CCCCC1",
    "CCc1ccccc1", "c1ccc(Cc2ccccc2)cc1", "c1ccc(-c2ccccc2)cc1", "c1ccc2ccccc2c1",
    "O=C1CCCCC1", "CCOC(C)C", "c1ccoc1", "c1ccsc1", "c1cc[nH]c1", "C1CCNCC1",
    "CN1CCOCC1", "FC(F)(F)c1ccccc1", "OC(=O)C1CCC(Cl)CC1", "c1ccc2[nH]ccc2c1",
    "C#CC(Br)C=C", "[NH4+]", "[O-]C(=O)CC", "c1ccc2c(c1)oc1ccccc12", "N#Cc1cscn1",
]


def random_perm(n, rng):
    return [int(i) for i in rng.permutation(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def default_bench():
    """Shipped synthetic default: dataset, kept scaffolds and the seed-42 split."""
    from molood.bench.descriptors import build_scaffolds
    from molood.bench.split import SplitConfig, build_split
    from molood.bench.synth import load_gen_config, synth_dataset
    ds = synth_dataset(load_gen_config("default"), 0)
    kept, excluded = build_scaffolds(ds, 10)
    split = build_split(kept, SplitConfig(task_threshold=25), 42, excluded)
    return ds, kept, split


def corpus_dataset(n_copies: int = 1):
    """CORPUS as a labeled dataset with a deterministic synthetic label."""
    from molood.bench.dataset import Dataset, Molecule
    mols = []
    for c in range(n_copies):
        for k, s in enumerate(CORPUS):
            mols.append(Molecule(f"m{c}-{k:02d}", s, float(np.sin(k + 0.3 * c) + 0.1 * len(s))))
    return Dataset(mols)


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
