import numpy as np
import pytest
from hypothesis import given, strategies as st

from molood.errors import RejectedFeature
from molood.molgraph import (ACYCLIC_KEY, canonical_key, fragment, implicit_h_count,
                             murcko_scaffold, parse_smiles, to_smiles)

from conftest import CORPUS, random_perm


def test_single_atom():
    g = parse_smiles("C")
    assert (g.num_atoms, g.num_bonds) == (1, 0)


def test_benzene_counts():
    g = parse_smiles("c1ccccc1")
    assert g.num_atoms == 6 and g.num_bonds == 6
    assert all(a.aromatic for a in g.atoms)
    assert all(order == 1.5 for _, _, order in g.bonds)
    assert g.cyclomatic == 1


def test_acetanilide_counts():
    # hand count: methyl C, carbonyl C, O, N and six ring carbons; 4 chain bonds + 6 ring bonds
    g = parse_smiles("CC(=O)Nc1ccccc1")
    assert (g.num_atoms, g.num_bonds, g.cyclomatic) == (10, 10, 1)


def test_brackets_charges_isotopes_and_percent_rings():
    g = parse_smiles("[13CH3][N+](C)(C)C")
    assert g.atoms[1].charge == 1 and g.atoms[0].element == "C"
    assert parse_smiles("C%12CCCCC%12").cyclomatic == 1
    assert parse_smiles("ClCBr").num_atoms == 3


@pytest.mark.parametrize("text,offset", [("C/C=C/C", 1), ("C[C@H](O)N", 1), ("CXC", 1),
                                         ("C(C", 1), ("C1CC", 1), ("CC)", 2)])
def test_rejections_name_offset(text, offset):
    with pytest.raises(RejectedFeature) as err:
        parse_smiles(text)
    assert "byte" in str(err.value)
    assert err.value.offset >= 0


def test_implicit_h():
    assert implicit_h_count(parse_smiles("C"), 0) == 4
    assert implicit_h_count(parse_smiles("O"), 0) == 2
    benz = parse_smiles("c1ccccc1")
    assert [implicit_h_count(benz, i) for i in range(6)] == [1] * 6
    assert implicit_h_count(parse_smiles("c1cc[nH]c1"), 3) >= 0


def test_murcko_examples():
    assert murcko_scaffold(parse_smiles("CCO")).num_atoms == 0
    assert canonical_key(murcko_scaffold(parse_smiles("CCc1ccccc1"))) == \
        canonical_key(parse_smiles("c1ccccc1"))
    dpm = parse_smiles("c1ccc(Cc2ccccc2)cc1")
    assert canonical_key(murcko_scaffold(dpm)) == canonical_key(dpm)


def test_murcko_keeps_exocyclic_double_bond():
    s = murcko_scaffold(parse_smiles("CCC1CCCC(=O)C1"))
    assert s.num_atoms == 7


def test_acyclic_key_reserved():
    assert ACYCLIC_KEY == "ACYCLIC"


def test_canonical_key_basic():
    assert canonical_key(parse_smiles("CCO")) == canonical_key(parse_smiles("OCC"))
    assert canonical_key(parse_smiles("c1ccccc1")) != canonical_key(parse_smiles("c1ccncc1"))


def test_canonical_key_permutation_100_x_20(rng):
    graphs = [parse_smiles(s) for s in CORPUS[:20]]
    for g in graphs:
        key = canonical_key(g)
        for _ in range(100):
            assert canonical_key(g.permute(random_perm(g.num_atoms, rng))) == key


def test_fragment_examples():
    assert len(fragment(parse_smiles("CC"))) == 1
    frags = fragment(parse_smiles("CCc1ccccc1"))
    assert sorted(len(f.atoms) for f in frags) == [2, 6]
    assert len(fragment(parse_smiles("CCOC(C)C"))) == 3


@pytest.mark.parametrize("smiles", CORPUS)
def test_fragment_partition(smiles):
    g = parse_smiles(smiles)
    atoms = [a for f in fragment(g) for a in f.atoms]
    assert sorted(atoms) == list(range(g.num_atoms))


@pytest.mark.parametrize("smiles", CORPUS)
def test_round_trip_and_idempotent_scaffold(smiles):
    g = parse_smiles(smiles)
    again = parse_smiles(to_smiles(g))
    assert canonical_key(again) == canonical_key(g)
    s = murcko_scaffold(g)
    assert canonical_key(murcko_scaffold(s)) == canonical_key(s)


@given(st.sampled_from(CORPUS), st.integers(0, 2**32 - 1))
def test_key_permutation_property(smiles, seed):
    g = parse_smiles(smiles)
    perm = random_perm(g.num_atoms, np.random.default_rng(seed))
    assert canonical_key(g.permute(perm)) == canonical_key(g)


@given(st.lists(st.sampled_from(["C", "N", "O", "c1ccccc1", "C1CC1", "(C)", "(O)"]),
                min_size=1, max_size=6))
def test_generated_chains_round_trip(parts):
    text = "".join(parts)
    if text.startswith("("):
        text = "C" + text
    g = parse_smiles(text)
    assert canonical_key(parse_smiles(to_smiles(g))) == canonical_key(g)
    assert sorted(a for f in fragment(g) for a in f.atoms) == list(range(g.num_atoms))
