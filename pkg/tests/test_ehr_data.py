import itertools

import numpy as np
import pytest
from conftest import row
from hypothesis import given
from hypothesis import strategies as st
from oracles import smiles_counts

from dnmdr.ehr import (
    CodeVocabulary,
    DDITable,
    SynthConfig,
    build_cohort,
    build_ddi_adjacency,
    build_ehr_adjacency,
    build_vocabularies,
    cohort_rows,
    decode_multihot,
    encode_multihot,
    generate_synthetic_cohort,
    parse_molecule,
    parse_visit_lines,
    read_ddi_file,
    read_smiles_file,
    read_visit_file,
    split_cohort,
    write_visit_file,
)
from dnmdr.ehr.records import apply_medication_mapping
from dnmdr.ehr.smiles import AROMATIC, DOUBLE, SINGLE, TRIPLE
from dnmdr.errors import ConfigError, IngestionError, MoleculeParseError, VocabularyError

# -- vocabularies and ingestion --------------------------------------------


def test_vocabulary_is_lexicographic():
    vocabs = build_vocabularies([row("p", 1, ["4019", "2749"])])
    assert len(vocabs.diagnosis) == 2
    assert vocabs.diagnosis.index("2749") == 0
    assert vocabs.diagnosis.index("4019") == 1


def test_same_rows_give_identical_vocabularies():
    rows = [row("p", 1, ["b", "a"], ["x"], ["m2", "m1"]), row("q", 1, ["c"], [], ["m1"])]
    assert build_vocabularies(rows) == build_vocabularies(list(reversed(rows)))


def test_unknown_code_lists_all_offenders():
    vocab = CodeVocabulary.from_codes("diagnosis", ["a", "b"])
    with pytest.raises(VocabularyError) as err:
        vocab.indices(["a", "zz", "yy"])
    assert set(err.value.codes) == {"zz", "yy"}


def test_empty_rows_rejected():
    with pytest.raises(IngestionError):
        build_vocabularies([])


def test_parse_errors_carry_file_and_line():
    lines = ["# header", "p\t1\tD1\tP1\tM1", "p\tx\tD1\t\t"]
    with pytest.raises(IngestionError, match=r"visits.tsv:3"):
        parse_visit_lines(lines, "visits.tsv")


def test_visit_without_diagnosis_rejected():
    with pytest.raises(IngestionError, match="no diagnosis"):
        parse_visit_lines(["p\t1\t\tP1\tM1"])


def test_missing_trailing_fields_are_empty_sets():
    (r,) = parse_visit_lines(["p\t1\tD1"])
    assert r.procedures == frozenset() and r.medications == frozenset()


def test_patient_ordinals_must_be_contiguous():
    with pytest.raises(IngestionError):
        build_cohort([row("p", 1, ["a"]), row("p", 3, ["b"])])


def test_visit_file_round_trip(tmp_path):
    rows = [row("p", 1, ["a", "b"], ["x"], ["m"]), row("p", 2, ["a"], [], []), row("q", 1, ["c"], ["y"], ["m", "n"])]
    path = tmp_path / "v.tsv"
    write_visit_file(path, rows)
    assert read_visit_file(path) == rows
    assert cohort_rows(build_cohort(read_visit_file(path))) == rows


def test_medication_mapping_drops_unmapped(caplog):
    rows = [row("p", 1, ["a"], [], ["ndc1", "ndc2", "ndc3"])]
    mapped, dropped = apply_medication_mapping(rows, {"ndc1": "A01", "ndc2": "A01"})
    assert mapped[0].medications == frozenset({"A01"})
    assert dropped == 1


def test_ddi_and_smiles_readers(tmp_path):
    (tmp_path / "d.tsv").write_text("b\ta\t2\na\tb\t1\n# c\n")
    table = read_ddi_file(tmp_path / "d.tsv")
    assert table.rows == (("a", "b", 1),)
    (tmp_path / "d2.tsv").write_text("a\tb\n")
    with pytest.raises(IngestionError, match="d2.tsv:1"):
        read_ddi_file(tmp_path / "d2.tsv")
    (tmp_path / "s.tsv").write_text("M1\tCCO\n")
    assert read_smiles_file(tmp_path / "s.tsv") == {"M1": "CCO"}


# -- multi-hot --------------------------------------------------------------

VOCAB5 = CodeVocabulary.from_codes("medication", ["a", "b", "c", "d", "e"])


def test_multihot_examples():
    assert encode_multihot([], VOCAB5).tolist() == [0, 0, 0, 0, 0]
    assert encode_multihot(VOCAB5.codes, VOCAB5).tolist() == [1, 1, 1, 1, 1]
    assert VOCAB5.index("d") == 3
    assert encode_multihot(["d"], VOCAB5).tolist() == [0, 0, 0, 1, 0]


@given(st.sets(st.sampled_from(VOCAB5.codes)))
def test_multihot_round_trip(codes):
    assert decode_multihot(encode_multihot(codes, VOCAB5), VOCAB5) == frozenset(codes)


# -- drug graphs ------------------------------------------------------------


def _meds_cohort(visits, meds=("a", "b", "c", "d")):
    rows = [row(f"p{i}", 1, ["g"], [], v) for i, v in enumerate(visits)]
    rows.append(row("vocab", 1, ["g"], [], meds))
    cohort = build_cohort(rows)
    return cohort.subset(cohort.patients[:-1])


def test_ehr_adjacency_single_visit():
    a = build_ehr_adjacency(_meds_cohort([["a", "b"]]))
    expected = np.zeros((4, 4))
    expected[0, 1] = expected[1, 0] = 1
    assert np.array_equal(a, expected)


def test_ehr_adjacency_disjoint_visits():
    assert not build_ehr_adjacency(_meds_cohort([["a"], ["b"]])).any()


def test_ehr_adjacency_matches_pair_oracle(rng):
    meds = ["a", "b", "c", "d"]
    visits = [[m for m in meds if rng.random() < 0.5] for _ in range(5)]
    a = build_ehr_adjacency(_meds_cohort(visits))
    for i, j in itertools.product(range(4), repeat=2):
        together = any(meds[i] in v and meds[j] in v for v in visits)
        assert a[i, j] == (1.0 if i != j and together else 0.0)
    assert np.array_equal(a, a.T) and not np.diag(a).any()


def test_ddi_adjacency_examples():
    vocab = CodeVocabulary.from_codes("medication", ["a", "b", "c"])
    assert not build_ddi_adjacency(DDITable.from_rows([]), vocab).matrix.any()
    a = build_ddi_adjacency(DDITable.from_rows([("a", "b", 1)]), vocab, top_k_severities=1).matrix
    assert a[0, 1] == a[1, 0] == 1 and a.sum() == 2


def test_ddi_adjacency_matches_filter_oracle():
    vocab = CodeVocabulary.from_codes("medication", ["a", "b", "c", "d"])
    rows = [("a", "b", 1), ("b", "c", 2), ("c", "d", 3), ("a", "d", 2), ("a", "x", 1)]
    result = build_ddi_adjacency(DDITable.from_rows(rows), vocab, top_k_severities=2)
    oracle = np.zeros((4, 4))
    for x, y, s in rows:
        if s <= 2 and x in vocab and y in vocab:
            oracle[vocab.index(x), vocab.index(y)] = oracle[vocab.index(y), vocab.index(x)] = 1
    assert np.array_equal(result.matrix, oracle)
    assert result.skipped == 1


# -- SMILES -----------------------------------------------------------------


def test_smiles_examples():
    g = parse_molecule("C")
    assert (g.n_atoms, len(g.bonds)) == (1, 0)
    g = parse_molecule("CC")
    assert (g.n_atoms, g.bonds) == (2, ((0, 1, SINGLE),))
    g = parse_molecule("C1CCCCC1")
    assert (g.n_atoms, len(g.bonds)) == (6, 6)
    assert (0, 5, SINGLE) in g.bonds


def test_smiles_bond_types():
    assert {b for _, _, b in parse_molecule("C=CC#N").bonds} == {SINGLE, DOUBLE, TRIPLE}
    assert {b for _, _, b in parse_molecule("c1ccccc1").bonds} == {AROMATIC}


GOLDEN_SMILES = [
    "CC(=O)OC1=CC=CC=C1C(=O)O",  # aspirin
    "CC(C)CC1=CC=C(C=C1)C(C)C(=O)O",  # ibuprofen
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",  # caffeine
    "CC(=O)NC1=CC=C(C=C1)O",  # paracetamol
    "CN(C)C(=N)N=C(N)N",  # metformin
    "OCC1OC(O)C(O)C(O)C1O",  # glucose
    "c1ccc2ccccc2c1",  # naphthalene
    "C1CC1",  # cyclopropane
    "[NH4+].[Cl-]",  # ammonium chloride
    "CCO",
    "O=C=O",
    "C#N",
    "ClC(Cl)(Cl)Cl",
    "c1ccncc1",
    "C1CCC2CCCCC2C1",  # decalin
    "N[C@@H](C)C(=O)O",  # alanine
    "CC(=O)[O-].[NH4+]",
    "C%10CCCCC%10",
    "Brc1ccc(cc1)S(=O)(=O)N",
    "CCN(CC)CCOC(=O)c1ccc(N)cc1",  # procaine
]


@pytest.mark.parametrize("smiles", GOLDEN_SMILES)
def test_smiles_matches_token_count_oracle(smiles):
    g = parse_molecule(smiles)
    assert (g.n_atoms, len(g.bonds)) == smiles_counts(smiles)


@pytest.mark.parametrize("bad", ["", "C(", "C1CC", "C)", "=C", "CX", "C=", "C.", "[Xe]"])
def test_smiles_errors(bad):
    with pytest.raises(MoleculeParseError):
        parse_molecule(bad)


# -- synthetic generator ----------------------------------------------------

SMALL = SynthConfig(n_patients=120)


def test_synthetic_is_deterministic():
    a = generate_synthetic_cohort(SMALL, 7)
    b = generate_synthetic_cohort(SMALL, 7)
    assert cohort_rows(a.cohort) == cohort_rows(b.cohort)
    assert a.ddi_table == b.ddi_table and a.smiles == b.smiles and a.report == b.report
    assert cohort_rows(generate_synthetic_cohort(SMALL, 8).cohort) != cohort_rows(a.cohort)


@pytest.fixture(scope="module")
def synthetic500():
    return generate_synthetic_cohort(SynthConfig(), 7)


def test_planted_associations_hold(synthetic500):
    visits = list(synthetic500.cohort.visits())
    for assoc in synthetic500.report["associations"]:
        with_g = [v for v in visits if assoc["diagnosis"] in v.diagnoses]
        p = sum(assoc["medication"] in v.medications for v in with_g) / len(with_g)
        assert p >= assoc["strength"]
        assert abs(p - assoc["strength"]) <= 0.05


def test_planted_ddi_pairs_never_co_prescribed(synthetic500):
    assert synthetic500.report["ddi_pairs"]
    for a, b in synthetic500.report["ddi_pairs"]:
        assert not any(a in v.medications and b in v.medications for v in synthetic500.cohort.visits())
        assert synthetic500.ddi_table.interacts(a, b)


def test_synthetic_smiles_parse(synthetic500):
    for code, s in synthetic500.smiles.items():
        assert parse_molecule(s, code).n_atoms > 0


def test_synthetic_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        SynthConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        SynthConfig(n_popular_drugs=3, n_ddi_pairs=4).validate()


# -- splits -----------------------------------------------------------------


def _cohort(n):
    return build_cohort([row(f"p{i:03d}", 1, ["a"]) for i in range(n)])


def test_split_sizes_four_one_one():
    train, val, test = split_cohort(_cohort(6), (4 / 6, 1 / 6, 1 / 6), seed=0)
    assert (len(train), len(val), len(test)) == (4, 1, 1)


@pytest.mark.parametrize("ratios", [(1, 0, 0), (0.5, 0.5, 0.5), (0.5, 0.6, -0.1)])
def test_split_rejects_bad_ratios(ratios):
    with pytest.raises(ConfigError):
        split_cohort(_cohort(6), ratios)


def test_split_is_deterministic_partition():
    cohort = _cohort(600)
    a = split_cohort(cohort, seed=3)
    b = split_cohort(cohort, seed=3)
    ids = [[p.patient_id for p in part.patients] for part in a]
    assert ids == [[p.patient_id for p in part.patients] for part in b]
    flat = sum(ids, [])
    assert sorted(flat) == sorted(p.patient_id for p in cohort.patients)
    assert [len(x) for x in ids] == [400, 100, 100]


@given(st.integers(3, 60), st.integers(0, 10_000))
def test_split_sizes_property(n, seed):
    parts = split_cohort(_cohort(n), seed=seed)
    assert sum(len(p) for p in parts) == n and all(len(p) > 0 for p in parts)
    assert abs(len(parts[0]) - n * 4 / 6) <= 1 + (n < 6)
