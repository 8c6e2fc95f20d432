import json
import math

import numpy as np
import pytest
from conftest import row
from hypothesis import given
from hypothesis import strategies as st
from oracles import masked_softmax_row

from dnmdr.dynamic_graph import (
    ALLOWED,
    FORBIDDEN,
    SELF,
    NodeType,
    build_dynamic_network,
    build_mask,
    build_snapshot,
    collect_cooccurrence,
    conditional_weights,
    dump_network,
    snapshot_adjacency,
)
from dnmdr.ehr import SynthConfig, build_cohort, generate_synthetic_cohort
from dnmdr.errors import NumericsError

D, P, M = NodeType.DIAGNOSIS, NodeType.PROCEDURE, NodeType.MEDICATION


def test_counts_single_visit():
    cohort = build_cohort([row("p", 1, ["g", "h"], [], ["m"])])
    stats = collect_cooccurrence(cohort)
    vocabs = cohort.vocabularies
    g, m = vocabs.diagnosis.index("g"), vocabs.medication.index("m")
    assert stats.count_pair((m, M), (g, D)) == 1
    assert stats.count_pair((g, D), (m, M)) == 1
    assert stats.count_single(g, D) == 1


def test_absent_code_has_zero_count():
    rows = [row("p", 1, ["g"], [], ["m"]), row("q", 1, ["h"], [], [])]
    cohort = build_cohort(rows)
    train = cohort.subset(cohort.patients[:1])
    stats = collect_cooccurrence(train)
    assert stats.count_single(cohort.vocabularies.diagnosis.index("h"), D) == 0


def test_counts_match_set_intersection_oracle(rng):
    diags, procs, meds = ["a", "b", "c"], ["x", "y"], ["m", "n", "o"]
    rows = []
    for i in range(10):
        pick = lambda pool: [c for c in pool if rng.random() < 0.5]  # noqa: E731
        rows.append(row(f"p{i}", 1, pick(diags) or ["a"], pick(procs), pick(meds)))
    rows.append(row("all", 1, diags, procs, meds))
    cohort = build_cohort(rows)
    stats = collect_cooccurrence(cohort)
    vocabs = cohort.vocabularies
    visits = list(cohort.visits())
    for m in meds:
        mi = vocabs.medication.index(m)
        assert stats.count_single(mi, M) == sum(m in v.medications for v in visits)
        for g in diags:
            oracle = sum(1 for v in visits if {m, g} <= (v.medications | v.diagnoses))
            assert stats.count_pair((mi, M), (vocabs.diagnosis.index(g), D)) == oracle
        for p in procs:
            oracle = sum(1 for v in visits if m in v.medications and p in v.procedures)
            assert stats.count_pair((mi, M), (vocabs.procedure.index(p), P)) == oracle


def test_mask_examples():
    assert build_mask([D, D]).tolist() == [[SELF, FORBIDDEN], [FORBIDDEN, SELF]]
    assert build_mask([D, M]).tolist() == [[SELF, ALLOWED], [ALLOWED, SELF]]
    assert build_mask([P]).tolist() == [[SELF]]
    mask = build_mask([D, P, M, M])
    assert mask[0, 1] == FORBIDDEN and mask[2, 3] == FORBIDDEN and mask[1, 2] == ALLOWED


def _four_visit_stats():
    # m with g in 2 of m's 4 visits
    rows = [
        row("p1", 1, ["g"], [], ["m"]),
        row("p2", 1, ["g"], [], ["m"]),
        row("p3", 1, ["h"], [], ["m"]),
        row("p4", 1, ["h"], [], ["m"]),
    ]
    cohort = build_cohort(rows)
    return cohort, collect_cooccurrence(cohort)


def test_conditional_weight_half():
    cohort, stats = _four_visit_stats()
    g, m = cohort.vocabularies.diagnosis.index("g"), cohort.vocabularies.medication.index("m")
    p = conditional_weights([g, m], [D, M], stats)
    assert p[1, 0] == 0.5  # n(m, g) / n(m)
    assert p[0, 1] == 1.0  # n(m, g) / n(g): g always appears with m
    assert p[0, 0] == p[1, 1] == 0.0
    assert conditional_weights([g, m], [D, M], stats, denominator="column")[1, 0] == 1.0


def test_unseen_code_row_is_zero():
    rows = [row("p", 1, ["g"], [], ["m"]), row("q", 1, ["h"], [], ["m"])]
    cohort = build_cohort(rows)
    stats = collect_cooccurrence(cohort.subset(cohort.patients[:1]))
    v = cohort.vocabularies
    p = conditional_weights([v.diagnosis.index("h"), v.medication.index("m")], [D, M], stats)
    assert not p[0].any()


def test_softmax_examples():
    mask = build_mask([M, D, D])
    p = np.array([[0, 0.5, 0.5], [0, 0, 0], [0, 0, 0]], dtype=float)
    a = snapshot_adjacency(p, mask)
    assert a[0].tolist() == [1.0, 0.5, 0.5]

    mask = build_mask([D, D])
    assert snapshot_adjacency(np.zeros((2, 2)), mask).tolist() == [[1, 0], [0, 1]]

    mask = build_mask([M, D, D])
    a = snapshot_adjacency(np.array([[0, 1.0, 0.0], [0, 0, 0], [0, 0, 0]]), mask)
    e = math.e
    assert a[0, 1] == pytest.approx(e / (e + 1), abs=1e-12)
    assert a[0, 2] == pytest.approx(1 / (e + 1), abs=1e-12)
    assert round(a[0, 1], 3) == 0.731 and round(a[0, 2], 3) == 0.269


def test_non_finite_weights_raise():
    with pytest.raises(NumericsError):
        snapshot_adjacency(np.array([[0, np.nan], [0, 0]]), build_mask([D, M]))


def test_single_visit_network_has_no_medication_nodes():
    cohort = build_cohort([row("p", 1, ["g"], ["x"], ["m"])])
    net = build_dynamic_network(cohort.patients[0], collect_cooccurrence(cohort))
    assert len(net) == 1
    snap = net.snapshots[0]
    assert snap.n_nodes == 2 and M not in snap.node_types.tolist()


def test_medications_lag_one_visit():
    rows = [
        row("p", 1, ["a"], ["x"], ["m1"]),
        row("p", 2, ["b"], [], ["m2", "m3"]),
        row("p", 3, ["c"], ["y"], ["m1"]),
    ]
    cohort = build_cohort(rows)
    net = build_dynamic_network(cohort.patients[0], collect_cooccurrence(cohort))
    assert len(net) == 3
    vocabs = cohort.vocabularies
    meds = lambda s: {vocabs.medication.lookup(int(c)) for c, t in zip(s.codes, s.node_types) if t == M}  # noqa: E731
    assert meds(net.snapshots[0]) == set()
    assert meds(net.snapshots[1]) == {"m1"}
    assert meds(net.snapshots[2]) == {"m2", "m3"}


@pytest.fixture(scope="module")
def synthetic():
    data = generate_synthetic_cohort(SynthConfig(n_patients=200), 3)
    return data.cohort, collect_cooccurrence(data.cohort)


def test_random_patient_rows_match_oracle(synthetic):
    cohort, stats = synthetic
    patient = next(p for p in cohort.patients if len(p) >= 4)
    for snap in build_dynamic_network(patient, stats).snapshots:
        for i in range(snap.n_nodes):
            expected = masked_softmax_row(snap.weights[i].tolist(), snap.mask[i].tolist(), i)
            assert np.allclose(snap.adjacency[i], expected, atol=1e-12, rtol=0)


def test_snapshot_invariants_all_patients(synthetic):
    cohort, stats = synthetic
    for patient in cohort.patients:
        for snap in build_dynamic_network(patient, stats).snapshots:
            a, mask = snap.adjacency, snap.mask
            assert np.all(np.diag(a) == 1.0)
            assert np.all(a[mask == FORBIDDEN] == 0.0)
            sums = np.where(mask == ALLOWED, a, 0).sum(axis=1)
            has_allowed = (mask == ALLOWED).any(axis=1)
            assert np.allclose(sums[has_allowed], 1.0, atol=1e-9)
            assert np.all(sums[~has_allowed] == 0.0)


def test_prob_ablation_all_ones(synthetic):
    cohort, stats = synthetic
    for patient in cohort.patients[:20]:
        for snap in build_dynamic_network(patient, stats, all_ones=True).snapshots:
            assert np.array_equal(snap.adjacency, np.ones((snap.n_nodes, snap.n_nodes)))


@given(
    st.lists(st.floats(0, 1), min_size=3, max_size=3),
    st.integers(0, 2),
    st.floats(0.001, 0.5),
)
def test_adjacency_monotone_in_own_weight(weights, j, bump):
    mask = build_mask([M, D, D, P])
    p = np.zeros((4, 4))
    p[0, 1:] = weights
    before = snapshot_adjacency(p, mask)[0, j + 1]
    p[0, j + 1] += bump
    assert snapshot_adjacency(p, mask)[0, j + 1] >= before


def test_snapshot_permutation_consistency(synthetic):
    cohort, stats = synthetic
    snap = build_snapshot([0, 1, 2], [0], [3, 4], stats)
    perm = [5, 2, 0, 4, 1, 3]
    codes, types = snap.codes[perm], snap.node_types[perm]
    mask = build_mask(types)
    p = conditional_weights(codes, types, stats)
    assert np.array_equal(snapshot_adjacency(p, mask), snap.adjacency[np.ix_(perm, perm)])


def test_dump_network_json_lines(synthetic):
    cohort, stats = synthetic
    patient = cohort.patients[0]
    text = dump_network(build_dynamic_network(patient, stats), cohort.vocabularies)
    records = [json.loads(line) for line in text.splitlines()]
    assert len(records) == len(patient)
    first = records[0]
    assert len(first["adjacency"]) == len(first["nodes"])
    assert all(kind in ("diagnosis", "procedure", "medication") for _, kind in first["nodes"])
