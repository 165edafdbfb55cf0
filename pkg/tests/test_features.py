import numpy as np
import pytest

from stratbranch.bnb import collect_expert_samples
from stratbranch.features import (CONS_FEATURES, STD_FLOOR, V_AT_LB, V_AT_UB, V_FRAC, VAR_FEATURES,
                                  BipartiteGraph, build_graph, fractionality, normalize_dataset_stats)
from stratbranch.generators import GenSpec, generate
from stratbranch.milp import MilpInstance, VarKind
from stratbranch.samples import read_manifest, read_samples, write_samples
from stratbranch.simplex import lp_solve


def test_frozen_column_order():
    assert len(CONS_FEATURES) == 5 and len(VAR_FEATURES) == 19
    assert VAR_FEATURES[V_FRAC] == "sol_frac"
    assert VAR_FEATURES[V_AT_LB] == "sol_is_at_lb" and VAR_FEATURES[V_AT_UB] == "sol_is_at_ub"


def test_parallel_row_has_unit_cosine():
    inst = MilpInstance.from_dense([1, 1], [[1, 1]], [1], [0, 0], [1, 1])
    g = build_graph(inst, lp_solve(inst))
    assert g.C[0, 0] == pytest.approx(1.0)


def test_bound_indicators_at_lower_bound():
    inst = MilpInstance.from_dense([1, 1], [[-1, 0]], [0], [0, 0], [1, 1])
    g = build_graph(inst, lp_solve(inst))
    np.testing.assert_array_equal(g.V[:, V_AT_LB], 1)
    np.testing.assert_array_equal(g.V[:, V_AT_UB], 0)


def test_fractionality():
    f = fractionality(np.array([2.3, 2.3, 4.0]), np.array([True, False, True]))
    np.testing.assert_allclose(f, [0.3, 0.0, 0.0], atol=1e-12)


def test_graph_shapes_and_candidates():
    inst = generate(GenSpec("set-covering", seed=1, rows=12, cols=20, density=0.2))
    lp = lp_solve(inst)
    g = build_graph(inst, lp)
    assert g.C.shape == (inst.n_cons, 5) and g.V.shape == (inst.n_vars, 19)
    assert g.edge_index.shape == (2, len(inst.vals))
    np.testing.assert_array_equal(g.candidates, np.flatnonzero(g.V[:, V_FRAC] > 0))
    np.testing.assert_array_equal(g.V[np.arange(inst.n_vars), VarKind.BINARY], 1)


def test_stats_constant_column_and_two_values():
    g1 = build_graph(*_lp_pair(0.0))
    g2 = build_graph(*_lp_pair(2.0))
    st = normalize_dataset_stats([g1, g2])
    assert np.all(st.v_std >= STD_FLOOR)
    C, E, V = st.apply(g1)
    const = np.ptp(np.vstack([g1.V, g2.V]), axis=0) == 0
    np.testing.assert_array_equal(V[:, const], 0.0)
    # the LP value column takes values {0, 2} over the pair: mean 1, std 1
    k = VAR_FEATURES.index("sol_val")
    assert st.v_mean[k] == pytest.approx(1.0) and st.v_std[k] == pytest.approx(1.0)


def _lp_pair(value):
    inst = MilpInstance.from_dense([1.0], [[-1.0]], [-value], [0.0], [5.0])
    return inst, lp_solve(inst)


def test_stats_need_two_graphs():
    with pytest.raises(ValueError):
        normalize_dataset_stats([build_graph(*_lp_pair(1.0))])


def test_sample_container_roundtrip(tmp_path):
    inst = generate(GenSpec("set-covering", seed=3, rows=15, cols=25, density=0.15))
    samples = collect_expert_samples([inst], seed=9)
    digest = write_samples(samples, tmp_path / "s.bin", {"note": "x"})
    back = read_samples(tmp_path / "s.bin")
    man = read_manifest(tmp_path / "s.bin")
    assert man["sha256"] == digest and man["note"] == "x" and man["n_samples"] == len(samples)
    assert list(man["var_features"]) == list(VAR_FEATURES)
    for a, b in zip(samples, back):
        np.testing.assert_allclose(b.graph.V, a.graph.V, rtol=1e-6, atol=1e-6)
        np.testing.assert_array_equal(b.cands, a.cands)
        np.testing.assert_array_equal(b.scores, a.scores)
        assert (b.label, b.depth, b.n_root, b.graph.n_incumbents) == \
            (a.label, a.depth, a.n_root, a.graph.n_incumbents)
    assert write_samples(back, tmp_path / "t.bin") == digest


def test_corrupt_container_rejected(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"garbage!")
    with pytest.raises(ValueError):
        read_samples(tmp_path / "bad.bin")


def test_graph_same_as_detects_change():
    g = build_graph(*_lp_pair(1.0))
    assert g.same_as(g.replace())
    V = g.V.copy()
    V[0, 0] += 1
    assert not g.same_as(g.replace(V=V))
    assert isinstance(g, BipartiteGraph)
