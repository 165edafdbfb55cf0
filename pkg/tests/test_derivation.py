import numpy as np
import pytest

from stratbranch.bnb import collect_expert_samples
from stratbranch.derivation import (METHODS, DerivationConfig, augment_dataset, derive_graph,
                                    lt_transform_graph, lt_transform_instance, perturb_constraints,
                                    perturb_duals, perturb_objective, rc_augment_graph,
                                    rc_augment_instance, sample_affine_map)
from stratbranch.features import V_FRAC, V_TYPE, build_graph
from stratbranch.generators import GenSpec, generate
from stratbranch.milp import AffineMap, MilpInstance, VarKind
from stratbranch.simplex import lp_solve

B = VarKind.BINARY


@pytest.fixture(scope="module")
def samples():
    inst = generate(GenSpec("set-covering", seed=2, rows=15, cols=25, density=0.15))
    return collect_expert_samples([inst])


def test_zero_range_map_has_no_shift():
    inst = generate(GenSpec("combinatorial-auction", seed=0, items=6, bids=9))
    amap = sample_affine_map(inst, DerivationConfig(t_range=0), seed=3)
    np.testing.assert_array_equal(amap.shift, 0.0)
    assert set(np.unique(amap.signs)) <= {-1.0, 1.0}


def test_identity_map_leaves_instance_unchanged():
    inst = generate(GenSpec("capacitated-facility-location", seed=1, customers=4, facilities=3))
    assert lt_transform_instance(inst, AffineMap.identity(inst.n_vars)).same_as(inst)


def test_complement_of_binary_stays_binary():
    inst = MilpInstance.from_dense([1.0], [[1.0]], [1.0], [0.0], [1.0], [B])
    out = lt_transform_instance(inst, AffineMap(np.array([-1.0]), np.array([1.0])))
    assert out.kinds[0] == B
    assert (out.lb[0], out.ub[0]) == (0.0, 1.0)
    shifted = lt_transform_instance(inst, AffineMap(np.array([1.0]), np.array([2.0])))
    assert shifted.kinds[0] == VarKind.INTEGER


def test_two_variable_lt_example():
    inst = MilpInstance.from_dense([-1, -1], [[1, 1]], [1.5], [0, 0], [1, 1])
    amap = AffineMap(np.array([1.0, -1.0]), np.array([0.0, 1.0]))
    out = lt_transform_instance(inst, amap)
    np.testing.assert_array_equal(out.obj, [-1, 1])
    np.testing.assert_array_equal(out.dense, [[1, -1]])
    np.testing.assert_allclose(out.rhs, [0.5])
    np.testing.assert_array_equal(out.lb, [0, 0])
    np.testing.assert_array_equal(out.ub, [1, 1])
    z = lp_solve(out).obj
    assert z == pytest.approx(-0.5)
    assert z + amap.offset(inst.obj) == pytest.approx(-1.5)


def test_sign_flip_is_an_involution():
    inst = generate(GenSpec("maximum-independent-set", seed=2, nodes=8))
    amap = sample_affine_map(inst, DerivationConfig(t_range=0), seed=1)
    twice = lt_transform_instance(lt_transform_instance(inst, amap), amap)
    np.testing.assert_array_equal(twice.obj, inst.obj)
    np.testing.assert_array_equal(twice.dense, inst.dense)
    np.testing.assert_allclose(twice.rhs, inst.rhs)


def test_identity_map_leaves_graph_unchanged(samples):
    g = samples[0].graph
    assert lt_transform_graph(g, AffineMap.identity(g.n_vars)).same_as(g)


def test_sol_frac_complement(samples):
    g = samples[0].graph
    j = int(g.candidates[0])
    V = g.V.copy()
    V[j, V_FRAC] = 0.3
    V[j + 1 if j + 1 < g.n_vars else j - 1, V_FRAC] = 0.0
    g = g.replace(V=V)
    signs = -np.ones(g.n_vars)
    out = lt_transform_graph(g, AffineMap(signs, np.zeros(g.n_vars)))
    assert out.V[j, V_FRAC] == pytest.approx(0.7)
    np.testing.assert_array_equal(out.V[g.V[:, V_FRAC] == 0, V_FRAC], 0.0)


def test_rc_row_arithmetic():
    inst = MilpInstance.from_dense([1, 1, 1], [[1, 1, 0], [0, 1, 1]], [2, 1], np.zeros(3), np.ones(3))
    out = rc_augment_instance(inst, pairs=[(0, 1)])
    np.testing.assert_array_equal(out.dense[2], [1, 2, 1])
    assert out.rhs[2] == 3
    assert out.meta["rc_pairs"] == [[0, 1]]
    assert lp_solve(out).obj == pytest.approx(lp_solve(inst).obj, abs=1e-9)


def test_rc_without_pairs_is_identity(samples):
    inst = generate(GenSpec("set-covering", seed=0, rows=10, cols=15, density=0.2))
    assert rc_augment_instance(inst, pairs=[]).same_as(inst)
    g = samples[0].graph
    assert rc_augment_graph(g, []) is g


def test_rc_graph_matches_rebuilt_graph():
    inst = generate(GenSpec("set-covering", seed=5, rows=12, cols=20, density=0.2))
    pairs = [(0, 3), (2, 7)]
    aug = rc_augment_instance(inst, pairs=pairs)
    g = build_graph(inst, lp_solve(inst))
    via_graph = rc_augment_graph(g, pairs)
    direct = build_graph(aug, lp_solve(aug))
    np.testing.assert_allclose(via_graph.C[:, :2], direct.C[:, :2], atol=1e-12)
    np.testing.assert_allclose(via_graph.edge_attr, direct.edge_attr, atol=1e-12)
    np.testing.assert_allclose(via_graph.V[:, V_TYPE:V_FRAC + 1], direct.V[:, V_TYPE:V_FRAC + 1], atol=1e-9)


def test_zero_sigma_is_identity(samples):
    g = samples[0].graph
    assert perturb_objective(g, 0.0) is g
    assert perturb_constraints(g, 0.0, 0.0) is g
    assert perturb_duals(g, 0.0) is g
    moved = perturb_objective(g, 0.01, seed=1)
    assert not moved.same_as(g)
    np.testing.assert_array_equal(moved.C, g.C)


@pytest.mark.parametrize("method", METHODS)
def test_derive_graph_preserves_shapes(samples, method):
    g = samples[1].graph
    out = derive_graph(g, method, DerivationConfig(rc_fraction=0.2), seed=2)
    assert out.n_vars == g.n_vars
    np.testing.assert_array_equal(out.cand_mask, g.cand_mask)


def _grouped(samples, sizes):
    out = []
    for g, size in enumerate(sizes):
        for k in range(size):
            s = samples[k % len(samples)]
            out.append(s.derived(s.graph, 0))
            out[-1].group = g
    return out


def test_augment_balances_groups(samples):
    data = _grouped(samples, (10, 100))
    aug = augment_dataset(data, DerivationConfig(p_equivalent=1.0, p_perturbed=1.0, rc_fraction=0.2))
    assert np.bincount([s.group for s in aug]).tolist() == [100, 100]
    assert aug[:110] == data
    assert all(s.provenance > 0 for s in aug[110:])


def test_augment_no_op_cases(samples):
    equal = _grouped(samples, (20, 20))
    assert len(augment_dataset(equal)) == 40
    uneven = _grouped(samples, (5, 20))
    assert len(augment_dataset(uneven, DerivationConfig(p_equivalent=0.0, p_perturbed=0.0))) == 25


def test_augment_is_deterministic(samples):
    data = _grouped(samples, (5, 30))
    a = augment_dataset(data, DerivationConfig(seed=3))
    b = augment_dataset(data, DerivationConfig(seed=3))
    assert all(x.graph.same_as(y.graph) and x.provenance == y.provenance for x, y in zip(a, b))
