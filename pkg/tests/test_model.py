import math

import numpy as np
import pytest

from stratbranch.derivation import perturb_constraints
from stratbranch.features import normalize_dataset_stats
from stratbranch.model import (alphas, contrastive_loss, gcnn_forward, graph_embed, init_params,
                               loss_and_grad, pack, param_shapes, sigmoid, stratified_weight,
                               supervised_loss, total_loss)
from stratbranch.verify import contrastive_direct, fd_errors, probe_batch, probe_params


@pytest.fixture(scope="module")
def probe():
    return probe_batch()


def test_forward_shapes(probe):
    samples, stats = probe
    P = init_params(16, 4, seed=0)
    g = samples[0].graph
    Z, scores = gcnn_forward(g, P, stats)
    assert Z.shape == (g.n_vars, 16)
    assert scores.shape == (len(g.candidates),)


def test_variable_permutation_equivariance(probe):
    samples, stats = probe
    P = init_params(16, 4, seed=2)
    g = samples[1].graph
    perm = np.random.default_rng(0).permutation(g.n_vars)
    inv = np.argsort(perm)
    ei = g.edge_index.copy()
    ei[1] = inv[ei[1]]
    h = g.replace(V=g.V[perm], edge_index=ei, cand_mask=g.cand_mask[perm])
    Z1, _ = gcnn_forward(g, P, stats)
    Z2, _ = gcnn_forward(h, P, stats)
    np.testing.assert_allclose(Z2, Z1[perm], atol=1e-10)


def test_zero_output_layer_gives_equal_scores(probe):
    samples, stats = probe
    P = init_params(16, 4, seed=0)
    P["out_W2"][:] = 0.0
    _, scores = gcnn_forward(samples[2].graph, P, stats)
    assert np.ptp(scores) == 0.0


def test_graph_embed_of_identical_rows():
    v = np.array([3.0, 4.0])
    e, _ = graph_embed(np.tile(v, (5, 1)))
    np.testing.assert_allclose(e[0], v / 5.0)


def test_stratified_weight_values():
    assert stratified_weight(2, 2, np.zeros(3)) == pytest.approx(0.731059, abs=1e-6)
    assert stratified_weight(1, 2, np.zeros(3)) == pytest.approx(sigmoid(1 + math.log(2)))
    assert stratified_weight(1, 2, np.zeros(3)) == pytest.approx(0.8446, abs=1e-4)
    assert stratified_weight(0, 3, np.full(3, -1e4)) == pytest.approx(sigmoid(1.0))
    np.testing.assert_array_equal(np.diff(alphas(np.zeros(4), 4)) > 0, True)


def test_contrastive_single_group_matches_direct():
    rng = np.random.default_rng(0)
    E = rng.normal(size=(9, 5))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    groups = np.zeros(9, dtype=int)
    ref = contrastive_direct(E, groups, lambda a, b: float(sigmoid(1.0)), 0.3)
    assert contrastive_loss(E, groups, np.zeros(0), 0.3) == pytest.approx(ref, abs=1e-9)


def test_contrastive_dynamic_weights_match_direct():
    rng = np.random.default_rng(1)
    E = rng.normal(size=(12, 4))
    E /= np.linalg.norm(E, axis=1, keepdims=True)
    groups = rng.integers(0, 4, size=12)
    theta = np.array([0.3, -0.2, 1.0])
    ref = contrastive_direct(E, groups, lambda a, b: stratified_weight(a, b, theta), 0.2)
    assert contrastive_loss(E, groups, theta, 0.2) == pytest.approx(ref, rel=1e-12)


def test_contrastive_without_positives_is_zero():
    E = np.eye(4)
    assert contrastive_loss(E, np.arange(4), np.zeros(3), 0.1) == 0.0


def test_contrastive_rejects_bad_temperature():
    with pytest.raises(ValueError):
        contrastive_loss(np.eye(3), np.zeros(3, dtype=int), np.zeros(0), 0.0)


def test_supervised_loss_cases():
    assert supervised_loss([0.2, 0.2, 0.2, 0.2], 1) == pytest.approx(math.log(4))
    assert supervised_loss([500.0, 0.0, 0.0], 0) == pytest.approx(0.0, abs=1e-12)
    s = np.array([0.1, -2.0, 1.5])
    assert supervised_loss(s, 2) == pytest.approx(supervised_loss(s + 7.0, 2))
    with pytest.raises(ValueError):
        supervised_loss(s, 3)


def test_total_reduces_to_supervised_when_lambda_vanishes(probe):
    samples, stats = probe
    P = probe_params()
    P["theta_lambda"][:] = -1e3
    total, parts = total_loss(samples, P, tau=0.5, stats=stats)
    assert total == pytest.approx(parts["sup"], abs=1e-12)


def test_param_shapes_cover_weight_parameters():
    shapes = param_shapes(8, 3)
    assert shapes["theta"] == (2,) and shapes["theta_lambda"] == (1,)
    assert set(init_params(8, 3)) == set(shapes)


def test_gradients_on_random_probe(probe):
    # jitter edge coefficients so the edge embedding receives a nonzero gradient
    samples = [s.derived(perturb_constraints(s.graph, 0.2, 0.0, seed=k), 0) for k, s in enumerate(probe[0])]
    stats = normalize_dataset_stats([s.graph for s in samples])
    rng = np.random.default_rng(5)
    P = init_params(12, 4, seed=5)
    P["theta"] = rng.normal(size=3)
    P["theta_lambda"] = rng.normal(size=1)
    errs = fd_errors(P, pack(samples, stats), eps=1e-6, tau=0.4)
    assert max(errs.values()) < 1e-4, errs


def test_gradients_include_every_tensor(probe):
    samples, stats = probe
    P = probe_params()
    _, parts, G = loss_and_grad(P, pack(samples, stats), 0.5)
    assert set(G) == set(P)
    assert all(G[k].shape == P[k].shape for k in P)
    assert np.abs(G["theta"]).sum() > 0 and np.abs(G["theta_lambda"]).sum() > 0
    assert parts["total"] == pytest.approx(parts["sup"] + parts["lambda"] * parts["cons"])
