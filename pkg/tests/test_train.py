import numpy as np
import pytest

from stratbranch.bnb import collect_expert_samples
from stratbranch.generators import GenSpec, generate
from stratbranch.samples import TrainingSample
from stratbranch.train import (TrainConfig, acc_table, evaluate_acc, load_checkpoint, save_checkpoint,
                               shallow_subset, split_by_instance, stats_digest, stratified_batches, train)


def fake(n_cands, label_pos, depth=0):
    cands = np.arange(n_cands)
    return TrainingSample(None, cands, np.zeros(n_cands), int(cands[label_pos]), depth, n_cands)


def test_acc_example():
    acc = acc_table([np.array([0.1, 0.9, 0.5])], [fake(3, 2)], ks=(1, 2))
    assert acc["acc@1"] == 0.0 and acc["acc@2"] == 1.0


def test_acc_ties_go_to_lower_index():
    assert acc_table([np.zeros(3)], [fake(3, 0)], ks=(1,))["acc@1"] == 1.0
    assert acc_table([np.zeros(3)], [fake(3, 1)], ks=(1,))["acc@1"] == 0.0


def test_acc_full_k_is_one():
    rng = np.random.default_rng(0)
    samples = [fake(int(rng.integers(2, 9)), 0) for _ in range(30)]
    scores = [rng.normal(size=len(s.cands)) for s in samples]
    assert acc_table(scores, samples, ks=(10,))["acc@10"] == 1.0


def test_random_scores_match_uniform_baseline():
    rng = np.random.default_rng(1)
    samples = [fake(n, int(rng.integers(n))) for n in rng.integers(5, 40, size=4000)]
    scores = [rng.random(len(s.cands)) for s in samples]
    acc = acc_table(scores, samples, ks=(1,))["acc@1"]
    p = np.mean([1.0 / len(s.cands) for s in samples])
    assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / len(samples))


def test_shallow_subset_takes_smallest_depths():
    samples = [fake(2, 0, depth=d) for d in (5, 0, 3, 9, 1, 2, 7, 4, 8, 6)]
    assert sorted(samples[i].depth for i in shallow_subset(samples)) == [0, 1]


def test_stratified_batches_pair_every_group():
    rng = np.random.default_rng(0)
    groups = np.repeat([0, 1, 2], [7, 4, 10])
    batches = stratified_batches(groups, 6, rng)
    assert sorted(np.concatenate(batches).tolist()) == list(range(21))
    for b in batches:
        assert len(b) <= 6
        counts = np.bincount(groups[b], minlength=3)
        assert np.all((counts == 0) | (counts >= 2))


@pytest.fixture(scope="module")
def data():
    out = []
    for k, seed in enumerate((0, 1, 3, 6, 7)):
        part = collect_expert_samples([generate(GenSpec("set-covering", seed=seed, rows=30, cols=50,
                                                        density=0.1))])
        for s in part:
            s.instance_id = k
            s.group = s.depth % 2
        out.extend(part)
    return out


def test_split_keeps_instances_together(data):
    tr, va = split_by_instance(data, 0.4, seed=0)
    assert tr and va
    assert not {s.instance_id for s in tr} & {s.instance_id for s in va}


def test_zero_learning_rate_keeps_parameters(data):
    tr, va = split_by_instance(data, 0.4, seed=0)
    cfg = TrainConfig(epochs=3, lr=0.0, hidden=8, batch_size=8)
    p1, hist, stats = train(tr, va, 2, cfg)
    p0, _, _ = train(tr, va, 2, TrainConfig(epochs=1, lr=0.0, hidden=8, batch_size=8))
    assert all(np.array_equal(p0[k], p1[k]) for k in p0)
    sup = [r["sup"] for r in hist]
    assert np.ptp(sup) < 1e-12
    assert len({r["acc@1"] for r in hist}) == 1


def test_training_is_deterministic_and_checkpoints_roundtrip(data, tmp_path):
    tr, va = split_by_instance(data, 0.4, seed=0)
    cfg = TrainConfig(epochs=3, hidden=8, batch_size=8, lr=3e-3)
    p1, h1, st = train(tr, va, 2, cfg)
    p2, h2, _ = train(tr, va, 2, cfg)
    assert h1 == h2 and all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert set(h1[0]) == {"epoch", "loss", "sup", "cons", "lambda", "acc@1", "acc@3", "acc@5",
                          "acc@10", "shallow_acc@1"}
    save_checkpoint(tmp_path / "c.bin", p1, st, {"note": 1})
    back, st2, header = load_checkpoint(tmp_path / "c.bin")
    assert all(np.array_equal(back[k], p1[k]) for k in p1)
    assert stats_digest(st2) == stats_digest(st) and header["meta"]["note"] == 1
    assert evaluate_acc(va, back, st2) == evaluate_acc(va, p1, st)


def test_bad_checkpoint_rejected(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.bin")


def test_empty_split_rejected(data):
    with pytest.raises(ValueError):
        train(data, [], 2)
