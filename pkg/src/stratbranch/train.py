"""Adam training loop, group-stratified batching, acc@k evaluation and checkpoints."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .features import CONS_FEATURES, VAR_FEATURES, FeatureStats, normalize_dataset_stats
from .model import init_params, loss_and_grad, pack, score_batch

KS = (1, 3, 5, 10)
SHALLOW_FRACTION = 0.2
CKPT_MAGIC = b"SBCKPT01"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    tau: float = 0.08
    seed: int = 0
    patience: int = 10
    hidden: int = 32
    contrastive: bool = True


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def stratified_batches(groups, batch_size, rng):
    """Shuffled batches in which every represented group has at least two members.

    Each group is cut into chunks of two (an odd leftover joins the last
    chunk); chunks are shuffled and packed into batches of at most
    ``batch_size``. A group with a single sample forms a chunk of one.
    """
    groups = np.asarray(groups)
    chunks = []
    for g in np.unique(groups):
        idx = rng.permutation(np.flatnonzero(groups == g))
        parts = [idx[i:i + 2] for i in range(0, len(idx), 2)]
        if len(parts) > 1 and len(parts[-1]) == 1:
            last = parts.pop()
            parts[-1] = np.concatenate([parts[-1], last])
        chunks.extend(parts)
    order = rng.permutation(len(chunks))
    batches, cur = [], []
    for c in order:
        if cur and len(cur) + len(chunks[c]) > batch_size:
            batches.append(np.array(cur))
            cur = []
        cur.extend(chunks[c].tolist())
    if cur:
        batches.append(np.array(cur))
    return batches


def label_ranks(scores_list, samples):
    """Rank of the label among candidates; ties go to the lower variable index."""
    ranks = np.empty(len(samples), dtype=np.int64)
    for k, (sc, s) in enumerate(zip(scores_list, samples)):
        cands = np.asarray(s.cands)
        p = s.label_pos
        ranks[k] = np.sum(sc > sc[p]) + np.sum((sc == sc[p]) & (cands < cands[p]))
    return ranks


def shallow_subset(samples, fraction=SHALLOW_FRACTION):
    """Indices of the shallowest ``fraction`` of samples (stable by depth)."""
    depth = np.array([s.depth for s in samples])
    order = np.argsort(depth, kind="stable")
    return order[:max(1, math.ceil(fraction * len(samples)))]


def acc_table(scores_list, samples, ks=KS):
    ranks = label_ranks(scores_list, samples)
    sh = shallow_subset(samples)
    out = {f"acc@{k}": float(np.mean(ranks < k)) for k in ks}
    out.update({f"shallow_acc@{k}": float(np.mean(ranks[sh] < k)) for k in ks})
    return out


def predict_scores(samples, params, stats, chunk=256):
    out = []
    for i in range(0, len(samples), chunk):
        out.extend(score_batch(samples[i:i + chunk], params, stats))
    return out


def evaluate_acc(samples, params, stats, ks=KS):
    """acc@k over all samples and over the shallowest 20% by depth."""
    if not samples:
        raise ValueError("empty evaluation set")
    return acc_table(predict_scores(samples, params, stats), samples, ks)


def split_by_instance(samples, val_fraction=0.2, seed=0):
    """Train/validation split that keeps each instance on one side."""
    ids = sorted({s.instance_id for s in samples})
    rng = np.random.default_rng(seed)
    n_val = max(1, round(val_fraction * len(ids)))
    val_ids = set(rng.permutation(ids)[:n_val].tolist())
    train = [s for s in samples if s.instance_id not in val_ids]
    val = [s for s in samples if s.instance_id in val_ids]
    return train, val


def train(train_samples, val_samples, m, cfg=TrainConfig(), stats=None, log_fn=None):
    """Fit a policy; returns (best params, history rows, feature stats).

    The returned parameters are those of the epoch with the best validation
    acc@1; training stops after ``patience`` epochs without improvement.
    """
    if not train_samples or not val_samples:
        raise ValueError("empty training or validation split")
    if stats is None:
        stats = normalize_dataset_stats([s.graph for s in train_samples])
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.hidden, max(m, 1), int(rng.integers(2**31)))
    opt = Adam(params, cfg.lr)
    groups = [s.group for s in train_samples]
    best = (-1.0, None)
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        sums = {"total": 0.0, "sup": 0.0, "cons": 0.0}
        for idx in stratified_batches(groups, cfg.batch_size, rng):
            B = pack([train_samples[i] for i in idx], stats)
            _, parts, grads = loss_and_grad(params, B, cfg.tau, cfg.contrastive)
            opt.step(params, grads)
            for k in sums:
                sums[k] += parts[k] * len(idx)
        acc = evaluate_acc(val_samples, params, stats)
        row = {"epoch": epoch, "loss": sums["total"] / len(train_samples),
               "sup": sums["sup"] / len(train_samples), "cons": sums["cons"] / len(train_samples),
               "lambda": float(np.logaddexp(0.0, params["theta_lambda"][0])),
               **{k: acc[k] for k in ("acc@1", "acc@3", "acc@5", "acc@10", "shallow_acc@1")}}
        history.append(row)
        if log_fn:
            log_fn(row)
        if row["acc@1"] > best[0]:
            best = (row["acc@1"], {k: v.copy() for k, v in params.items()})
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best[1], history, stats


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params, stats, meta=None):
    names = list(params)
    header = {
        "tensors": [{"name": k, "shape": list(params[k].shape)} for k in names],
        "stats": stats.to_dict(),
        "cons_features": list(CONS_FEATURES),
        "var_features": list(VAR_FEATURES),
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(params[k], dtype="<f8").tobytes() for k in names)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(CKPT_MAGIC + struct.pack("<Q", len(hb)) + hb + payload)
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (hl,) = struct.unpack_from("<Q", data, 8)
    header = json.loads(data[16:16 + hl])
    off = 16 + hl
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        params[t["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off) \
            .reshape(t["shape"]).astype(np.float64)
        off += 8 * count
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return params, FeatureStats.from_dict(header["stats"]), header


def stats_digest(stats):
    return hashlib.sha256(json.dumps(stats.to_dict(), sort_keys=True).encode()).hexdigest()


def config_digest(cfg):
    d = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else cfg
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]
