"""Seeded desk-scale generators for the four benchmark families.

All families come out as minimization problems with ``<=`` rows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .milp import InstanceError, MilpInstance, VarKind

log = logging.getLogger(__name__)

FAMILIES = ("set-covering", "combinatorial-auction", "capacitated-facility-location",
            "maximum-independent-set")
MAX_RETRIES = 100


@dataclass(frozen=True)
class GenSpec:
    family: str = "set-covering"
    seed: int = 0
    rows: int = 60
    cols: int = 120
    density: float = 0.05
    max_cost: int = 1
    items: int = 30
    bids: int = 60
    customers: int = 15
    facilities: int = 10
    ratio: float = 3.0
    nodes: int = 50
    edge_prob: float = 0.25

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        for name in ("rows", "cols", "items", "bids", "customers", "facilities", "nodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("density", "edge_prob"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")


def generate(spec: GenSpec) -> MilpInstance:
    """Build one instance of ``spec.family``; deterministic in ``spec.seed``."""
    builder = _BUILDERS[spec.family]
    rng = np.random.default_rng(spec.seed)
    for _ in range(MAX_RETRIES):
        try:
            inst = builder(spec, rng)
        except _Degenerate as exc:
            log.debug("regenerating %s (seed %d): %s", spec.family, spec.seed, exc)
            continue
        inst.meta.update({"family": spec.family, "seed": spec.seed})
        return inst
    raise InstanceError(f"could not build a valid {spec.family} instance in {MAX_RETRIES} tries")


class _Degenerate(Exception):
    pass


def _set_covering(spec, rng):
    nrows, ncols = spec.rows, spec.cols
    nnz = max(int(nrows * ncols * spec.density), nrows, ncols)
    per_col = 2 if nnz >= 2 * ncols and nrows >= 2 else 1
    # column of every nonzero; each column appears at least per_col times
    owner = rng.integers(ncols, size=nnz)
    owner[:per_col * ncols] = np.repeat(np.arange(ncols), per_col)
    counts = np.bincount(owner, minlength=ncols)
    counts = np.minimum(counts, nrows)
    cover_order = rng.permutation(nrows)
    cols_of_row = [[] for _ in range(nrows)]
    pos = 0
    for j in range(ncols):
        k = int(counts[j])
        forced = cover_order[pos:pos + k] if pos < nrows else np.zeros(0, dtype=np.int64)
        pos += len(forced)
        rest = k - len(forced)
        if rest:
            pool = np.setdiff1d(np.arange(nrows), forced)
            extra = rng.choice(pool, size=rest, replace=False)
            picked = np.concatenate([forced, extra])
        else:
            picked = forced
        for i in picked:
            cols_of_row[int(i)].append(j)
    if any(len(r) == 0 for r in cols_of_row):
        raise _Degenerate("uncoverable row")
    c = rng.integers(1, spec.max_cost + 1, size=ncols).astype(np.float64)
    rows = [(sorted(r), -np.ones(len(r))) for r in cols_of_row]
    return MilpInstance.from_rows(c, rows, -np.ones(nrows), np.zeros(ncols), np.ones(ncols),
                                  [VarKind.BINARY] * ncols, name=f"setcover-{spec.seed}")


def _combinatorial_auction(spec, rng):
    n_items, n_bids = spec.items, spec.bids
    values = rng.integers(1, 101, size=n_items)
    bundles, prices = [], []
    for _ in range(n_bids):
        size = min(n_items, 1 + rng.geometric(0.45))
        first = int(rng.integers(n_items))
        # neighbouring items are more likely to be bundled together
        weights = np.exp(-np.abs(np.arange(n_items) - first) / 3.0)
        weights[first] = 0.0
        others = rng.choice(n_items, size=size - 1, replace=False, p=weights / weights.sum()) \
            if size > 1 else np.zeros(0, dtype=np.int64)
        bundle = np.unique(np.concatenate([[first], others]).astype(np.int64))
        bundles.append(bundle)
        prices.append(int(values[bundle].sum() * (1 + rng.integers(0, 21) / 100)) + 1)
    rows = []
    for item in range(n_items):
        bidders = [b for b, bundle in enumerate(bundles) if item in bundle]
        if bidders:
            rows.append((bidders, np.ones(len(bidders))))
    if not rows:
        raise _Degenerate("no item appears in any bid")
    c = -np.asarray(prices, dtype=np.float64)
    return MilpInstance.from_rows(c, rows, np.ones(len(rows)), np.zeros(n_bids), np.ones(n_bids),
                                  [VarKind.BINARY] * n_bids, name=f"cauction-{spec.seed}")


def _facility_location(spec, rng):
    nc, nf = spec.customers, spec.facilities
    cx, cy = rng.random(nc), rng.random(nc)
    fx, fy = rng.random(nf), rng.random(nf)
    demand = rng.integers(5, 36, size=nc)
    cap = rng.integers(10, 161, size=nf).astype(np.float64)
    fixed = (rng.integers(100, 111, size=nf) * np.sqrt(cap) + rng.integers(0, 91, size=nf)).astype(int)
    cap = np.floor(cap * spec.ratio * demand.sum() / cap.sum())
    if cap.sum() < demand.sum():
        raise _Degenerate("capacity below total demand")
    trans = np.round(np.hypot(cx[:, None] - fx[None, :], cy[:, None] - fy[None, :]) * 10
                     * demand[:, None], 2)
    # variables: x[i, j] (continuous, index i * nf + j) then y[j] (binary)
    n = nc * nf + nf
    ycol = nc * nf + np.arange(nf)
    rows, rhs = [], []
    for i in range(nc):
        rows.append((i * nf + np.arange(nf), -np.ones(nf)))
        rhs.append(-1.0)
    for j in range(nf):
        idx = np.concatenate([np.arange(nc) * nf + j, [ycol[j]]])
        rows.append((idx, np.concatenate([demand.astype(np.float64), [-cap[j]]])))
        rhs.append(0.0)
    rows.append((ycol, -cap))
    rhs.append(-float(demand.sum()))
    for i in range(nc):
        for j in range(nf):
            rows.append(([i * nf + j, ycol[j]], [1.0, -1.0]))
            rhs.append(0.0)
    c = np.concatenate([trans.ravel(), fixed.astype(np.float64)])
    kinds = [VarKind.CONTINUOUS] * (nc * nf) + [VarKind.BINARY] * nf
    return MilpInstance.from_rows(c, rows, rhs, np.zeros(n), np.ones(n), kinds,
                                  name=f"facility-{spec.seed}")


def _independent_set(spec, rng):
    n = spec.nodes
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < spec.edge_prob
    rows = [([int(a), int(b)], [1.0, 1.0]) for a, b in zip(iu[keep], ju[keep])]
    return MilpInstance.from_rows(-np.ones(n), rows, np.ones(len(rows)), np.zeros(n), np.ones(n),
                                  [VarKind.BINARY] * n, name=f"indset-{spec.seed}")


_BUILDERS = {
    "set-covering": _set_covering,
    "combinatorial-auction": _combinatorial_auction,
    "capacitated-facility-location": _facility_location,
    "maximum-independent-set": _independent_set,
}


def feasible_witness(inst: MilpInstance) -> np.ndarray:
    """A known feasible point for a generated instance."""
    family = inst.meta.get("family")
    if family == "set-covering":
        return np.ones(inst.n_vars)
    if family == "capacitated-facility-location":
        from .simplex import lp_solve

        # open every facility, let the LP route the demand
        ybin = inst.kinds == VarKind.BINARY
        lb = inst.lb.copy()
        lb[ybin] = 1.0
        res = lp_solve(inst, lb, inst.ub)
        if not res.ok:
            raise InstanceError("all-open facility configuration is infeasible")
        return res.x
    return np.zeros(inst.n_vars)


def write_dataset(specs, out_dir):
    """Write one JSON file per spec plus ``manifest.json``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, paths = [], []
    for k, spec in enumerate(specs):
        inst = generate(spec)
        path = out / f"{k:04d}_{inst.name}.json"
        inst.save(path)
        paths.append(path)
        entries.append({"file": path.name, "spec": asdict(spec)})
    (out / "manifest.json").write_text(json.dumps({"instances": entries}, indent=1))
    return paths


def read_dataset(in_dir):
    d = Path(in_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    insts = []
    for e in manifest["instances"]:
        inst = MilpInstance.load(d / e["file"])
        inst.meta.update({"family": e["spec"]["family"], "seed": e["spec"]["seed"]})
        insts.append(inst)
    return insts
