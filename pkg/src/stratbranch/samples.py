"""Training samples and their length-prefixed binary container.

Container layout (all little-endian)::

    magic  b"SBSAMPL1"
    uint32 record count
    record*: uint64 payload length, payload

    payload: 10 x int32  (n_cons, n_vars, n_edges, n_cand, label, depth,
                          n_root, instance_id, group, n_incumbents)
             uint8       provenance
             float64     obj_norm
             float32     C        n_cons x 5
             int32       edges    2 x n_edges
             float32     coef     n_edges
             float32     V        n_vars x 19
             int32       cands    n_cand
             float64     scores   n_cand
             float64     row norms n_cons

The JSON sidecar next to the container records counts, feature dimensions,
instance ids and seeds.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import CONS_FEATURES, VAR_FEATURES, BipartiteGraph

MAGIC = b"SBSAMPL1"
_HEAD = struct.Struct("<10iBd")

PROVENANCE = {0: "original", 1: "lt", 2: "rc", 3: "objective", 4: "constraint", 5: "dual"}
PROV_CODE = {v: k for k, v in PROVENANCE.items()}


@dataclass(eq=False)
class TrainingSample:
    graph: BipartiteGraph
    cands: np.ndarray
    scores: np.ndarray
    label: int
    depth: int
    n_root: int
    instance_id: int = 0
    group: int = -1
    provenance: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def kind(self):
        if self.provenance == 0:
            return "original"
        return "equivalent" if self.provenance in (1, 2) else "perturbed"

    @property
    def label_pos(self):
        """Position of the label inside ``cands``."""
        return int(np.flatnonzero(self.cands == self.label)[0])

    def derived(self, graph, provenance):
        return TrainingSample(graph, self.cands, self.scores, self.label, self.depth, self.n_root,
                              self.instance_id, self.group, provenance, dict(self.meta))


def encode_sample(s: TrainingSample) -> bytes:
    g = s.graph
    head = _HEAD.pack(g.n_cons, g.n_vars, g.n_edges, len(s.cands), int(s.label), int(s.depth),
                      int(s.n_root), int(s.instance_id), int(s.group), int(g.n_incumbents), int(s.provenance),
                      float(g.obj_norm))
    parts = [
        head,
        np.ascontiguousarray(g.C, dtype="<f4").tobytes(),
        np.ascontiguousarray(g.edge_index, dtype="<i4").tobytes(),
        np.ascontiguousarray(g.edge_attr, dtype="<f4").tobytes(),
        np.ascontiguousarray(g.V, dtype="<f4").tobytes(),
        np.ascontiguousarray(s.cands, dtype="<i4").tobytes(),
        np.ascontiguousarray(s.scores, dtype="<f8").tobytes(),
        np.ascontiguousarray(g.row_norms, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_sample(buf: bytes) -> TrainingSample:
    (q, n, ne, nc, label, depth, n_root, inst_id, group, n_inc, prov, obj_norm) = _HEAD.unpack_from(buf, 0)
    off = _HEAD.size

    def take(dtype, count, shape):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
        off += arr.nbytes
        return arr

    C = take("<f4", q * len(CONS_FEATURES), (q, len(CONS_FEATURES))).astype(np.float64)
    ei = take("<i4", 2 * ne, (2, ne)).astype(np.int64)
    ea = take("<f4", ne, (ne,)).astype(np.float64)
    V = take("<f4", n * len(VAR_FEATURES), (n, len(VAR_FEATURES))).astype(np.float64)
    cands = take("<i4", nc, (nc,)).astype(np.int64)
    scores = take("<f8", nc, (nc,)).copy()
    norms = take("<f8", q, (q,)).copy()
    if off != len(buf):
        raise ValueError("trailing bytes in sample record")
    mask = np.zeros(n, dtype=bool)
    mask[cands] = True
    graph = BipartiteGraph(C, ei, ea, V, mask, norms, obj_norm, n_inc)
    return TrainingSample(graph, cands, scores, label, depth, n_root, inst_id, group, prov)


def write_samples(samples, path, manifest=None):
    """Write the container and its ``.json`` sidecar; returns the container digest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = hashlib.sha256()
    with open(path, "wb") as fh:
        head = MAGIC + struct.pack("<I", len(samples))
        fh.write(head)
        h.update(head)
        for s in samples:
            payload = encode_sample(s)
            chunk = struct.pack("<Q", len(payload)) + payload
            fh.write(chunk)
            h.update(chunk)
    side = {
        "n_samples": len(samples),
        "cons_features": list(CONS_FEATURES),
        "var_features": list(VAR_FEATURES),
        "edge_features": ["coef"],
        "instance_ids": sorted({int(s.instance_id) for s in samples}),
        "seeds": sorted({int(s.meta["seed"]) for s in samples if "seed" in s.meta}),
        "provenance_counts": {PROVENANCE[k]: sum(1 for s in samples if s.provenance == k)
                              for k in PROVENANCE},
        "sha256": h.hexdigest(),
    }
    side.update(manifest or {})
    sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True))
    return side["sha256"]


def read_samples(path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a sample container")
    (count,) = struct.unpack_from("<I", data, 8)
    off = 12
    out = []
    for _ in range(count):
        (size,) = struct.unpack_from("<Q", data, off)
        off += 8
        out.append(decode_sample(data[off:off + size]))
        off += size
    if off != len(data):
        raise ValueError("trailing bytes in container")
    return out


def read_manifest(path):
    return json.loads(sidecar_path(path).read_text())


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")
