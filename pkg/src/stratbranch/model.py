"""GCNN branching policy with hand-written reverse-mode gradients.

Architecture (hidden width ``h``)::

    cons:  hc  = relu(LN(C W + b))            5 -> h
    vars:  hv  = relu(LN(V W + b))           19 -> h
    edges: he  = E W + b                      1 -> h
    var->cons half convolution, then cons->var half convolution:
        pre_ij = hL_i Wl + hR_j Wr + he_ij + b
        msg_ij = relu(pre_ij) Wf + bf
        h'_i   = relu([sum_j msg_ij, hL_i] Wo + bo)
    scorer: s = relu(Z W1 + b1) W2 + b2       h -> h -> 1

``LN`` is layer normalization without affine parameters. A batch of graphs is
packed into one disjoint graph so every layer is a single matrix product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

LN_EPS = 1e-5
EMBED_EPS = 1e-12
THETA_INIT = -2.0
LAMBDA_INIT = 0.1


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def param_shapes(h, m, n_cons_feats=5, n_var_feats=19):
    shapes = {
        "cons_W": (n_cons_feats, h), "cons_b": (h,),
        "var_W": (n_var_feats, h), "var_b": (h,),
        "edge_W": (1, h), "edge_b": (h,),
    }
    for p in ("vc", "cv"):
        shapes.update({f"{p}_Wl": (h, h), f"{p}_Wr": (h, h), f"{p}_b": (h,),
                       f"{p}_Wf": (h, h), f"{p}_bf": (h,), f"{p}_Wo": (2 * h, h), f"{p}_bo": (h,)})
    shapes.update({"out_W1": (h, h), "out_b1": (h,), "out_W2": (h, 1), "out_b2": (1,),
                   "theta": (max(m - 1, 0),), "theta_lambda": (1,)})
    return shapes


def init_params(h=32, m=1, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(h, m).items():
        if name == "theta":
            params[name] = np.full(shape, THETA_INIT)
        elif name == "theta_lambda":
            params[name] = np.full(shape, np.log(np.expm1(LAMBDA_INIT)))
        elif len(shape) == 2:
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            params[name] = np.zeros(shape)
    return params


def check_finite(arrays, what):
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite {what} in {name}")


# ---------------------------------------------------------------- batching

@dataclass
class Packed:
    C: np.ndarray
    E: np.ndarray
    V: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    var_graph: np.ndarray
    var_count: np.ndarray
    cand_ptr: np.ndarray
    cands: np.ndarray
    label_pos: np.ndarray
    groups: np.ndarray

    @property
    def n_graphs(self):
        return len(self.var_count)


def pack(samples, stats):
    """Standardize and concatenate samples into one disjoint graph."""
    if not samples:
        raise ValueError("empty batch")
    Cs, Es, Vs, rows, cols, vg, cands, cptr, lpos = [], [], [], [], [], [], [], [0], []
    q_off = n_off = 0
    for k, s in enumerate(samples):
        if s.label not in set(np.asarray(s.cands).tolist()):
            raise ValueError("label outside the candidate set")
        C, E, V = stats.apply(s.graph)
        Cs.append(C)
        Es.append(E)
        Vs.append(V)
        rows.append(s.graph.edge_index[0] + q_off)
        cols.append(s.graph.edge_index[1] + n_off)
        vg.append(np.full(s.graph.n_vars, k))
        cands.append(np.asarray(s.cands) + n_off)
        cptr.append(cptr[-1] + len(s.cands))
        lpos.append(s.label_pos)
        q_off += s.graph.n_cons
        n_off += s.graph.n_vars
    vg = np.concatenate(vg)
    return Packed(np.vstack(Cs), np.vstack(Es), np.vstack(Vs),
                  np.concatenate(rows).astype(np.int64), np.concatenate(cols).astype(np.int64),
                  vg, np.bincount(vg, minlength=len(samples)).astype(np.float64),
                  np.asarray(cptr, dtype=np.int64), np.concatenate(cands).astype(np.int64),
                  np.asarray(lpos, dtype=np.int64),
                  np.asarray([s.group for s in samples], dtype=np.int64))


# ---------------------------------------------------------------- layers

def _segsum(values, index, size):
    out = np.zeros((size, values.shape[1]))
    np.add.at(out, index, values)
    return out


def _ln_forward(a):
    mu = a.mean(axis=1, keepdims=True)
    xc = a - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + LN_EPS)
    return xc * inv, inv


def _ln_backward(dy, y, inv):
    h = y.shape[1]
    return inv * (dy - dy.mean(axis=1, keepdims=True) - y * (dy * y).mean(axis=1, keepdims=True)) \
        if h else dy


def _embed_forward(X, W, b):
    a = X @ W + b
    y, inv = _ln_forward(a)
    return np.maximum(y, 0.0), (X, y, inv)


def _embed_backward(dh, cache, W):
    X, y, inv = cache
    da = _ln_backward(dh * (y > 0), y, inv)
    return X.T @ da, da.sum(axis=0)


def _conv_forward(P, p, hL, hR, he, left, right):
    """Half convolution updating the ``left`` vertex set from the ``right`` set."""
    pre = (hL @ P[f"{p}_Wl"])[left] + (hR @ P[f"{p}_Wr"])[right] + he + P[f"{p}_b"]
    u = np.maximum(pre, 0.0)
    msg = u @ P[f"{p}_Wf"] + P[f"{p}_bf"]
    agg = _segsum(msg, left, hL.shape[0])
    cat = np.hstack([agg, hL])
    out = np.maximum(cat @ P[f"{p}_Wo"] + P[f"{p}_bo"], 0.0)
    return out, (hL, hR, pre, u, cat, out, left, right)


def _conv_backward(P, p, dout, cache, G):
    hL, hR, pre, u, cat, out, left, right = cache
    h = hL.shape[1]
    dz = dout * (out > 0)
    G[f"{p}_Wo"] = cat.T @ dz
    G[f"{p}_bo"] = dz.sum(axis=0)
    dcat = dz @ P[f"{p}_Wo"].T
    dagg, dhL = dcat[:, :h], dcat[:, h:].copy()
    dmsg = dagg[left]
    G[f"{p}_Wf"] = u.T @ dmsg
    G[f"{p}_bf"] = dmsg.sum(axis=0)
    dpre = (dmsg @ P[f"{p}_Wf"].T) * (pre > 0)
    G[f"{p}_b"] = dpre.sum(axis=0)
    dL_nodes = _segsum(dpre, left, hL.shape[0])
    dR_nodes = _segsum(dpre, right, hR.shape[0])
    G[f"{p}_Wl"] = hL.T @ dL_nodes
    G[f"{p}_Wr"] = hR.T @ dR_nodes
    dhL += dL_nodes @ P[f"{p}_Wl"].T
    dhR = dR_nodes @ P[f"{p}_Wr"].T
    return dhL, dhR, dpre


def forward(P, B):
    """Variable embeddings ``Z`` (n_total x h), all variable scores, and the cache."""
    hc, cc = _embed_forward(B.C, P["cons_W"], P["cons_b"])
    hv, cv = _embed_forward(B.V, P["var_W"], P["var_b"])
    he = B.E @ P["edge_W"] + P["edge_b"]
    hc2, k1 = _conv_forward(P, "vc", hc, hv, he, B.rows, B.cols)
    Z, k2 = _conv_forward(P, "cv", hv, hc2, he, B.cols, B.rows)
    t_pre = Z @ P["out_W1"] + P["out_b1"]
    t = np.maximum(t_pre, 0.0)
    scores = (t @ P["out_W2"])[:, 0] + P["out_b2"][0]
    check_finite({"embedding": Z, "scores": scores}, "activation")
    return Z, scores, (cc, cv, k1, k2, Z, t_pre, t)


def backward(P, B, cache, dZ, dscores):
    cc, cv, k1, k2, Z, t_pre, t = cache
    G = {}
    G["out_W2"] = t.T @ dscores[:, None]
    G["out_b2"] = np.array([dscores.sum()])
    dt = (dscores[:, None] @ P["out_W2"].T) * (t_pre > 0)
    G["out_W1"] = Z.T @ dt
    G["out_b1"] = dt.sum(axis=0)
    dZ = dZ + dt @ P["out_W1"].T
    dhv, dhc2, dpre2 = _conv_backward(P, "cv", dZ, k2, G)
    dhc, dhv1, dpre1 = _conv_backward(P, "vc", dhc2, k1, G)
    dhv = dhv + dhv1
    dhe = dpre1 + dpre2
    G["edge_W"] = B.E.T @ dhe
    G["edge_b"] = dhe.sum(axis=0)
    G["cons_W"], G["cons_b"] = _embed_backward(dhc, cc, P["cons_W"])
    G["var_W"], G["var_b"] = _embed_backward(dhv, cv, P["var_W"])
    return G


# ---------------------------------------------------------------- losses

def graph_embed(Z, var_graph=None, n_graphs=1):
    """Mean-pooled, L2-normalized embedding per graph (rows of the result)."""
    if var_graph is None:
        var_graph = np.zeros(len(Z), dtype=np.int64)
    counts = np.bincount(var_graph, minlength=n_graphs).astype(np.float64)
    u = _segsum(Z, var_graph, n_graphs) / counts[:, None]
    norm = np.linalg.norm(u, axis=1)
    e = np.zeros_like(u)
    ok = norm > EMBED_EPS
    e[ok] = u[ok] / norm[ok, None]
    if not ok.all():
        log.debug("zero graph embedding replaced by e1")
        e[~ok, 0] = 1.0
    return e, (u, norm, ok, counts)


def _embed_backward_pool(de, e, aux, var_graph):
    u, norm, ok, counts = aux
    du = np.zeros_like(u)
    du[ok] = (de[ok] - e[ok] * (e[ok] * de[ok]).sum(axis=1, keepdims=True)) / norm[ok, None]
    return (du / counts[:, None])[var_graph]


def alphas(theta, k_max):
    """alpha_0 = 1, alpha_k = 1 + sum_{j<=k} softplus(theta_j)."""
    sp = softplus(np.asarray(theta, dtype=np.float64)[:k_max])
    return 1.0 + np.concatenate([[0.0], np.cumsum(sp)])


def stratified_weight(gi, gj, theta):
    k = abs(int(gi) - int(gj))
    if k > len(theta):
        raise ValueError("group distance exceeds the number of weight parameters")
    return float(sigmoid(alphas(theta, k)[k]))


def _contrastive(E, groups, theta, tau, need_grad=False):
    if tau <= 0:
        raise ValueError("temperature must be positive")
    N = len(E)
    if N < 2:
        return 0.0, np.zeros_like(E), np.zeros(len(theta))
    groups = np.asarray(groups, dtype=np.int64)
    dist = np.abs(groups[:, None] - groups[None, :])
    kmax = int(dist.max()) if N else 0
    if kmax > len(theta):
        raise ValueError("group distance exceeds the number of weight parameters")
    alpha = alphas(theta, kmax)
    W = sigmoid(alpha)[dist]
    S = E @ E.T
    off = ~np.eye(N, dtype=bool)
    pos = (dist == 0) & off
    n_pos = pos.sum(axis=1)
    valid = n_pos > 0
    logits = np.where(off, W * S / tau, -np.inf)
    mx = logits.max(axis=1, keepdims=True)
    ex = np.where(off, np.exp(logits - mx), 0.0)
    den = ex.sum(axis=1, keepdims=True)
    lse = (np.log(den) + mx)[:, 0]
    pos_mean = np.where(valid, (S * pos).sum(axis=1) / np.maximum(n_pos, 1), 0.0) / tau
    loss = float(np.sum(np.where(valid, lse - pos_mean, 0.0)))
    if not need_grad:
        return loss, None, None
    soft = ex / den
    vmask = valid[:, None].astype(np.float64)
    dS = vmask * (soft * W / tau - pos / np.maximum(n_pos, 1)[:, None] / tau)
    dW = vmask * soft * S / tau
    dE = (dS + dS.T) @ E
    dalpha = np.bincount(dist.ravel(), weights=(dW * W * (1.0 - W)).ravel(), minlength=kmax + 1)
    dtheta = np.zeros(len(theta))
    if kmax:
        tail = np.cumsum(dalpha[1:][::-1])[::-1]
        dtheta[:kmax] = tail * sigmoid(np.asarray(theta)[:kmax])
    return loss, dE, dtheta


def contrastive_loss(E, groups, theta, tau):
    """Dynamic stratified contrastive loss summed over anchors with positives."""
    return _contrastive(np.asarray(E, dtype=np.float64), groups, theta, tau)[0]


def supervised_loss(scores, label_pos):
    """Cross entropy of one candidate score vector."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= label_pos < len(scores):
        raise ValueError("label outside the candidate set")
    mx = scores.max()
    return float(np.log(np.exp(scores - mx).sum()) + mx - scores[label_pos])


def _supervised(scores, B, need_grad):
    total = 0.0
    dscores = np.zeros_like(scores) if need_grad else None
    n = B.n_graphs
    for k in range(n):
        idx = B.cands[B.cand_ptr[k]:B.cand_ptr[k + 1]]
        s = scores[idx]
        mx = s.max()
        ex = np.exp(s - mx)
        z = ex.sum()
        total += np.log(z) + mx - s[B.label_pos[k]]
        if need_grad:
            p = ex / z
            p[B.label_pos[k]] -= 1.0
            dscores[idx] += p / n
    return total / n, dscores


def loss_and_grad(P, B, tau=0.08, contrastive=True, need_grad=True):
    """Total loss ``L_sup + softplus(theta_lambda) L_cons``, its parts and gradients."""
    Z, scores, cache = forward(P, B)
    sup, dscores = _supervised(scores, B, need_grad)
    lam = float(softplus(P["theta_lambda"][0]))
    parts = {"sup": sup, "cons": 0.0, "lambda": lam}
    dZ = np.zeros_like(Z)
    dtheta = np.zeros_like(P["theta"])
    dlam = 0.0
    if contrastive:
        E, aux = graph_embed(Z, B.var_graph, B.n_graphs)
        cons, dE, dth = _contrastive(E, B.groups, P["theta"], tau, need_grad)
        parts["cons"] = cons
        if need_grad:
            dZ = _embed_backward_pool(lam * dE, E, aux, B.var_graph)
            dtheta = lam * dth
            dlam = cons * float(sigmoid(P["theta_lambda"][0]))
    total = sup + lam * parts["cons"]
    parts["total"] = total
    if not need_grad:
        return total, parts, None
    G = backward(P, B, cache, dZ, dscores)
    G["theta"] = dtheta
    G["theta_lambda"] = np.array([dlam])
    check_finite(G, "gradient")
    return total, parts, {k: G[k] for k in P}


def total_loss(batch, params, tau=0.08, stats=None, contrastive=True):
    B = batch if isinstance(batch, Packed) else pack(batch, stats)
    total, parts, _ = loss_and_grad(params, B, tau, contrastive, need_grad=False)
    return total, parts


def grad(batch, params, tau=0.08, stats=None, contrastive=True):
    B = batch if isinstance(batch, Packed) else pack(batch, stats)
    return loss_and_grad(params, B, tau, contrastive)[2]


def gcnn_forward(graph, params, stats):
    """Variable embeddings (n x h) and scores over the graph's candidates."""
    C, E, V = stats.apply(graph)
    n = graph.n_vars
    B = Packed(C, E, V, graph.edge_index[0].astype(np.int64), graph.edge_index[1].astype(np.int64),
               np.zeros(n, dtype=np.int64), np.array([float(n)]), np.array([0, 0]),
               np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(1, dtype=np.int64))
    Z, scores, _ = forward(params, B)
    return Z, scores[graph.candidates]


def score_batch(samples, params, stats):
    """Candidate score vectors for many samples in one packed pass."""
    B = pack(samples, stats)
    _, scores, _ = forward(params, B)
    return [scores[B.cands[B.cand_ptr[k]:B.cand_ptr[k + 1]]] for k in range(B.n_graphs)]
