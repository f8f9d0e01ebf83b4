"""Toy TRTP network in plain numpy with hand-written reverse mode.

Dimension table (H = hidden, E = embedding width, M = decoder width,
T = horizon steps)::

    emb_hist.W  (E, 4)    emb_hist.b  (E,)      history point (x, y, phi, v)
    emb_path.W  (E, 3)    emb_path.b  (E,)      path point (x, y, phi)
    gru_hist.W* (H, E)    gru_hist.U* (H, H)    gru_hist.b* (H,)   * in z, r, n
    gru_path.*            same shapes as gru_hist
    att_int.Wq/Wk/Wv (H, H)                     interaction encoder
    att_prob.Wq/Wk   (H, H)                     probability decoder
    mlp.W1 (M, 2H)  mlp.b1 (M,)  mlp.W2 (3T, M)  mlp.b2 (3T,)

The history GRU is shared by the target and its neighbours. All coordinates
are expressed in the target vehicle's current frame.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError, TrainingDivergedError

HIST_FEATURES = 4
PATH_FEATURES = 3
CHECKPOINT_VERSION = 1
P_FLOOR = 1e-12


@dataclass(frozen=True)
class Dims:
    hidden: int = 64
    embed: int = 16
    mlp: int = 64
    horizon: int = 12

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H, E, M, T = self.hidden, self.embed, self.mlp, self.horizon
        s = {
            "emb_hist.W": (E, HIST_FEATURES), "emb_hist.b": (E,),
            "emb_path.W": (E, PATH_FEATURES), "emb_path.b": (E,),
        }
        for g in ("gru_hist", "gru_path"):
            for gate in "zrn":
                s[f"{g}.W{gate}"] = (H, E)
                s[f"{g}.U{gate}"] = (H, H)
                s[f"{g}.b{gate}"] = (H,)
        for m in ("Wq", "Wk", "Wv"):
            s[f"att_int.{m}"] = (H, H)
        for m in ("Wq", "Wk"):
            s[f"att_prob.{m}"] = (H, H)
        s.update({"mlp.W1": (M, 2 * H), "mlp.b1": (M,), "mlp.W2": (3 * T, M), "mlp.b2": (3 * T,)})
        return s


@dataclass
class NetParams:
    dims: Dims
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.dims.shapes()
        if set(expected) != set(self.tensors):
            raise InvalidInputError(f"parameter names differ from the dimension table: "
                                    f"{sorted(set(expected) ^ set(self.tensors))}")
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=float)
            if arr.shape != shape:
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} holds non-finite values")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @classmethod
    def init(cls, dims: Dims = Dims(), seed: int = 0) -> "NetParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in dims.shapes().items():
            if len(shape) == 1:
                tensors[name] = np.zeros(shape)
            else:
                tensors[name] = rng.normal(0.0, 1.0 / math.sqrt(shape[1]), size=shape)
        return cls(dims, tensors)

    @classmethod
    def zeros(cls, dims: Dims = Dims()) -> "NetParams":
        return cls(dims, {k: np.zeros(s) for k, s in dims.shapes().items()})

    def copy(self) -> "NetParams":
        return NetParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in sorted(self.tensors)])

    def equals(self, other: "NetParams") -> bool:
        return self.dims == other.dims and all(np.array_equal(self[k], other[k]) for k in self.tensors)


@dataclass
class NetActivations:
    e_target: np.ndarray
    e_updated: np.ndarray
    e_paths: list
    attention_weights: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


# -- building blocks --------------------------------------------------------

def _embed(p: NetParams, prefix: str, seq: np.ndarray):
    out = np.tanh(seq @ p[f"{prefix}.W"].T + p[f"{prefix}.b"])
    return out


def _embed_backward(p: NetParams, prefix: str, seq, out, d_out, grads):
    d_pre = d_out * (1.0 - out ** 2)
    grads[f"{prefix}.W"] += d_pre.T @ seq
    grads[f"{prefix}.b"] += d_pre.sum(axis=0)


def _gru_run(p: NetParams, prefix: str, xs: np.ndarray):
    H = p[f"{prefix}.Uz"].shape[0]
    h = np.zeros(H)
    steps = []
    Wz, Uz, bz = p[f"{prefix}.Wz"], p[f"{prefix}.Uz"], p[f"{prefix}.bz"]
    Wr, Ur, br = p[f"{prefix}.Wr"], p[f"{prefix}.Ur"], p[f"{prefix}.br"]
    Wn, Un, bn = p[f"{prefix}.Wn"], p[f"{prefix}.Un"], p[f"{prefix}.bn"]
    for x in xs:
        z = _sigmoid(Wz @ x + Uz @ h + bz)
        r = _sigmoid(Wr @ x + Ur @ h + br)
        n = np.tanh(Wn @ x + Un @ (r * h) + bn)
        h_new = (1.0 - z) * n + z * h
        steps.append((x, h, z, r, n))
        h = h_new
    return h, steps


def _gru_backward(p: NetParams, prefix: str, steps, dh, grads) -> np.ndarray:
    """Backprop through time; returns the gradient w.r.t. every input vector."""
    Uz, Ur, Un = p[f"{prefix}.Uz"], p[f"{prefix}.Ur"], p[f"{prefix}.Un"]
    Wz, Wr, Wn = p[f"{prefix}.Wz"], p[f"{prefix}.Wr"], p[f"{prefix}.Wn"]
    dxs = np.zeros((len(steps), Wz.shape[1]))
    for i in range(len(steps) - 1, -1, -1):
        x, h, z, r, n = steps[i]
        dz = dh * (h - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dn_pre = dn * (1.0 - n * n)
        grads[f"{prefix}.Wn"] += np.outer(dn_pre, x)
        grads[f"{prefix}.Un"] += np.outer(dn_pre, r * h)
        grads[f"{prefix}.bn"] += dn_pre
        drh = Un.T @ dn_pre
        dr = drh * h
        dh_prev += drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        grads[f"{prefix}.Wz"] += np.outer(dz_pre, x)
        grads[f"{prefix}.Uz"] += np.outer(dz_pre, h)
        grads[f"{prefix}.bz"] += dz_pre
        grads[f"{prefix}.Wr"] += np.outer(dr_pre, x)
        grads[f"{prefix}.Ur"] += np.outer(dr_pre, h)
        grads[f"{prefix}.br"] += dr_pre
        dh_prev += Uz.T @ dz_pre + Ur.T @ dr_pre
        dxs[i] = Wn.T @ dn_pre + Wz.T @ dz_pre + Wr.T @ dr_pre
        dh = dh_prev
    return dxs


def _encode_sequence(p: NetParams, kind: str, seq) -> tuple[np.ndarray, tuple]:
    seq = np.atleast_2d(np.asarray(seq, dtype=float))
    width = HIST_FEATURES if kind == "hist" else PATH_FEATURES
    if seq.shape[0] < 1 or seq.shape[1] != width:
        raise InvalidInputError(f"{kind} sequence must be (n >= 1, {width}), got {seq.shape}")
    emb = _embed(p, f"emb_{kind}", seq)
    h, steps = _gru_run(p, f"gru_{kind}", emb)
    return h, (kind, seq, emb, steps)


def _encode_backward(p: NetParams, cache, dh, grads):
    kind, seq, emb, steps = cache
    d_emb = _gru_backward(p, f"gru_{kind}", steps, dh, grads)
    _embed_backward(p, f"emb_{kind}", seq, emb, d_emb, grads)


# -- public operations --------------------------------------------------------

def gru_encode(weights: dict[str, np.ndarray], sequence) -> np.ndarray:
    """Final hidden state of a GRU (zero initial state) over ``sequence``.

    ``weights`` holds Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn.
    """
    xs = np.atleast_2d(np.asarray(sequence, dtype=float))
    try:
        W = weights["Wz"]
        if xs.shape[0] < 1 or xs.shape[1] != W.shape[1]:
            raise InvalidInputError(f"sequence width {xs.shape[1]} does not match GRU input {W.shape[1]}")
        wrapped = _Plain({f"g.{k}": v for k, v in weights.items()})
        h, _ = _gru_run(wrapped, "g", xs)
    except KeyError as exc:
        raise InvalidInputError(f"missing GRU weight {exc}") from exc
    return h


class _Plain:
    def __init__(self, d):
        self.d = d

    def __getitem__(self, k):
        return self.d[k]


def attention(query, keys, values, wq=None, wk=None, wv=None) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention of one query over a key/value set.

    Optional projection matrices are applied before scoring. Returns
    (output, weights).
    """
    q = np.asarray(query, dtype=float)
    K = np.atleast_2d(np.asarray(keys, dtype=float))
    V = np.atleast_2d(np.asarray(values, dtype=float))
    if len(K) < 1 or len(K) != len(V):
        raise InvalidInputError("keys and values must share a non-zero count")
    if wq is not None:
        q = wq @ q
    if wk is not None:
        K = K @ wk.T
    if wv is not None:
        V = V @ wv.T
    if K.shape[1] != q.shape[0]:
        raise InvalidInputError("query and key widths differ")
    w = _softmax(K @ q / math.sqrt(q.shape[0]))
    return w @ V, w


def encode(p: NetParams, history, neighbors: Sequence = (), paths: Sequence = ()) -> NetActivations:
    """Encode the target history with its neighbours, plus every candidate path."""
    H = p.dims.hidden
    e_t, c_t = _encode_sequence(p, "hist", history)
    neigh = [_encode_sequence(p, "hist", nb) for nb in neighbors]
    # the target attends over itself and its neighbours, so the set is never empty
    members = np.vstack([e_t] + [e for e, _ in neigh])
    Q = p["att_int.Wq"] @ e_t
    K = members @ p["att_int.Wk"].T
    V = members @ p["att_int.Wv"].T
    w = _softmax(K @ Q / math.sqrt(H))
    e_u = e_t + w @ V
    enc_paths = [_encode_sequence(p, "path", path) for path in paths]
    cache = {"c_t": c_t, "neigh": neigh, "members": members, "Q": Q, "K": K, "V": V, "w": w,
             "paths": enc_paths}
    return NetActivations(e_t, e_u, [e for e, _ in enc_paths], w, cache)


def decode(p: NetParams, e_updated: np.ndarray, e_paths: Sequence[np.ndarray], horizon_steps: int | None = None):
    """Trajectories (k, T, 3) from the MLP head and path probabilities (k,)."""
    T = p.dims.horizon if horizon_steps is None else horizon_steps
    if T != p.dims.horizon:
        raise InvalidInputError(f"decoder is built for {p.dims.horizon} steps, asked for {T}")
    if len(e_paths) == 0:
        raise InvalidInputError("need at least one path encoding")
    E = np.atleast_2d(np.asarray(e_paths, dtype=float))
    if E.shape[1] != p.dims.hidden or e_updated.shape != (p.dims.hidden,):
        raise InvalidInputError("encoding width does not match the hidden size")
    cat = np.hstack([np.repeat(e_updated[None, :], len(E), axis=0), E])
    h1 = np.tanh(cat @ p["mlp.W1"].T + p["mlp.b1"])
    out = h1 @ p["mlp.W2"].T + p["mlp.b2"]
    q = p["att_prob.Wq"] @ e_updated
    keys = E @ p["att_prob.Wk"].T
    probs = _softmax(keys @ q / math.sqrt(p.dims.hidden))
    return out.reshape(len(E), T, 3), probs, {"cat": cat, "h1": h1, "q": q, "keys": keys, "E": E}


def forward(p: NetParams, history, neighbors, paths):
    act = encode(p, history, neighbors, paths)
    traj, probs, dcache = decode(p, act.e_updated, act.e_paths)
    return traj, probs, act, dcache


def loss(pred_trajectories, probabilities, gt_positions, gt_index: int, alpha: float = 0.5,
         beta: float = 1.0) -> tuple[float, float, float, bool]:
    """(L_traj, L_pro, L, clamped) with L_traj summed over positional errors of the P* trajectory."""
    probs = np.asarray(probabilities, dtype=float)
    if not 0 <= gt_index < len(probs):
        raise InvalidInputError(f"gt_path_index {gt_index} outside [0, {len(probs)})")
    pred = np.asarray(pred_trajectories, dtype=float)[gt_index][:, :2]
    gt = np.asarray(gt_positions, dtype=float)[:, :2]
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    l_traj = float(np.linalg.norm(pred - gt, axis=1).sum())
    p_star = float(probs[gt_index])
    clamped = p_star <= P_FLOOR
    l_pro = -math.log(max(p_star, P_FLOOR))
    return l_traj, l_pro, alpha * l_traj + beta * l_pro, clamped


def loss_and_grad(p: NetParams, sample, alpha: float = 0.5, beta: float = 1.0):
    """Full loss of one sample and its gradient for every tensor."""
    traj, probs, act, dc = forward(p, sample.history, sample.neighbors, sample.paths)
    k = sample.gt_index
    l_traj, l_pro, total, clamped = loss(traj, probs, sample.gt, k, alpha, beta)
    grads = {name: np.zeros_like(v) for name, v in p.tensors.items()}
    H, T = p.dims.hidden, p.dims.horizon
    n_paths = len(probs)

    # trajectory head, only the P* row carries error
    diff = traj[k, :, :2] - sample.gt[:, :2]
    norm = np.linalg.norm(diff, axis=1)
    d_pos = np.where(norm[:, None] > 0, diff / np.maximum(norm, 1e-300)[:, None], 0.0)
    d_out = np.zeros((n_paths, T, 3))
    d_out[k, :, :2] = alpha * d_pos
    d_out = d_out.reshape(n_paths, 3 * T)
    grads["mlp.W2"] += d_out.T @ dc["h1"]
    grads["mlp.b2"] += d_out.sum(axis=0)
    d_h1 = d_out @ p["mlp.W2"]
    d_pre1 = d_h1 * (1.0 - dc["h1"] ** 2)
    grads["mlp.W1"] += d_pre1.T @ dc["cat"]
    grads["mlp.b1"] += d_pre1.sum(axis=0)
    d_cat = d_pre1 @ p["mlp.W1"]
    d_eu = d_cat[:, :H].sum(axis=0)
    d_E = d_cat[:, H:].copy()

    # probability head; a clamped p* has zero slope
    d_s = np.zeros(n_paths)
    if not clamped:
        d_s = beta * probs.copy()
        d_s[k] -= beta
    scale = 1.0 / math.sqrt(H)
    d_q = scale * (dc["keys"].T @ d_s)
    d_keys = scale * np.outer(d_s, dc["q"])
    grads["att_prob.Wq"] += np.outer(d_q, act.e_updated)
    d_eu += p["att_prob.Wq"].T @ d_q
    grads["att_prob.Wk"] += d_keys.T @ dc["E"]
    d_E += d_keys @ p["att_prob.Wk"]

    for (_, cache), de in zip(act.cache["paths"], d_E):
        _encode_backward(p, cache, de, grads)

    # interaction encoder, e_u = e_t + softmax(K Q / sqrt H) V
    c = act.cache
    w, Q, K, V, members = c["w"], c["Q"], c["K"], c["V"], c["members"]
    d_members = np.zeros_like(members)
    d_et = d_eu.copy()
    d_w = V @ d_eu
    d_V = np.outer(w, d_eu)
    d_sc = w * (d_w - w @ d_w)
    d_Q = scale * (K.T @ d_sc)
    d_K = scale * np.outer(d_sc, Q)
    grads["att_int.Wq"] += np.outer(d_Q, act.e_target)
    d_et += p["att_int.Wq"].T @ d_Q
    grads["att_int.Wk"] += d_K.T @ members
    grads["att_int.Wv"] += d_V.T @ members
    d_members += d_K @ p["att_int.Wk"] + d_V @ p["att_int.Wv"]
    d_members[0] += d_et
    _encode_backward(p, c["c_t"], d_members[0], grads)
    for (_, cache), de in zip(c["neigh"], d_members[1:]):
        _encode_backward(p, cache, de, grads)
    return (l_traj, l_pro, total), grads


def dataset_loss(p: NetParams, samples, alpha: float = 0.5, beta: float = 1.0) -> float:
    total = 0.0
    for s in samples:
        traj, probs, _, _ = forward(p, s.history, s.neighbors, s.paths)
        total += loss(traj, probs, s.gt, s.gt_index, alpha, beta)[2]
    return total / len(samples)


@dataclass
class TrainConfig:
    steps: int = 300
    learning_rate: float = 3e-3
    alpha: float = 0.5
    beta: float = 1.0
    batch_size: int = 16
    clip_norm: float = 10.0
    seed: int = 0
    optimizer: str = "adam"


def train_toy(samples, params: NetParams, cfg: TrainConfig = TrainConfig(), on_step=None) -> tuple[NetParams, list]:
    """Minibatch descent on the combined loss; returns (params, per-step batch losses)."""
    if not samples:
        raise InvalidInputError("training set is empty")
    if cfg.optimizer not in ("adam", "sgd"):
        raise InvalidInputError(f"unknown optimizer {cfg.optimizer!r}")
    p = params.copy()
    rng = np.random.default_rng(cfg.seed)
    m = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    v2 = {k: np.zeros_like(v) for k, v in p.tensors.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for step in range(cfg.steps):
        idx = rng.choice(len(samples), size=min(cfg.batch_size, len(samples)), replace=False)
        acc = {k: np.zeros_like(v) for k, v in p.tensors.items()}
        batch_loss = 0.0
        for i in idx:
            (_, _, total), g = loss_and_grad(p, samples[i], cfg.alpha, cfg.beta)
            batch_loss += total
            for k in acc:
                acc[k] += g[k]
        batch_loss /= len(idx)
        if not math.isfinite(batch_loss):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        gnorm = math.sqrt(sum(float((g / len(idx)).ravel() @ (g / len(idx)).ravel()) for g in acc.values()))
        if not math.isfinite(gnorm):
            raise TrainingDivergedError(f"non-finite gradient at step {step}")
        clip = min(1.0, cfg.clip_norm / gnorm) if gnorm > 0 else 1.0
        for k in p.tensors:
            g = acc[k] * (clip / len(idx))
            if cfg.optimizer == "sgd":
                p.tensors[k] = p.tensors[k] - cfg.learning_rate * g
            else:
                m[k] = b1 * m[k] + (1 - b1) * g
                v2[k] = b2 * v2[k] + (1 - b2) * g * g
                mh = m[k] / (1 - b1 ** (step + 1))
                vh = v2[k] / (1 - b2 ** (step + 1))
                p.tensors[k] = p.tensors[k] - cfg.learning_rate * mh / (np.sqrt(vh) + eps)
        history.append(batch_loss)
        if on_step is not None:
            on_step(step, batch_loss)
    return p, history


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(p: NetParams, path) -> None:
    doc = {
        "format": "riskmpcc-trtp",
        "version": CHECKPOINT_VERSION,
        "dims": {"hidden": p.dims.hidden, "embed": p.dims.embed, "mlp": p.dims.mlp, "horizon": p.dims.horizon},
        "shapes": {k: list(s) for k, s in p.dims.shapes().items()},
        # repr of a float64 round-trips exactly through JSON
        "tensors": {k: p[k].ravel().tolist() for k in sorted(p.tensors)},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> NetParams:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != "riskmpcc-trtp" or doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError("not a supported checkpoint")
    dims = Dims(**doc["dims"])
    shapes = dims.shapes()
    if {k: list(s) for k, s in shapes.items()} != doc.get("shapes"):
        raise InvalidInputError("checkpoint dimension header does not match its dims")
    tensors = {}
    for k, shape in shapes.items():
        flat = np.asarray(doc["tensors"].get(k, []), dtype=float)
        if flat.size != int(np.prod(shape)):
            raise InvalidInputError(f"tensor {k} has {flat.size} values, expected {int(np.prod(shape))}")
        tensors[k] = flat.reshape(shape)
    return NetParams(dims, tensors)
