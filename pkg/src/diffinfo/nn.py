"""Small fully connected network with time/condition inputs, manual backprop and Adam.

Shapes: ``x`` is (n, data_dim), ``s`` is a scalar or (n,), ``condition``
is (n, cond_dim) or None. A ``drop`` mask of shape (n,) replaces the
condition of the flagged rows with the learned null embedding. The
projection also sees a 0/1 drop indicator, so the null embedding can never
be confused with a real condition of the same value.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

CHECKPOINT_VERSION = 2
FIXED_KEYS = ("cond_shift", "cond_scale")  # set from data, never optimized


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class NetworkParams:
    arrays: dict[str, np.ndarray]
    data_dim: int
    cond_dim: int
    hidden: tuple[int, ...]
    embed_dim: int
    n_freq: int
    horizon: float = 1.0
    seed: int = 0

    @property
    def n_hidden(self) -> int:
        return len(self.hidden)

    @property
    def freqs(self) -> np.ndarray:
        return np.geomspace(1.0, 1000.0, self.n_freq)

    @property
    def time_dim(self) -> int:
        return 1 + 2 * self.n_freq

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.arrays.items()}, self.data_dim,
                             self.cond_dim, self.hidden, self.embed_dim, self.n_freq,
                             self.horizon, self.seed)

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.arrays[k].ravel() for k in sorted(self.arrays)])

    def meta(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "data_dim": self.data_dim,
            "cond_dim": self.cond_dim,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "n_freq": self.n_freq,
            "horizon": self.horizon,
            "seed": self.seed,
            "shapes": {k: list(v.shape) for k, v in sorted(self.arrays.items())},
        }

    def save(self, path: str | Path, extra_meta: dict | None = None) -> None:
        meta = self.meta()
        if extra_meta:
            meta["extra"] = extra_meta
        # fixed zip timestamps so identical parameters give identical bytes
        entries = {"__meta__": np.array(json.dumps(meta, sort_keys=True)), **self.arrays}
        with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
            for key in sorted(entries):
                info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asarray(entries[key]), allow_pickle=False)
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "NetworkParams":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            arrays = {k: data[k].copy() for k in meta["shapes"]}
        for k, shape in meta["shapes"].items():
            if list(arrays[k].shape) != shape:
                raise ValueError(f"checkpoint array {k} has the wrong shape")
        return cls(arrays, meta["data_dim"], meta["cond_dim"], tuple(meta["hidden"]),
                   meta["embed_dim"], meta["n_freq"], meta["horizon"], meta["seed"])


def net_init(
    data_dim: int,
    hidden=(256, 256, 256),
    cond_dim: int = 0,
    seed: int = 0,
    embed_dim: int = 64,
    n_freq: int = 16,
    horizon: float = 1.0,
) -> NetworkParams:
    """Fan-in scaled normal initialization; the null embedding starts at zero."""
    hidden = tuple(int(h) for h in hidden)
    if len(hidden) < 1:
        raise ValueError("need at least one hidden layer")
    if data_dim < 1 or any(h < 1 for h in hidden) or cond_dim < 0 or n_freq < 1:
        raise ValueError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    embed_dim = embed_dim if cond_dim > 0 else 0
    if cond_dim > 0:
        # last row acts on the drop indicator
        arrays["cond_w"] = rng.standard_normal((cond_dim + 1, embed_dim)) / np.sqrt(cond_dim + 1)
        arrays["cond_b"] = np.zeros(embed_dim)
        arrays["null"] = np.zeros(cond_dim)
        # fixed input standardization, not trained
        arrays["cond_shift"] = np.zeros(cond_dim)
        arrays["cond_scale"] = np.ones(cond_dim)
    fan_in = data_dim + 1 + 2 * n_freq + embed_dim
    for i, width in enumerate(hidden):
        arrays[f"w{i}"] = rng.standard_normal((fan_in, width)) / np.sqrt(fan_in)
        arrays[f"b{i}"] = np.zeros(width)
        fan_in = width
    arrays["w_out"] = rng.standard_normal((fan_in, data_dim)) / np.sqrt(fan_in)
    arrays["b_out"] = np.zeros(data_dim)
    return NetworkParams(arrays, data_dim, cond_dim, hidden, embed_dim, n_freq, float(horizon), int(seed))


def _silu(z):
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return z * sig, sig


def time_features(params: NetworkParams, s, n: int) -> np.ndarray:
    u = np.broadcast_to(np.asarray(s, dtype=float) / params.horizon, (n,))
    ang = u[:, None] * params.freqs
    return np.concatenate([u[:, None], np.sin(ang), np.cos(ang)], axis=1)


def _resolve_condition(params: NetworkParams, condition, drop, n):
    """Projection input rows ``[standardized condition or null, drop indicator]``."""
    if params.cond_dim == 0:
        return None, None
    a = params.arrays
    if condition is None:
        mask = np.ones(n, dtype=bool)
        cond = np.broadcast_to(a["null"], (n, params.cond_dim))
    else:
        cond = np.broadcast_to(np.asarray(condition, dtype=float), (n, params.cond_dim))
        cond = (cond - a["cond_shift"]) / a["cond_scale"]
        mask = np.zeros(n, dtype=bool) if drop is None else np.asarray(drop, dtype=bool)
        if mask.any():
            cond = cond.copy()
            cond[mask] = a["null"]
    return np.concatenate([cond, mask[:, None].astype(float)], axis=1), mask


def _forward(params: NetworkParams, x, s, condition=None, drop=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if x.shape[1] != params.data_dim:
        raise ValueError(f"expected data_dim {params.data_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("non-finite network input")
    a = params.arrays
    cond, mask = _resolve_condition(params, condition, drop, n)
    parts = [x, time_features(params, s, n)]
    if cond is not None:
        parts.append(cond @ a["cond_w"] + a["cond_b"])
    h = np.concatenate(parts, axis=1)
    cache = {"inputs": [h], "sigs": [], "pre": [], "cond": cond, "mask": mask}
    for i in range(params.n_hidden):
        z = h @ a[f"w{i}"] + a[f"b{i}"]
        h, sig = _silu(z)
        cache["pre"].append(z)
        cache["sigs"].append(sig)
        cache["inputs"].append(h)
    out = h @ a["w_out"] + a["b_out"]
    return out, cache


def net_forward(params: NetworkParams, x, s, condition=None, drop=None) -> np.ndarray:
    out, _ = _forward(params, x, s, condition, drop)
    return out[0] if np.ndim(x) == 1 else out


@dataclass
class Batch:
    x: np.ndarray
    s: np.ndarray
    condition: np.ndarray | None = None
    drop: np.ndarray | None = None


LossClosure = Callable[[np.ndarray], tuple[float, np.ndarray]]


def net_backward(params: NetworkParams, batch: Batch, loss_closure: LossClosure):
    """Reverse-mode gradients of ``loss_closure(net(batch))``.

    ``loss_closure`` maps the (n, data_dim) output to ``(loss, dloss/doutput)``.
    Returns ``(loss, grads)`` with ``grads`` keyed like ``params.arrays``.
    """
    out, cache = _forward(params, batch.x, batch.s, batch.condition, batch.drop)
    loss, g = loss_closure(out)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    a = params.arrays
    grads: dict[str, np.ndarray] = {}
    h = cache["inputs"][-1]
    grads["w_out"] = h.T @ g
    grads["b_out"] = g.sum(axis=0)
    g = g @ a["w_out"].T
    for i in reversed(range(params.n_hidden)):
        z, sig = cache["pre"][i], cache["sigs"][i]
        g = g * (sig * (1.0 + z * (1.0 - sig)))
        h_in = cache["inputs"][i]
        grads[f"w{i}"] = h_in.T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ a[f"w{i}"].T
    if params.cond_dim > 0:
        g_emb = g[:, -params.embed_dim:]
        cond, mask = cache["cond"], cache["mask"]
        grads["cond_w"] = cond.T @ g_emb
        grads["cond_b"] = g_emb.sum(axis=0)
        g_cond = g_emb @ a["cond_w"][:-1].T
        grads["null"] = g_cond[mask].sum(axis=0) if mask.any() else np.zeros(params.cond_dim)
    return float(loss), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    extra: dict = field(default_factory=dict)


def adam_init(params: NetworkParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    return AdamState(zeros, {k: np.zeros_like(v) for k, v in params.arrays.items()},
                     0, lr, beta1, beta2, eps)


def adam_step(params: NetworkParams, grads: dict, state: AdamState, lr: float | None = None):
    """One Adam update, in place; returns ``(params, state)``."""
    state.step += 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params.arrays[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
