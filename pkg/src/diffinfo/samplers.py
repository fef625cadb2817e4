"""Integrators for the forward SDE, the reverse SDE and the guided probability-flow ODE.

Reverse-time integration runs over the schedule grid from ``s = T`` down to
``s = s_min``; the reported samples live at ``s_min``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .diffusion import DiffusionSchedule, GaussianDiffusionOracle

TAGS = ("analytic-conditional", "analytic-marginal", "analytic-joint", "learned", "cfg-combined", "other")


@dataclass(frozen=True)
class ScoreField:
    """A score ``(x, s, condition) -> grad log p`` with a provenance tag.

    ``divergence``, when given, returns the exact per-row divergence of the
    score in ``x``; estimators fall back to randomized traces otherwise.
    ``base``, when given, is a field that differs from this one by the same
    condition-free term of ``x`` alone, so differences of two fields can be
    taken on their bases exactly.
    """

    fn: Callable
    tag: str = "other"
    dim: int | None = None
    divergence: Callable | None = None
    base: "ScoreField | None" = None

    def __call__(self, x, s, condition=None) -> np.ndarray:
        return self.fn(np.atleast_2d(x), s, condition)


def analytic_fields(oracle: GaussianDiffusionOracle) -> tuple[ScoreField, ScoreField]:
    """Exact conditional and marginal score fields of a joint Gaussian."""
    dim = oracle.spec.dim_x

    def cond(x, s, y):
        if y is None:
            raise ValueError("conditional field needs a condition")
        return oracle.conditional_score(x, s, y)

    def cond_div(x, s, y):
        return np.broadcast_to(oracle.conditional_score_divergence(s), (np.atleast_2d(x).shape[0],))

    def marg(x, s, y=None):
        return oracle.marginal_score(x, s)

    def marg_div(x, s, y=None):
        return np.broadcast_to(oracle.marginal_score_divergence(s), (np.atleast_2d(x).shape[0],))

    return (
        ScoreField(cond, "analytic-conditional", dim, cond_div),
        ScoreField(marg, "analytic-marginal", dim, marg_div),
    )


def zero_score_field(dim: int) -> ScoreField:
    return ScoreField(lambda x, s, c=None: np.zeros_like(x, dtype=float), "other", dim,
                      lambda x, s, c=None: np.zeros(np.atleast_2d(x).shape[0]))


def cfg_combine(cond_field: ScoreField, marg_field: ScoreField, w: float) -> ScoreField:
    """Guided score ``(1+w) cond - w marg``, written as ``cond + w (cond - marg)``.

    The form keeps the result bit-identical to ``cond`` when both fields agree.
    The condition is forwarded to both fields; marginal fields ignore it.
    """

    def fn(x, s, y):
        c = cond_field(x, s, y)
        if w == 0:
            return c
        return c + w * (c - marg_field(x, s, y))

    return ScoreField(fn, "cfg-combined", cond_field.dim)


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 1000
    cfg_weight: float = 0.0
    seed: int = 0
    mode: str = "sde"

    def __post_init__(self):
        if int(self.steps) < 2:
            raise ValueError("steps must be >= 2")
        if self.cfg_weight < 0:
            raise ValueError("cfg_weight must be non-negative")
        if self.mode not in ("sde", "ode"):
            raise ValueError("mode must be 'sde' or 'ode'")


class SamplerDivergence(FloatingPointError):
    def __init__(self, message: str, time_index: int, s: float, norm: float):
        super().__init__(f"{message} (step {time_index}, s={s:.6g}, max norm={norm:.3g})")
        self.diagnostics = {"time_index": time_index, "s": s, "norm": norm}


def _check_finite(x, k, s):
    if not np.all(np.isfinite(x)):
        norms = np.linalg.norm(np.where(np.isfinite(x), x, np.inf), axis=-1)
        raise SamplerDivergence("non-finite sampler state", k, float(s), float(np.max(norms)))


def forward_sde_em(sched: DiffusionSchedule, x0, rng: np.random.Generator, steps: int | None = None):
    """Euler-Maruyama path of ``dx = -beta x / 2 ds + sqrt(beta) dB`` on ``[0, T]``.

    Returns ``(times, path)`` with ``path`` of shape (steps + 1, *x0.shape).
    """
    n_steps = sched.steps if steps is None else int(steps)
    times = np.linspace(0.0, sched.horizon, n_steps + 1)
    x = np.array(x0, dtype=float)
    path = np.empty((n_steps + 1,) + x.shape)
    path[0] = x
    for k in range(n_steps):
        s, ds = times[k], times[k + 1] - times[k]
        beta = float(sched.beta(s))
        x = x - 0.5 * beta * x * ds + np.sqrt(beta * ds) * rng.standard_normal(x.shape)
        path[k + 1] = x
    return times, path


def _broadcast_condition(condition, n):
    if condition is None:
        return None
    c = np.asarray(condition, dtype=float)
    return np.broadcast_to(c, (n, c.shape[-1])) if c.ndim == 1 else c


def reverse_sde_em(
    field: ScoreField,
    sched: DiffusionSchedule,
    n: int,
    cfg: SamplerConfig,
    condition=None,
    dim: int | None = None,
) -> np.ndarray:
    """Euler-Maruyama on ``dx = -(b_+ - beta * score) dt + sqrt(beta) dB`` from ``N(0, I)``.

    ``cfg.cfg_weight`` plays no role here; combine fields with
    :func:`cfg_combine` to guide.
    """
    if cfg.mode != "sde":
        raise ValueError("reverse_sde_em needs cfg.mode == 'sde'")
    dim = dim or field.dim
    if dim is None:
        raise ValueError("field dimension unknown; pass dim")
    rng = np.random.default_rng(cfg.seed)
    cond = _broadcast_condition(condition, n)
    times = sched.times(cfg.steps)[::-1]
    x = rng.standard_normal((n, dim))
    for k in range(len(times) - 1):
        s, dt = times[k], times[k] - times[k + 1]
        beta = float(sched.beta(s))
        drift = 0.5 * beta * x + beta * field(x, s, cond)
        x = x + drift * dt + np.sqrt(beta * dt) * rng.standard_normal(x.shape)
        _check_finite(x, k, s)
    return x


def pf_ode_cfg(
    cond_field: ScoreField,
    marg_field: ScoreField,
    y,
    sched: DiffusionSchedule,
    cfg: SamplerConfig,
    n: int,
    dim: int | None = None,
    x_init: np.ndarray | None = None,
) -> np.ndarray:
    """RK4 on the guided probability-flow ODE ``dx/dt = -b_+ + beta/2 [(1+w) cond - w marg]``.

    ``y`` is one condition vector for all chains or one row per chain.
    The only randomness is the ``N(0, I)`` initial draw, seeded by ``cfg.seed``.
    """
    dim = dim or cond_field.dim
    if dim is None:
        raise ValueError("field dimension unknown; pass dim")
    if marg_field.dim is not None and cond_field.dim is not None and marg_field.dim != cond_field.dim:
        raise ValueError("conditional and marginal fields differ in dimension")
    if x_init is None:
        x = np.random.default_rng(cfg.seed).standard_normal((n, dim))
    else:
        x = np.array(x_init, dtype=float)
    guided = cfg_combine(cond_field, marg_field, cfg.cfg_weight)
    cond = _broadcast_condition(y, n)
    times = sched.times(cfg.steps)[::-1]

    def velocity(x, s):
        beta = float(sched.beta(s))
        return 0.5 * beta * x + 0.5 * beta * guided(x, s, cond)

    for k in range(len(times) - 1):
        s0, s1 = times[k], times[k + 1]
        h = s0 - s1
        sm = 0.5 * (s0 + s1)
        k1 = velocity(x, s0)
        k2 = velocity(x + 0.5 * h * k1, sm)
        k3 = velocity(x + 0.5 * h * k2, sm)
        k4 = velocity(x + h * k3, s1)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        _check_finite(x, k, s1)
    return x


def pf_ode_affine_map(cond_field: ScoreField, marg_field: ScoreField, dim_y: int,
                      sched: DiffusionSchedule, cfg: SamplerConfig, dim: int | None = None):
    """Matrices ``(M, N)`` with ``pf_ode_cfg(x_init=z, y) = M z + N y``.

    Valid when both fields are affine in ``(x, y)`` (e.g. the analytic
    Gaussian fields), since every RK4 step is then affine too.
    """
    dim = dim or cond_field.dim
    m_map = pf_ode_cfg(cond_field, marg_field, np.zeros(dim_y), sched, cfg, dim, dim, x_init=np.eye(dim)).T
    offset = pf_ode_cfg(cond_field, marg_field, np.zeros(dim_y), sched, cfg, 1, dim, x_init=np.zeros((1, dim)))
    n_map = pf_ode_cfg(cond_field, marg_field, np.eye(dim_y), sched, cfg, dim_y, dim,
                       x_init=np.zeros((dim_y, dim))) - offset
    if np.max(np.abs(offset)) > 1e-8 * max(1.0, np.max(np.abs(m_map))):
        raise ValueError("fields are not linear: nonzero response at the origin")
    return m_map, n_map.T
