"""Information functionals of a diffusion process, estimated by Monte Carlo over the forward process.

Every time integral runs over the schedule grid on ``[s_min, T]`` with the
trapezoid rule. At each grid time a fresh batch of data and forward noise
is drawn, so per-time estimates are independent and their standard errors
combine through the quadrature weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .diffusion import DiffusionSchedule, forward_jump_sample, kernel_params
from .gaussian_model import (
    GaussianDist,
    JointGaussianSpec,
    gaussian_kl,
    joint_covariance,
    logdet_spd,
    sample_pairs,
    total_correlation_gaussian,
)
from .samplers import ScoreField
from .training import EpsilonModel

MIN_MC = 100

# sampler(rng, n) -> (x, y or None)
Sampler = Callable[[np.random.Generator, int], tuple]


@dataclass
class EntropyReport:
    times: np.ndarray
    rate: np.ndarray
    rate_stderr: np.ndarray
    cumulative: np.ndarray
    mc_stderr: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    @property
    def total_stderr(self) -> float:
        return float(self.mc_stderr[-1])

    def peak_time(self) -> float:
        return float(self.times[int(np.argmax(self.rate))])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "rate", "cumulative", "stderr", "rate_stderr"])
            for row in zip(self.times, self.rate, self.cumulative, self.mc_stderr, self.rate_stderr):
                w.writerow([repr(float(v)) for v in row])

    def save(self, path: str | Path) -> tuple[Path, Path]:
        """Write ``<path>.csv`` and a ``<path>.json`` meta sidecar."""
        path = Path(path)
        csv_path, meta_path = path.with_suffix(".csv"), path.with_suffix(".json")
        self.to_csv(csv_path)
        meta = dict(self.meta, total=self.total, total_stderr=self.total_stderr)
        meta_path.write_text(json.dumps(meta, indent=2, default=float))
        return csv_path, meta_path

    @classmethod
    def load(cls, path: str | Path) -> "EntropyReport":
        path = Path(path)
        data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".json").read_text())
        meta.pop("total", None)
        meta.pop("total_stderr", None)
        return cls(data[:, 0], data[:, 1], data[:, 4], data[:, 2], data[:, 3], meta)


def _cumulative_stderr(times, se):
    """Standard error of each trapezoid partial integral from independent per-node errors."""
    h = np.diff(times)
    var = np.asarray(se, dtype=float) ** 2
    out = np.zeros(len(times))
    if len(times) < 2:
        return out
    # node j < k with 0 < j contributes with weight (h[j-1] + h[j]) / 2
    mid = np.concatenate([[0.0], 0.25 * (h[:-1] + h[1:]) ** 2 * var[1:-1]])
    prefix = np.cumsum(mid)  # prefix[k-1] = sum over 0 < j < k
    k = np.arange(1, len(times))
    out[1:] = 0.25 * h[0] ** 2 * var[0] + prefix[k - 1] + 0.25 * h[k - 1] ** 2 * var[k]
    return np.sqrt(out)


def integrate_over_time(
    integrand: Callable[[float, np.random.Generator], np.ndarray],
    times: np.ndarray,
    seed: int,
    meta: dict | None = None,
) -> EntropyReport:
    """Trapezoid integral of the per-time Monte-Carlo mean of ``integrand(s, rng)``.

    Each grid time gets its own RNG stream spawned from ``seed``.
    """
    streams = np.random.SeedSequence(seed).spawn(len(times))
    rate = np.empty(len(times))
    se = np.empty(len(times))
    n = None
    for k, (s, ss) in enumerate(zip(times, streams)):
        vals = np.asarray(integrand(float(s), np.random.default_rng(ss)), dtype=float)
        n = vals.size
        rate[k] = vals.mean()
        se[k] = vals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
    cumulative = cumulative_trapezoid(rate, times, initial=0.0)
    meta = dict(meta or {}, seed=seed, n_times=len(times), n_mc=n)
    return EntropyReport(np.asarray(times), rate, se, cumulative, _cumulative_stderr(times, se), meta)


def _check_mc(n_mc):
    if n_mc < MIN_MC:
        raise ValueError(f"n_mc must be at least {MIN_MC}")


def _draw(sampler: Sampler, rng, n):
    out = sampler(rng, n)
    if isinstance(out, tuple):
        return out[0], (out[1] if len(out) > 1 else None)
    return out, None


# -- samplers ---------------------------------------------------------------

def pair_sampler(spec: JointGaussianSpec) -> Sampler:
    return lambda rng, n: sample_pairs(spec, n, rng)


def marginal_sampler(spec: JointGaussianSpec) -> Sampler:
    return lambda rng, n: (sample_pairs(spec, n, rng)[0], None)


def gaussian_sampler(dist: GaussianDist) -> Sampler:
    return lambda rng, n: (dist.sample(n, rng), None)


def dataset_sampler(x, y=None) -> Sampler:
    """Resample rows of a fixed dataset with replacement."""
    x = np.asarray(x, dtype=float)
    y = None if y is None else np.asarray(y, dtype=float)

    def draw(rng, n):
        idx = rng.integers(0, x.shape[0], size=n)
        return x[idx], (None if y is None else y[idx])

    return draw


def _as_eps_field(model) -> ScoreField:
    if isinstance(model, EpsilonModel):
        return model.eps_field()
    return model


# -- estimators -------------------------------------------------------------

def total_entropy_path(
    field: ScoreField,
    sched: DiffusionSchedule,
    data_sampler: Sampler,
    n_mc: int,
    seed: int = 0,
    steps: int | None = None,
) -> EntropyReport:
    """``int beta/2 E|grad log p_eq - score|^2 ds`` along the forward process.

    ``field`` is the score of the diffused data density; it receives the
    sampler's condition, so conditional fields give the conditional total.
    """
    _check_mc(n_mc)

    def integrand(s, rng):
        x, y = _draw(data_sampler, rng, n_mc)
        x_s = forward_jump_sample(sched, x, s, rng)
        diff = -x_s - field(x_s, s, y)
        return 0.5 * sched.sigma2(s) * np.sum(diff**2, axis=1)

    return integrate_over_time(integrand, sched.times(steps), seed,
                               {"estimator": "total_entropy", "field": field.tag})


def total_entropy_closed_form(
    model: JointGaussianSpec | GaussianDist,
    conditional: bool = False,
    sched: DiffusionSchedule | None = None,
) -> float:
    """Exact ``KL(P_d || N(0, I))`` (minus the terminal KL when ``sched`` is given).

    With ``conditional=True`` and a joint spec, returns the average over
    ``y`` of ``KL(P_d(x|y) || N(0, I))``.
    """
    if isinstance(model, GaussianDist):
        if conditional:
            raise ValueError("conditional total entropy needs a joint spec")
        mean_sq, cov = float(model.mean @ model.mean), model.cov
    elif conditional:
        k = model.gain()
        mean_sq = float(np.trace(k @ model.cov_y @ k.T))
        cov = model.conditional_cov()
    else:
        mean_sq, cov = 0.0, model.cov_x
    d = cov.shape[0]

    def kl(alpha):
        c = alpha * cov + (1 - alpha) * np.eye(d)
        return 0.5 * (np.trace(c) + alpha * mean_sq - d - logdet_spd(c))

    out = kl(1.0)
    if sched is not None:
        out -= kl(float(sched.alpha(sched.horizon)))
    return float(out)


def neural_entropy(
    model,
    sched: DiffusionSchedule,
    data_sampler: Sampler,
    n_mc: int,
    seed: int = 0,
    steps: int | None = None,
) -> EntropyReport:
    """``int beta/2 E|eps(x_s, s[, y])|^2 ds`` for an entropy-matching function.

    ``model`` is an :class:`EpsilonModel` or a field returning ``eps``. The
    sampler's condition, when present, is passed to the field.
    """
    _check_mc(n_mc)
    eps_field = _as_eps_field(model)

    def integrand(s, rng):
        x, y = _draw(data_sampler, rng, n_mc)
        x_s = forward_jump_sample(sched, x, s, rng)
        return 0.5 * sched.sigma2(s) * np.sum(eps_field(x_s, s, y) ** 2, axis=1)

    return integrate_over_time(integrand, sched.times(steps), seed,
                               {"estimator": "neural_entropy", "field": eps_field.tag})


def minde_mi(
    cond_field: ScoreField,
    marg_field: ScoreField,
    sched: DiffusionSchedule,
    pair_sampler: Sampler,
    n_mc: int,
    seed: int = 0,
    steps: int | None = None,
) -> EntropyReport:
    """Mutual information ``E_y int beta/2 E|cond(x_s, s, y) - marg(x_s, s)|^2 ds``.

    Both fields are evaluated at the same noised point. Either both are
    scores or both are ``eps`` functions; the equilibrium term cancels, and
    converted fields are differenced on their bases so both forms agree
    bit for bit.
    """
    _check_mc(n_mc)
    if cond_field.dim is not None and marg_field.dim is not None and cond_field.dim != marg_field.dim:
        raise ValueError("fields differ in dimension")
    tags = {"estimator": "minde", "cond_field": cond_field.tag, "marg_field": marg_field.tag}
    while cond_field.base is not None and marg_field.base is not None:
        cond_field, marg_field = cond_field.base, marg_field.base

    def integrand(s, rng):
        x, y = _draw(pair_sampler, rng, n_mc)
        if y is None:
            raise ValueError("pair sampler must return conditions")
        x_s = forward_jump_sample(sched, x, s, rng)
        diff = cond_field(x_s, s, y) - marg_field(x_s, s, None)
        return 0.5 * sched.sigma2(s) * np.sum(diff**2, axis=1)

    return integrate_over_time(integrand, sched.times(steps), seed, tags)


def hutchinson_divergence(field: ScoreField, x, s, condition, rng, n_probes=16, step=1e-3):
    """Randomized trace of the field's Jacobian with Rademacher probes and central differences."""
    x = np.atleast_2d(x)
    total = np.zeros(x.shape[0])
    for _ in range(n_probes):
        v = rng.choice([-1.0, 1.0], size=x.shape)
        jv = (field(x + step * v, s, condition) - field(x - step * v, s, condition)) / (2 * step)
        total += np.sum(v * jv, axis=1)
    return total / n_probes


def entropy_via_scores_report(
    field: ScoreField,
    sched: DiffusionSchedule,
    data_sampler: Sampler,
    n_mc: int,
    seed: int = 0,
    steps: int | None = None,
    n_probes: int = 16,
    fd_scale: float = 1e-2,
) -> tuple[EntropyReport, float]:
    """Integral part of ``S(X) = int E[beta/2 |score|^2 - div(b_+ - beta score)] ds + S_0``.

    Returns the report and ``S_0``, the entropy of ``N(0, I)`` standing in
    for the terminal density.
    """
    _check_mc(n_mc)
    dim = field.dim

    def integrand(s, rng):
        x, y = _draw(data_sampler, rng, n_mc)
        x_s = forward_jump_sample(sched, x, s, rng)
        beta = float(sched.sigma2(s))
        score = field(x_s, s, y)
        if field.divergence is not None:
            div = field.divergence(x_s, s, y)
        else:
            _, var = kernel_params(sched, s)
            div = hutchinson_divergence(field, x_s, s, y, rng, n_probes, fd_scale * np.sqrt(var))
        d = x_s.shape[1]
        return 0.5 * beta * np.sum(score**2, axis=1) + 0.5 * beta * d + beta * div

    report = integrate_over_time(integrand, sched.times(steps), seed,
                                 {"estimator": "entropy_via_scores", "field": field.tag})
    d = dim if dim is not None else _draw(data_sampler, np.random.default_rng(0), 1)[0].shape[1]
    s0 = 0.5 * d * np.log(2 * np.pi * np.e)
    return report, s0


def entropy_via_scores(field, sched, data_sampler, n_mc, seed=0, steps=None, **kw) -> float:
    """Differential entropy of the data (nats) from the scores of its diffused density."""
    report, s0 = entropy_via_scores_report(field, sched, data_sampler, n_mc, seed, steps, **kw)
    return report.total + s0


@dataclass
class FactorizedEntropy:
    marginal_kls: np.ndarray
    tc: float
    total: float

    def to_dict(self) -> dict:
        return {"marginal_kls": self.marginal_kls.tolist(), "tc": self.tc, "total": self.total}


def factorized_entropy_report(
    model: JointGaussianSpec | np.ndarray,
    sched: DiffusionSchedule | None = None,
    which: str = "x",
    s: float = 0.0,
) -> FactorizedEntropy:
    """Split ``KL(P || N(0, I))`` into per-component KLs plus the total correlation.

    ``model`` is a spec (``which`` picks the ``x`` block or the ``joint``
    covariance) or a covariance matrix. With ``sched`` and ``s > 0`` the
    covariance is first diffused to time ``s``.
    """
    if isinstance(model, JointGaussianSpec):
        if which not in ("x", "joint"):
            raise ValueError("which must be 'x' or 'joint'")
        cov = model.cov_x if which == "x" else joint_covariance(model)
    else:
        cov = np.atleast_2d(np.asarray(model, dtype=float))
    if sched is not None and s > 0:
        a = float(sched.alpha(s))
        cov = a * cov + (1 - a) * np.eye(cov.shape[0])
    d = cov.shape[0]
    var = np.diag(cov)
    marginal = 0.5 * (var - 1.0 - np.log(var))
    total = gaussian_kl(GaussianDist(np.zeros(d), cov), GaussianDist(np.zeros(d), np.eye(d)))
    return FactorizedEntropy(marginal, total_correlation_gaussian(cov), total)


def log_density_denoised_means(
    x,
    sched: DiffusionSchedule,
    denoiser: Callable[[np.ndarray, float], np.ndarray],
    n_mc: int,
    seed: int = 0,
    steps: int | None = None,
) -> float:
    """``int B(s) E|xhat(x_s) - x|^2 ds`` with ``x_s`` forward-jumped from ``x``.

    ``B(s) = beta/2 * mu^2 / var^2``. Equals ``-log p(x)`` up to an
    ``x``-dependent constant of integration; with a shared ``seed`` the
    same noise is reused across test points.
    """
    _check_mc(n_mc)
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def integrand(s, rng):
        mu, var = kernel_params(sched, s)
        x0 = np.broadcast_to(x, (n_mc, x.size))
        x_s = forward_jump_sample(sched, x0, s, rng)
        err = denoiser(x_s, s) - x0
        return 0.5 * sched.sigma2(s) * mu**2 / var**2 * np.sum(err**2, axis=1)

    return integrate_over_time(integrand, sched.times(steps), seed).total


def gaussian_rate_curves(spec: JointGaussianSpec, sched: DiffusionSchedule, times=None) -> dict:
    """Exact per-time rates ``beta/2 E|eps|^2`` of the joint Gaussian.

    Returns ``times``, the conditional and marginal total-entropy rates and
    their difference, which is the mutual-information rate (the marginal
    ``eps`` is the posterior mean of the conditional one, so the cross
    term vanishes).
    """
    times = sched.times() if times is None else np.asarray(times, dtype=float)
    k = spec.gain()
    signal = float(np.trace(k @ spec.cov_y @ k.T))
    lam_c = np.clip(np.linalg.eigvalsh(spec.conditional_cov()), 0.0, None)
    lam_m = np.clip(np.linalg.eigvalsh(spec.cov_x), 0.0, None)
    alpha = sched.alpha(times)[:, None]
    beta = sched.sigma2(times)

    def trace_term(lam):
        c = alpha * lam + (1 - alpha)
        return np.sum(c - 2.0 + 1.0 / c, axis=1)

    cond = 0.5 * beta * (trace_term(lam_c) + alpha[:, 0] * signal)
    marg = 0.5 * beta * trace_term(lam_m)
    return {"times": times, "conditional": cond, "marginal": marg, "mi": cond - marg}


def affine_gaussian_mi(m_map: np.ndarray, n_map: np.ndarray, cov_y: np.ndarray, alpha: float = 1.0) -> float:
    """MI between ``y`` and ``sqrt(alpha) (M z + N y) + sqrt(1 - alpha) eta`` with ``z, eta ~ N(0, I)``."""
    d = m_map.shape[0]
    noise = alpha * m_map @ m_map.T + (1 - alpha) * np.eye(d)
    total = noise + alpha * n_map @ cov_y @ n_map.T
    return 0.5 * (logdet_spd(total) - logdet_spd(noise))
