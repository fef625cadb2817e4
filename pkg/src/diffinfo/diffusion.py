"""Variance-preserving forward process and the exact diffused scores of the joint Gaussian."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .gaussian_model import GaussianDist, JointGaussianSpec, joint_covariance


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear ``beta(s) = beta_min + (beta_max - beta_min) s / T`` on ``[0, T]``.

    ``steps`` is the number of intervals of the uniform grid on
    ``[eps_time * T, T]`` used by integrators and quadratures.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0
    steps: int = 1000
    eps_time: float = 1e-3

    def __post_init__(self):
        if not 0 < self.beta_min <= self.beta_max:
            raise ValueError("need 0 < beta_min <= beta_max")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if int(self.steps) < 2:
            raise ValueError("steps must be >= 2")
        if not 0 < self.eps_time < 1:
            raise ValueError("eps_time must lie in (0, 1)")

    @property
    def s_min(self) -> float:
        return self.eps_time * self.horizon

    def beta(self, s):
        return self.beta_min + (self.beta_max - self.beta_min) * np.asarray(s) / self.horizon

    def sigma2(self, s):
        """Squared diffusion coefficient, equal to ``beta(s)`` for VP."""
        return self.beta(s)

    def log_alpha(self, s):
        s = np.asarray(s, dtype=float)
        return -self.beta_min * s - (self.beta_max - self.beta_min) * s**2 / (2 * self.horizon)

    def alpha(self, s):
        return np.exp(self.log_alpha(s))

    def drift(self, x, s):
        """Forward drift ``b_+(x, s) = -beta(s) x / 2``."""
        return -0.5 * self.beta(s) * x

    def times(self, steps: int | None = None) -> np.ndarray:
        n = self.steps if steps is None else int(steps)
        return np.linspace(self.s_min, self.horizon, n + 1)

    def replace(self, **changes) -> "DiffusionSchedule":
        from dataclasses import replace

        return replace(self, **changes)


def vp_schedule(
    beta_min: float = 0.1,
    beta_max: float = 20.0,
    horizon: float = 1.0,
    steps: int = 1000,
    eps_time: float = 1e-3,
) -> DiffusionSchedule:
    return DiffusionSchedule(beta_min, beta_max, horizon, steps, eps_time)


def kernel_params(sched: DiffusionSchedule, s):
    """Perturbation kernel ``N(mu(s) x, sigma2(s) I)``; returns ``(mu, sigma2)``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr > sched.horizon * (1 + 1e-12)):
        raise ValueError("s must lie in [0, T]")
    log_a = sched.log_alpha(s_arr)
    return np.exp(0.5 * log_a), -np.expm1(log_a)


def forward_jump_sample(sched: DiffusionSchedule, x, s, rng: np.random.Generator, noise=None):
    """Draw ``x_s = sqrt(alpha) x + sqrt(1 - alpha) eta`` (``s`` scalar or per-row)."""
    x = np.asarray(x, dtype=float)
    mu, var = kernel_params(sched, s)
    if np.ndim(mu) == 1 and x.ndim == 2:
        mu, var = mu[:, None], var[:, None]
    if noise is None:
        noise = rng.standard_normal(x.shape)
    return mu * x + np.sqrt(var) * noise


def quasi_invariant_logpdf(x) -> np.ndarray:
    """Standard-normal log-density (the VP equilibrium) over the last axis."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return -0.5 * np.sum(x**2, axis=-1) - 0.5 * d * np.log(2 * np.pi)


def quasi_invariant_score(x) -> np.ndarray:
    return -np.asarray(x, dtype=float)


def _as_col(v, ndim):
    v = np.asarray(v, dtype=float)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim else v


class _DiffusedCov:
    """``alpha C + (1 - alpha) I`` for all ``alpha`` at once, through one eigendecomposition of ``C``."""

    def __init__(self, cov: np.ndarray):
        lam, vec = np.linalg.eigh(cov)
        self.lam = np.clip(lam, 0.0, None)
        self.vec = vec

    def eig(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return alpha[..., None] * self.lam + (1 - alpha[..., None])

    def solve(self, alpha, v):
        """``(alpha C + (1 - alpha) I)^{-1} v`` for ``v`` of shape (n, D); ``alpha`` scalar or (n,)."""
        ev = self.eig(alpha)
        if np.any(ev <= 0):
            raise np.linalg.LinAlgError("diffused covariance is singular")
        return ((v @ self.vec) / ev) @ self.vec.T

    def matrix(self, alpha) -> np.ndarray:
        return (self.vec * self.eig(alpha)) @ self.vec.T

    def trace_inv(self, alpha):
        return np.sum(1.0 / self.eig(alpha), axis=-1)


class GaussianDiffusionOracle:
    """Exact diffused densities and scores of a :class:`JointGaussianSpec` under a VP schedule.

    Arrays are batched over the leading axis. ``s`` may be a scalar or
    one time per row.
    """

    def __init__(self, spec: JointGaussianSpec, sched: DiffusionSchedule):
        self.spec = spec
        self.sched = sched
        self.gain = spec.gain()
        self.cond_cov = spec.conditional_cov()
        self._marg = _DiffusedCov(spec.cov_x)
        self._cond = _DiffusedCov(self.cond_cov)
        self._joint = _DiffusedCov(joint_covariance(spec))

    @cached_property
    def _cov_x_eig(self):
        return self._marg.lam, self._marg.vec

    def _alpha(self, s):
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr < 0) or np.any(s_arr > self.sched.horizon * (1 + 1e-12)):
            raise ValueError("s must lie in [0, T]")
        return self.sched.alpha(s_arr)

    def cond_mean0(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.gain.T

    # -- states --------------------------------------------------------
    def conditional_state(self, s, y) -> GaussianDist:
        a = float(self._alpha(s))
        return GaussianDist(np.sqrt(a) * self.cond_mean0(y), self._cond.matrix(a))

    def marginal_state(self, s) -> GaussianDist:
        a = float(self._alpha(s))
        return GaussianDist(np.zeros(self.spec.dim_x), self._marg.matrix(a))

    def joint_state(self, s) -> GaussianDist:
        a = float(self._alpha(s))
        d = self.spec.dim_x + self.spec.dim_y
        return GaussianDist(np.zeros(d), self._joint.matrix(a))

    # -- scores --------------------------------------------------------
    def conditional_score(self, x_t, s, y) -> np.ndarray:
        a = self._alpha(s)
        x_t = np.atleast_2d(x_t)
        mean = _as_col(np.sqrt(a), 2) * np.atleast_2d(self.cond_mean0(y))
        return -self._cond.solve(a, x_t - mean)

    def marginal_score(self, x_t, s) -> np.ndarray:
        return -self._marg.solve(self._alpha(s), np.atleast_2d(x_t))

    def joint_score(self, r_t, s) -> np.ndarray:
        return -self._joint.solve(self._alpha(s), np.atleast_2d(r_t))

    def conditional_score_divergence(self, s) -> np.ndarray:
        """``div`` of the conditional score, ``-tr (Sigma_s^{X|Y})^{-1}`` (x-independent)."""
        return -self._cond.trace_inv(self._alpha(s))

    def marginal_score_divergence(self, s) -> np.ndarray:
        return -self._marg.trace_inv(self._alpha(s))

    def denoised_mean(self, x_t, s) -> np.ndarray:
        """``E[x | x_s]`` by direct Gaussian conditioning: ``sqrt(a) S_X (S_X^s)^{-1} x_s``.

        Exact on all of ``[0, T]``; unlike the Tweedie form it never divides by ``mu``.
        """
        a = self._alpha(s)
        x_t = np.atleast_2d(x_t)
        lam, vec = self._cov_x_eig
        coef = np.sqrt(a)[..., None] * lam / self._marg.eig(a)
        return ((x_t @ vec) * coef) @ vec.T


def _squeeze_like(out, x):
    return out[0] if np.ndim(x) == 1 else out


def diffused_conditional_score(spec, sched, x_t, s, y, oracle=None):
    oracle = oracle or GaussianDiffusionOracle(spec, sched)
    return _squeeze_like(oracle.conditional_score(x_t, s, y), x_t)


def diffused_marginal_score(spec, sched, x_t, s, oracle=None):
    oracle = oracle or GaussianDiffusionOracle(spec, sched)
    return _squeeze_like(oracle.marginal_score(x_t, s), x_t)


def diffused_joint_score(spec, sched, r_t, s, oracle=None):
    oracle = oracle or GaussianDiffusionOracle(spec, sched)
    return _squeeze_like(oracle.joint_score(r_t, s), r_t)


def denoised_mean_gaussian(spec, sched, x_t, s, oracle=None):
    oracle = oracle or GaussianDiffusionOracle(spec, sched)
    mu, _ = kernel_params(sched, s)
    if np.any(np.asarray(mu) < 1e-150):
        raise FloatingPointError("kernel mean coefficient underflows at this s")
    return _squeeze_like(oracle.denoised_mean(x_t, s), x_t)
