"""Linear joint-Gaussian data model ``Y = A X + eps`` and its closed forms.

Everything here is exact; the rest of the package is validated against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

# 1 - rho^2 below this is treated as a perfectly degenerate correlation
TC_OVERFLOW_THRESHOLD = 1e-300


class IllConditionedSpec(ValueError):
    """A covariance that should be SPD failed its Cholesky factorization."""


def _cholesky(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    try:
        return linalg.cholesky(np.asarray(cov, dtype=float), lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedSpec(f"{what} is not symmetric positive definite") from exc


def logdet_spd(cov: np.ndarray, what: str = "covariance") -> float:
    """Log-determinant of an SPD matrix via Cholesky."""
    L = _cholesky(cov, what)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean has size {mean.size} but cov has shape {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ValueError("cov must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def entropy(self) -> float:
        """Differential entropy in nats."""
        return 0.5 * (self.dim * np.log(2 * np.pi * np.e) + logdet_spd(self.cov))

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        L = _cholesky(self.cov)
        diff = np.atleast_2d(x) - self.mean
        z = linalg.solve_triangular(L, diff.T, lower=True)
        maha = np.sum(z**2, axis=0)
        out = -0.5 * (maha + self.dim * np.log(2 * np.pi) + logdet_spd(self.cov))
        return out if np.ndim(x) > 1 else out[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        L = _cholesky(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ L.T


@dataclass(frozen=True)
class JointGaussianSpec:
    """Parameters of ``Y = A X + eps`` with ``X ~ N(0, cov_x)``, ``eps ~ N(0, noise_std^2 I)``."""

    dim_x: int
    dim_y: int
    mixing: np.ndarray
    cov_x: np.ndarray
    noise_std: float
    jitter: float = 1e-6
    seed: int | None = None
    _chol_x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise ValueError("dimensions must be >= 1")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        mixing = np.asarray(self.mixing, dtype=float).reshape(self.dim_y, self.dim_x)
        cov_x = np.asarray(self.cov_x, dtype=float).reshape(self.dim_x, self.dim_x)
        if not np.array_equal(cov_x, cov_x.T):
            cov_x = 0.5 * (cov_x + cov_x.T)
        mixing.setflags(write=False)
        cov_x.setflags(write=False)
        object.__setattr__(self, "mixing", mixing)
        object.__setattr__(self, "cov_x", cov_x)
        object.__setattr__(self, "_chol_x", _cholesky(cov_x, "cov_x"))

    def __eq__(self, other):
        if not isinstance(other, JointGaussianSpec):
            return NotImplemented
        return (
            self.dim_x == other.dim_x
            and self.dim_y == other.dim_y
            and self.noise_std == other.noise_std
            and self.jitter == other.jitter
            and self.seed == other.seed
            and np.array_equal(self.mixing, other.mixing)
            and np.array_equal(self.cov_x, other.cov_x)
        )

    __hash__ = None

    @property
    def noise_cov(self) -> np.ndarray:
        return self.noise_std**2 * np.eye(self.dim_y)

    @property
    def cov_xy(self) -> np.ndarray:
        """Cross covariance ``Cov(X, Y) = cov_x A^T`` (D_X x D_Y)."""
        return self.cov_x @ self.mixing.T

    @property
    def cov_y(self) -> np.ndarray:
        return self.mixing @ self.cov_x @ self.mixing.T + self.noise_cov

    def gain(self) -> np.ndarray:
        """Regression matrix ``K`` with ``E[X | y] = K y``."""
        return linalg.solve(self.cov_y, self.cov_xy.T, assume_a="pos").T

    def conditional_cov(self) -> np.ndarray:
        cov = self.cov_x - self.gain() @ self.cov_xy.T
        return 0.5 * (cov + cov.T)

    # -- serialization -------------------------------------------------
    def to_dict(self, explicit: bool = True) -> dict:
        d = {
            "dim_x": self.dim_x,
            "dim_y": self.dim_y,
            "noise_std": self.noise_std,
            "jitter": self.jitter,
            "seed": self.seed,
        }
        if explicit or self.seed is None:
            d["mixing"] = self.mixing.tolist()
            d["cov_x"] = self.cov_x.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "JointGaussianSpec":
        if "mixing" in d and "cov_x" in d:
            return cls(
                dim_x=int(d["dim_x"]),
                dim_y=int(d["dim_y"]),
                mixing=np.array(d["mixing"], dtype=float),
                cov_x=np.array(d["cov_x"], dtype=float),
                noise_std=float(d["noise_std"]),
                jitter=float(d.get("jitter", 0.0)),
                seed=d.get("seed"),
            )
        return build_joint_spec(
            int(d["dim_x"]), int(d["dim_y"]), float(d["noise_std"]),
            float(d.get("jitter", 1e-6)), int(d["seed"]),
        )

    def save(self, path: str | Path, explicit: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(explicit), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "JointGaussianSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_joint_spec(
    dim_x: int, dim_y: int, noise_std: float, jitter: float = 1e-6, seed: int = 0
) -> JointGaussianSpec:
    """Random model with ``A ~ N(0,1)`` and ``cov_x = H H^T + jitter I``, ``H ~ N(0,1)/sqrt(dim_x)``.

    ``A`` is drawn before ``H`` and neither depends on ``noise_std``, so a
    sweep over the noise level keeps the mixing matrix fixed.
    """
    if dim_x < 1 or dim_y < 1:
        raise ValueError("dimensions must be >= 1")
    if not noise_std > 0 or not jitter > 0:
        raise ValueError("noise_std and jitter must be positive")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    mixing = rng.standard_normal((dim_y, dim_x))
    h = rng.standard_normal((dim_x, dim_x)) / np.sqrt(dim_x)
    cov_x = h @ h.T + jitter * np.eye(dim_x)
    return JointGaussianSpec(dim_x, dim_y, mixing, cov_x, float(noise_std), float(jitter), int(seed))


def spec_from_matrices(mixing, cov_x, noise_std: float) -> JointGaussianSpec:
    """Spec with explicitly given ``A`` and ``cov_x`` (no random draws)."""
    mixing = np.atleast_2d(np.asarray(mixing, dtype=float))
    cov_x = np.atleast_2d(np.asarray(cov_x, dtype=float))
    return JointGaussianSpec(mixing.shape[1], mixing.shape[0], mixing, cov_x, float(noise_std), 0.0, None)


def joint_covariance(spec: JointGaussianSpec) -> np.ndarray:
    """Covariance of ``R = (X, Y)``: ``[[S_X, S_X A^T], [A S_X, A S_X A^T + S_eps]]``."""
    sxy = spec.cov_xy
    return np.block([[spec.cov_x, sxy], [sxy.T, spec.cov_y]])


def conditional_x_given_y(spec: JointGaussianSpec, y) -> GaussianDist:
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.dim_y,):
        raise ValueError(f"y must have shape ({spec.dim_y},)")
    return GaussianDist(spec.gain() @ y, spec.conditional_cov())


def marginal_x(spec: JointGaussianSpec) -> GaussianDist:
    return GaussianDist(np.zeros(spec.dim_x), spec.cov_x)


def analytic_mi(spec: JointGaussianSpec) -> float:
    """``I(X;Y) = 1/2 log(det S_Y / det S_eps)`` in nats."""
    if spec.noise_std <= 0:
        raise IllConditionedSpec("noise covariance is singular")
    mi = 0.5 * (logdet_spd(spec.cov_y, "cov_y") - 2 * spec.dim_y * np.log(spec.noise_std))
    return max(mi, 0.0)


def mi_1d(a: float, sigma_x: float, sigma_eps: float) -> float:
    if sigma_x <= 0 or sigma_eps <= 0:
        raise ValueError("standard deviations must be positive")
    return 0.5 * np.log1p((a * sigma_x / sigma_eps) ** 2)


def sample_pairs(spec: JointGaussianSpec, n: int, seed_or_rng=0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` pairs; returns ``x`` of shape (n, D_X) and ``y`` of shape (n, D_Y)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed_or_rng)
    x = rng.standard_normal((n, spec.dim_x)) @ spec._chol_x.T
    y = x @ spec.mixing.T + spec.noise_std * rng.standard_normal((n, spec.dim_y))
    return x, y


def gaussian_kl(p: GaussianDist, q: GaussianDist) -> float:
    """``KL(p || q)`` for multivariate normals."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    Lq = _cholesky(q.cov, "q.cov")
    a = linalg.solve_triangular(Lq, p.cov, lower=True)
    trace = np.trace(linalg.solve_triangular(Lq, a.T, lower=True))
    d = linalg.solve_triangular(Lq, p.mean - q.mean, lower=True)
    logdet_q = 2.0 * np.sum(np.log(np.diag(Lq)))
    # p may be singular only if q is too for finite KL; require SPD p
    logdet_p = logdet_spd(p.cov, "p.cov")
    kl = 0.5 * (trace + d @ d - p.dim + logdet_q - logdet_p)
    return max(float(kl), 0.0)


def total_correlation_gaussian(cov) -> float:
    """``1/2 (sum_k log cov_kk - log det cov)``; ``inf`` for numerically degenerate input."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    diag = np.diag(cov)
    if np.any(diag <= 0):
        raise IllConditionedSpec("covariance has non-positive variances")
    corr = cov / np.sqrt(np.outer(diag, diag))
    if cov.shape == (2, 2):
        one_minus_r2 = (1 - corr[0, 1]) * (1 + corr[0, 1])
        if one_minus_r2 < 0:
            raise IllConditionedSpec("covariance is not positive definite")
        if one_minus_r2 < TC_OVERFLOW_THRESHOLD:
            return float("inf")
        return -0.5 * float(np.log(one_minus_r2))
    try:
        logdet = logdet_spd(corr, "correlation")
    except IllConditionedSpec:
        if np.all(np.linalg.eigvalsh(corr) > -1e-12):
            return float("inf")
        raise
    return max(-0.5 * logdet, 0.0)
