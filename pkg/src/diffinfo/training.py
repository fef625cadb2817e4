"""Denoising entropy-matching training for VP diffusion models.

The network output ``u`` is a noise prediction; the entropy-matching
function is ``eps(x, s) = x - u / sqrt(var(s))``. An ideal network has
``u = E[noise | x_s]``, which keeps ``u`` of unit scale at every ``s``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .diffusion import DiffusionSchedule, kernel_params
from .nn import Batch, NetworkParams, adam_init, adam_step, net_backward, net_forward, net_init
from .samplers import ScoreField

log = logging.getLogger(__name__)

WEIGHTINGS = ("unit", "half-sigma-squared")
TIME_SAMPLINGS = ("uniform", "log-snr")


class TrainingDivergence(FloatingPointError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (smoothed loss {loss:.3g})")
        self.diagnostics = {"step": step, "loss": loss}


@dataclass
class TrainingConfig:
    batch_size: int = 512
    steps: int = 30_000
    weighting: str = "half-sigma-squared"
    label_drop_prob: float = 0.1
    s_min: float | None = None
    s_max: float | None = None
    seed: int = 0
    init_seed: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: tuple[int, ...] = (256, 256, 256)
    embed_dim: int = 64
    n_freq: int = 16
    time_sampling: str = "uniform"
    divergence_threshold: float = 1e6
    log_every: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.time_sampling not in TIME_SAMPLINGS:
            raise ValueError(f"time_sampling must be one of {TIME_SAMPLINGS}")
        if not 0.0 <= self.label_drop_prob <= 1.0:
            raise ValueError("label_drop_prob must lie in [0, 1]")
        if self.s_min is not None and self.s_min <= 0:
            raise ValueError("s_min must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size and steps must be positive")

    def time_range(self, sched: DiffusionSchedule) -> tuple[float, float]:
        lo = sched.s_min if self.s_min is None else self.s_min
        hi = sched.horizon if self.s_max is None else self.s_max
        if not 0 < lo < hi <= sched.horizon:
            raise ValueError("need 0 < s_min < s_max <= T")
        return lo, hi

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def loss_weight(sched: DiffusionSchedule, s, weighting: str):
    if weighting == "unit":
        return np.ones_like(np.asarray(s, dtype=float))
    if weighting == "half-sigma-squared":
        return 0.5 * sched.sigma2(s)
    raise ValueError(f"unknown weighting {weighting!r}")


def _logit_var(sched, s):
    log_a = sched.log_alpha(s)
    return np.log(-np.expm1(log_a)) - log_a


def _time_from_logit_var(sched, ell):
    """Invert ``logit(1 - alpha(s)) = ell`` on the linear-beta schedule."""
    log_a = -np.logaddexp(0.0, ell)  # alpha = sigmoid(-ell)
    k = (sched.beta_max - sched.beta_min) / (2 * sched.horizon)
    if k == 0:
        return -log_a / sched.beta_min
    return (-sched.beta_min + np.sqrt(sched.beta_min**2 - 4 * k * log_a)) / (2 * k)


def sample_times(sched: DiffusionSchedule, cfg: "TrainingConfig", rng, n: int):
    """Training times and importance weights relative to ``U(s_min, s_max)``.

    ``log-snr`` draws ``s`` with density proportional to ``beta / var``
    (uniform in the log noise-to-signal ratio); the returned weights keep the
    batch loss an unbiased estimate of the uniform-time objective.
    """
    lo, hi = cfg.time_range(sched)
    if cfg.time_sampling == "uniform":
        return rng.uniform(lo, hi, size=n), np.ones(n)
    a, b = _logit_var(sched, lo), _logit_var(sched, hi)
    s = np.clip(_time_from_logit_var(sched, rng.uniform(a, b, size=n)), lo, hi)
    _, var = kernel_params(sched, s)
    density = sched.beta(s) / var / (b - a)
    return s, 1.0 / ((hi - lo) * density)


@dataclass
class EpsilonModel:
    """A trained network viewed as an entropy-matching function ``eps(x, s; y)``."""

    params: NetworkParams
    sched: DiffusionSchedule
    history: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.params.data_dim

    @property
    def conditional(self) -> bool:
        return self.params.cond_dim > 0

    def eps(self, x, s, condition=None, drop=None) -> np.ndarray:
        x = np.atleast_2d(x)
        u = net_forward(self.params, x, s, condition if self.conditional else None, drop)
        _, var = kernel_params(self.sched, s)
        sd = np.sqrt(var)
        return x - u / (sd[:, None] if np.ndim(sd) else sd)

    def eps_field(self, use_condition: bool = True) -> ScoreField:
        """``eps`` as a field; with ``use_condition=False`` the null embedding is used."""

        def fn(x, s, c=None):
            return self.eps(x, s, c if use_condition else None)

        return ScoreField(fn, "learned", self.dim)

    def score_field(self, use_condition: bool = True) -> ScoreField:
        return score_from_entropy_param(self.eps_field(use_condition))


def score_from_entropy_param(eps_field: ScoreField) -> ScoreField:
    """``score = grad log p_eq + eps = -x + eps`` (VP equilibrium is ``N(0, I)``)."""

    def fn(x, s, c=None):
        return eps_field(x, s, c) - x

    return ScoreField(fn, eps_field.tag, eps_field.dim, base=eps_field)


def em_from_score_param(score_field: ScoreField, sched: DiffusionSchedule | None = None) -> ScoreField:
    """``eps = score - grad log p_eq = score + x``."""

    def fn(x, s, c=None):
        return score_field(x, s, c) + x

    return ScoreField(fn, score_field.tag, score_field.dim, base=score_field)


def _residual(sched, x0, s, noise, eps_value):
    """``grad log p_eq(x_s) - grad log p(x_s | x0) + eps`` for a batch."""
    mu, var = kernel_params(sched, s)
    mu, var = np.asarray(mu)[..., None], np.asarray(var)[..., None]
    x_s = mu * x0 + np.sqrt(var) * noise
    return x_s, -x_s + (x_s - mu * x0) / var + eps_value


def em_denoising_loss(
    model,
    batch: tuple,
    sched: DiffusionSchedule,
    cfg: TrainingConfig,
    rng: np.random.Generator,
    s=None,
) -> float:
    """Monte-Carlo denoising entropy-matching loss ``mean lambda(s) |residual|^2``.

    ``model`` is an :class:`EpsilonModel` or a callable ``eps(x, s, y)``.
    ``batch`` is ``(x,)`` or ``(x, y)``. Times are drawn uniformly on the
    configured range unless ``s`` is given.
    """
    x0 = np.atleast_2d(np.asarray(batch[0], dtype=float))
    y = batch[1] if len(batch) > 1 else None
    n = x0.shape[0]
    if n == 0 or not np.all(np.isfinite(x0)):
        raise ValueError("batch must be non-empty and finite")
    lo, hi = cfg.time_range(sched)
    if s is None:
        s = rng.uniform(lo, hi, size=n)
    s = np.broadcast_to(np.asarray(s, dtype=float), (n,))
    if np.any(s < lo):
        raise ValueError("s below the integration cutoff")
    noise = rng.standard_normal(x0.shape)
    mu, var = kernel_params(sched, s)
    x_s = mu[:, None] * x0 + np.sqrt(var)[:, None] * noise
    eps_fn = model.eps if isinstance(model, EpsilonModel) else model
    eps_value = eps_fn(x_s, s, y)
    _, r = _residual(sched, x0, s, noise, eps_value)
    return float(np.mean(loss_weight(sched, s, cfg.weighting) * np.sum(r**2, axis=1)))


def _training_step(model: EpsilonModel, x0, y, drop, s, noise, weights):
    sched = model.sched
    mu, var = kernel_params(sched, s)
    sd = np.sqrt(var)[:, None]
    x_s = mu[:, None] * x0 + sd * noise
    n = x0.shape[0]

    def closure(u):
        eps_value = x_s - u / sd
        _, r = _residual(sched, x0, s, noise, eps_value)
        loss = np.mean(weights * np.sum(r**2, axis=1))
        grad_u = (-2.0 / n) * (weights[:, None] * r) / sd
        return loss, grad_u

    return net_backward(model.params, Batch(x_s, s, y, drop), closure)


def train_model(
    x,
    y,
    sched: DiffusionSchedule,
    cfg: TrainingConfig,
    callback: Callable[[int, EpsilonModel, float], None] | None = None,
) -> EpsilonModel:
    """Train an entropy-matching network on ``x`` (conditioned on ``y`` when given).

    With a condition, each example's ``y`` is replaced by the null embedding
    with probability ``cfg.label_drop_prob``, so the same network also
    models the marginal. At ``label_drop_prob == 1`` the network is
    unconditional and ignores any condition at evaluation. ``callback(step, model, smoothed_loss)`` runs every
    ``cfg.log_every`` steps.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n, d) array")
    if y is not None:
        y = np.asarray(y, dtype=float)
        if y.shape[0] != x.shape[0]:
            raise ValueError("x and y must have the same number of rows")
    cfg.time_range(sched)
    if y is not None and cfg.label_drop_prob >= 1.0:
        # every row is dropped: the condition path would never be trained
        y = None
    cond_dim = 0 if y is None else y.shape[1]
    init_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    init_seed = int(init_seq.generate_state(1)[0]) if cfg.init_seed is None else cfg.init_seed
    params = net_init(x.shape[1], cfg.hidden, cond_dim, init_seed,
                      cfg.embed_dim, cfg.n_freq, sched.horizon)
    if y is not None:
        params.arrays["cond_shift"] = y.mean(axis=0)
        params.arrays["cond_scale"] = np.maximum(y.std(axis=0), 1e-12)
    model = EpsilonModel(params, sched)
    state = adam_init(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(data_seq)
    n = x.shape[0]
    smoothed = None
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        x0 = x[idx]
        yb = y[idx] if y is not None else None
        drop = rng.random(cfg.batch_size) < cfg.label_drop_prob if y is not None else None
        s, iw = sample_times(sched, cfg, rng, cfg.batch_size)
        noise = rng.standard_normal(x0.shape)
        weights = loss_weight(sched, s, cfg.weighting) * iw
        loss, grads = _training_step(model, x0, yb, drop, s, noise, weights)
        adam_step(params, grads, state)
        smoothed = loss if smoothed is None else 0.99 * smoothed + 0.01 * loss
        if not np.isfinite(smoothed) or smoothed > cfg.divergence_threshold:
            raise TrainingDivergence(step, float(smoothed))
        if step % cfg.log_every == 0 or step == cfg.steps:
            model.history.append((step, float(smoothed)))
            log.debug("step %d loss %.4f (%.1fs)", step, smoothed, time.perf_counter() - t0)
            if callback is not None:
                callback(step, model, float(smoothed))
    return model


def train_conditional(x, y, sched: DiffusionSchedule, cfg: TrainingConfig, callback=None) -> EpsilonModel:
    return train_model(x, y, sched, cfg, callback)


def train_marginal(x, sched: DiffusionSchedule, cfg: TrainingConfig, callback=None) -> EpsilonModel:
    return train_model(x, None, sched, cfg, callback)
