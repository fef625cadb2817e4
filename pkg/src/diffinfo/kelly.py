"""Proportional (Kelly) betting on a die with optional noisy side information.

Rates are in bits per throw and wealth is tracked as ``log2`` wealth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


def _as_distribution(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError(f"{name} must be finite and non-negative")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} must sum to 1 (got {p.sum():.15g})")
    return p


@dataclass(frozen=True)
class BettingGame:
    """A die with ``n_outcomes`` faces paying ``odds``-for-1 on the realized face."""

    n_outcomes: int = 6
    odds: float = 6.0
    p_true: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_outcomes < 2:
            raise ValueError("need at least two outcomes")
        if not self.odds > 0:
            raise ValueError("odds must be positive")
        p = np.full(self.n_outcomes, 1.0 / self.n_outcomes) if self.p_true is None else self.p_true
        p = _as_distribution(p, "p_true")
        if p.size != self.n_outcomes:
            raise ValueError("p_true length must equal n_outcomes")
        object.__setattr__(self, "p_true", p)


@dataclass(frozen=True)
class Channel:
    """Row-stochastic confusion matrix ``P(y | x)``."""

    confusion: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        c = np.asarray(self.confusion, dtype=float)
        if c.ndim != 2 or c.shape[0] == 0:
            raise ValueError("confusion must be a non-empty matrix")
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise ValueError("confusion entries must be finite and non-negative")
        if np.any(np.abs(c.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("confusion rows must sum to 1")
        object.__setattr__(self, "confusion", c)

    @classmethod
    def identity(cls, n: int = 6) -> "Channel":
        return cls(np.eye(n))

    @classmethod
    def useless(cls, n: int = 6) -> "Channel":
        return cls(np.full((n, n), 1.0 / n))

    @classmethod
    def symmetric(cls, n: int, flip: float) -> "Channel":
        """Keep the symbol with probability ``1 - flip``, else move uniformly to another."""
        c = np.full((n, n), flip / (n - 1))
        np.fill_diagonal(c, 1.0 - flip)
        return cls(c)


def _check_channel(game: BettingGame, channel: Channel):
    if channel.confusion.shape[0] != game.n_outcomes:
        raise ValueError("channel rows must match the game's outcomes")


def joint_table(game: BettingGame, channel: Channel) -> np.ndarray:
    """``P(x, y) = p_true(x) P(y | x)``."""
    _check_channel(game, channel)
    return game.p_true[:, None] * channel.confusion


def posterior_table(game: BettingGame, channel: Channel) -> np.ndarray:
    """``P(x | y)`` as an (n_x, n_y) array; columns with ``P(y) = 0`` are left uniform."""
    joint = joint_table(game, channel)
    py = joint.sum(axis=0)
    post = np.full_like(joint, 1.0 / game.n_outcomes)
    seen = py > 0
    post[:, seen] = joint[:, seen] / py[seen]
    return post


def doubling_rate(game: BettingGame, p_bet) -> float:
    """``E_{p_true} log2(o * p_bet(X))``; ``-inf`` when a possible outcome gets no stake."""
    p_bet = _as_distribution(p_bet, "p_bet")
    if p_bet.size != game.n_outcomes:
        raise ValueError("p_bet length must equal n_outcomes")
    live = game.p_true > 0
    if np.any(p_bet[live] == 0):
        return -np.inf
    return float(np.sum(game.p_true[live] * np.log2(game.odds * p_bet[live])))


def conditional_doubling_rate(game: BettingGame, channel: Channel, p_bet_given_y=None) -> float:
    """``E_{P(x,y)} log2(o * b(x | y))``; defaults to the Kelly bet ``b = P(x | y)``."""
    joint = joint_table(game, channel)
    bet = posterior_table(game, channel) if p_bet_given_y is None else np.asarray(p_bet_given_y, float)
    live = joint > 0
    if np.any(bet[live] == 0):
        return -np.inf
    return float(np.sum(joint[live] * np.log2(game.odds * bet[live])))


def channel_rate_gain(game: BettingGame, channel: Channel) -> float:
    """Increase of the optimal doubling rate from observing the channel output."""
    return conditional_doubling_rate(game, channel) - doubling_rate(game, game.p_true)


def discrete_mi(joint) -> float:
    """Mutual information (bits) of a discrete joint table, from its definition."""
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    live = joint > 0
    return float(np.sum(joint[live] * np.log2(joint[live] / (px @ py)[live])))


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


@dataclass(frozen=True)
class WealthRecord:
    log2_wealth: float
    rate: float
    n_throws: int


def simulate_wealth(
    game: BettingGame,
    channel: Channel | None = None,
    n_throws: int = 100_000,
    seed: int | None = None,
) -> WealthRecord:
    """Sequential proportional betting of the whole bankroll, one throw at a time.

    Without a channel the bet is ``p_true``; with one it is ``P(x | y)`` for
    the observed ``y``. ``seed`` defaults to ``game.seed``.
    """
    if n_throws < 1:
        raise ValueError("n_throws must be >= 1")
    rng = np.random.default_rng(game.seed if seed is None else seed)
    outcomes = rng.choice(game.n_outcomes, size=n_throws, p=game.p_true)
    if channel is None:
        stake = game.p_true[outcomes]
    else:
        _check_channel(game, channel)
        cum = np.cumsum(channel.confusion, axis=1)
        u = rng.random(n_throws)
        signals = np.minimum((u[:, None] > cum[outcomes]).sum(axis=1), channel.confusion.shape[1] - 1)
        stake = posterior_table(game, channel)[outcomes, signals]
    with np.errstate(divide="ignore"):
        log2_wealth = float(np.sum(np.log2(game.odds * stake)))
    return WealthRecord(log2_wealth, log2_wealth / n_throws, n_throws)
