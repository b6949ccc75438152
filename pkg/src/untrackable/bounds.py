"""Closed-form privacy and trackability bound arithmetic.

Every function here is a pure calculator over nonnegative reals: chaining
two local mechanisms, advanced composition for DP and for untrackability,
the permanent-state and multi-user untrackability bounds, and the
undetectability combination of an untrackability and an everlasting bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .prob import SeededRng, check_probability


def _check_eps(value: float, name: str = "epsilon") -> float:
    value = float(value)
    if not value >= 0.0:
        raise ValidationError(f"{name} must be >= 0, got {value!r}")
    return value


@dataclass(frozen=True)
class PrivacyBound:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "epsilon", _check_eps(self.epsilon))
        object.__setattr__(self, "delta", check_probability(self.delta, "delta"))


@dataclass(frozen=True)
class TrackabilityBound:
    gamma: float
    delta: float = 0.0
    k: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", _check_eps(self.gamma, "gamma"))
        object.__setattr__(self, "delta", check_probability(self.delta, "delta"))
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")


# chaining


def basic_chain(e1: float, e2: float) -> float:
    return min(_check_eps(e1, "e1"), _check_eps(e2, "e2"))


def advanced_chain(e1: float, e2: float) -> float:
    """LDP parameter of running an ``e2``-LDP mechanism on an ``e1``-LDP output.

    ``ln((e^(e1+e2) + 1) / (e^e1 + e^e2))``.  The numerator exceeds the
    denominator by ``(e^e1 - 1)(e^e2 - 1)``, which keeps tiny arguments
    accurate; large ones fall back to log-sum-exp.
    """
    e1, e2 = _check_eps(e1, "e1"), _check_eps(e2, "e2")
    if e1 == 0.0 or e2 == 0.0:
        return 0.0
    if math.isinf(e1) or math.isinf(e2):
        return min(e1, e2)
    big, small = max(e1, e2), min(e1, e2)
    if small > 700.0:
        return float(np.logaddexp(e1 + e2, 0.0) - np.logaddexp(e1, e2))
    # divide through by e^big
    return math.log1p(-math.expm1(-big) * math.expm1(small) / (1.0 + math.exp(small - big)))


def corollary_chain(e1: float, e2: float) -> float:
    """``e1*e2/2``: an upper bound on :func:`advanced_chain` while both are at most 2."""
    return 0.5 * _check_eps(e1, "e1") * _check_eps(e2, "e2")


def k_fold_chain(epsilons: Sequence[float]) -> float:
    """Fold :func:`advanced_chain` over a pipeline of local mechanisms, left to right."""
    epsilons = list(epsilons)
    if not epsilons:
        raise ValidationError("need at least one epsilon")
    acc = _check_eps(epsilons[0])
    for e in epsilons[1:]:
        acc = advanced_chain(acc, e)
    return acc


def chained_log_ratio(p: np.ndarray, q: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``ln(sum_v p_v g_v / sum_v q_v g_v)`` along the last axis.

    ``p``/``q`` are the first mechanism's output distributions on two inputs
    and ``g`` the second mechanism's probability of a fixed output from each
    intermediate value.
    """
    p, q, g = np.asarray(p, float), np.asarray(q, float), np.asarray(g, float)
    return np.log(np.sum(p * g, axis=-1)) - np.log(np.sum(q * g, axis=-1))


def analytic_chain_witness(e1: float, e2: float) -> dict[str, float]:
    """Binary randomized-response pair on which the chaining bound is attained."""
    a, b = math.exp(e1), math.exp(e2)
    return {
        "p_v": a / (1.0 + a),
        "q_v": 1.0 / (1.0 + a),
        "g_v": b / (1.0 + b),
        "g_w": 1.0 / (1.0 + b),
    }


def _feasible_pair_interval(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Range of ``y`` such that the binary distributions ``(x, 1-x)`` and ``(y, 1-y)`` are ``eps``-close."""
    a = math.exp(eps)
    lo = np.maximum(x / a, 1.0 - (1.0 - x) * a)
    hi = np.minimum(x * a, 1.0 - (1.0 - x) / a)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def chain_tightness_search(e1: float, e2: float, grid: int = 64) -> tuple[float, dict[str, float]]:
    """Largest chained |log-ratio| over a grid of binary-intermediate mechanism pairs.

    The grid covers ``p_v`` and ``g_v`` on ``grid`` points of (0, 1) and, for
    each, ``grid`` points of the feasible ``q_v`` / ``g_w`` interval.  The
    analytic witness is always evaluated as well; the returned value is the
    larger of the two, and the dict describes where it was attained.
    """
    e1, e2 = _check_eps(e1, "e1"), _check_eps(e2, "e2")
    if grid < 2:
        raise ValidationError("grid must be >= 2")
    w = analytic_chain_witness(e1, e2)
    best = abs(
        float(chained_log_ratio([w["p_v"], 1 - w["p_v"]], [w["q_v"], 1 - w["q_v"]], [w["g_v"], w["g_w"]]))
    )
    witness = dict(w, source="analytic")

    ticks = (np.arange(grid) + 0.5) / grid
    fracs = np.linspace(0.0, 1.0, grid)
    p_lo, p_hi = _feasible_pair_interval(ticks, e1)
    q = p_lo[:, None] + (p_hi - p_lo)[:, None] * fracs[None, :]  # (grid, grid)
    g_lo, g_hi = _feasible_pair_interval(ticks, e2)
    gw = g_lo[:, None] + (g_hi - g_lo)[:, None] * fracs[None, :]
    p_full = ticks[:, None, None, None] * np.ones((1, grid, 1, 1))
    q_full = q[:, :, None, None]
    gv_full = ticks[None, None, :, None]
    gw_full = gw[None, None, :, :]
    num = p_full * gv_full + (1 - p_full) * gw_full
    den = q_full * gv_full + (1 - q_full) * gw_full
    vals = np.abs(np.log(num) - np.log(den))
    idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    if vals[idx] > best:
        best = float(vals[idx])
        witness = {
            "p_v": float(ticks[idx[0]]),
            "q_v": float(q[idx[0], idx[1]]),
            "g_v": float(ticks[idx[2]]),
            "g_w": float(gw[idx[2], idx[3]]),
            "source": "grid",
        }
    return best, witness


def sample_chain_log_ratios(e1: float, e2: float, n: int, rng: SeededRng, n_intermediate: int = 2) -> np.ndarray:
    """|log-ratio| of ``n`` random chained pairs with ``n_intermediate`` intermediate values.

    For two intermediate values the first-stage pair is drawn uniformly from
    the exact feasible region.  For more, both output distributions are built
    from shared weights tilted by factors in ``[e^(-e1/2), e^(e1/2)]``, which
    keeps every coordinate ratio within ``e^e1``.  Second-stage values are
    kept within a factor ``e^e2`` of each other.
    """
    g = rng.generator
    if n_intermediate == 2:
        p = g.random(n)
        lo, hi = _feasible_pair_interval(p, e1)
        q = lo + (hi - lo) * g.random(n)
        gv = g.random(n)
        lo, hi = _feasible_pair_interval(gv, e2)
        gw = lo + (hi - lo) * g.random(n)
        P = np.stack([p, 1 - p], axis=1)
        Q = np.stack([q, 1 - q], axis=1)
        G = np.stack([gv, gw], axis=1)
    else:
        weights = g.exponential(size=(n, n_intermediate))
        tilt = np.exp(e1 * (g.random((n, n_intermediate)) - 0.5))
        P = weights / weights.sum(axis=1, keepdims=True)
        Q = weights * tilt
        Q /= Q.sum(axis=1, keepdims=True)
        base = g.random((n, 1))
        G = base * np.exp(-e2 * g.random((n, n_intermediate)))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(chained_log_ratio(P, Q, G))
    return np.nan_to_num(r, nan=0.0)


# composition


def _advanced_composition(eps: float, k: int, delta: float, delta_prime: float) -> tuple[float, float]:
    if k < 1:
        raise ValidationError(f"number of compositions must be >= 1, got {k}")
    if not 0.0 < delta_prime < 1.0:
        raise ValidationError(f"delta_prime must lie in (0, 1), got {delta_prime!r}")
    eps_total = math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps + k * eps * math.expm1(eps)
    return eps_total, min(1.0, k * delta + delta_prime)


def dp_advanced_composition(b: PrivacyBound, k: int, delta_prime: float) -> PrivacyBound:
    eps, delta = _advanced_composition(b.epsilon, k, b.delta, delta_prime)
    return PrivacyBound(eps, delta)


def untrackable_advanced_composition(t: TrackabilityBound, m: int, delta_prime: float) -> TrackabilityBound:
    """Compose ``m`` mechanisms that are each ``(gamma, delta)``-untrackable."""
    gamma, delta = _advanced_composition(t.gamma, m, t.delta, delta_prime)
    return TrackabilityBound(gamma, delta, t.k)


# trackability


def permanent_state_untrackable(eps_report: float, k: int) -> float:
    """``floor(k/2) * eps`` for a permanent-state mechanism whose reports are eps-DP in the state."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    return (k // 2) * _check_eps(eps_report, "eps_report")


def multi_user_untrackable(gamma: float, n_users: int) -> float:
    if n_users < 2:
        raise ValidationError(f"n_users must be >= 2, got {n_users}")
    return (n_users - 1) * _check_eps(gamma, "gamma")


def ceil_log2(n: int) -> int:
    """Exact ``ceil(log2(n))`` for a positive integer."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    return (n - 1).bit_length()


def multi_user_permanent_untrackable(eps_report: float, k: int, n_users: int) -> float:
    if n_users < 2:
        raise ValidationError(f"n_users must be >= 2, got {n_users}")
    return ceil_log2(n_users) * permanent_state_untrackable(eps_report, k)


def undetectable_bound(t: TrackabilityBound, e: PrivacyBound) -> TrackabilityBound:
    """Undetectability from untrackability ``t`` plus everlasting privacy ``e``."""
    delta_max = max(
        math.exp(e.epsilon) * t.delta + e.delta,
        t.delta + math.exp(t.gamma) * e.delta,
    )
    return TrackabilityBound(t.gamma + e.epsilon, min(1.0, delta_max), t.k)
