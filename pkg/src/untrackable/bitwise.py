"""Single-bit everlasting-privacy mechanism.

A user holding bit ``b`` stores ``b' = b XOR x`` once, with
``x ~ Ber(1/(e^eps1 + 1))``, and every report is ``b' XOR y`` with fresh
``y ~ Ber(1/(e^eps2 + 1))``.  The stored bit bounds what any number of
reports can reveal by ``eps1``; each report on its own is ``eps2``-LDP in
the stored bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bounds import permanent_state_untrackable
from .errors import ValidationError
from .mechanisms import PermanentStateMechanism
from .prob import SeededRng, check_probability


@dataclass(frozen=True)
class BitwiseParams:
    eps1: float
    eps2: float

    def __post_init__(self) -> None:
        for name in ("eps1", "eps2"):
            v = float(getattr(self, name))
            if not v > 0:
                raise ValidationError(f"{name} must be > 0, got {v!r}")
            object.__setattr__(self, name, v)

    @property
    def state_flip(self) -> float:
        return 1.0 / (math.exp(self.eps1) + 1.0)

    @property
    def report_flip(self) -> float:
        return 1.0 / (math.exp(self.eps2) + 1.0)


@dataclass(frozen=True)
class BitwiseState:
    b_prime: int


@dataclass(frozen=True)
class FrequencyEstimate2:
    p0_tilde: float

    @property
    def p1_tilde(self) -> float:
        return 1.0 - self.p0_tilde


def _bit(b) -> int:
    if b not in (0, 1):
        raise ValidationError(f"expected a bit, got {b!r}")
    return int(b)


def init_state(b: int, params: BitwiseParams, rng: SeededRng) -> BitwiseState:
    return BitwiseState(_bit(b) ^ rng.bernoulli(params.state_flip))


def report(state: BitwiseState, params: BitwiseParams, rng: SeededRng) -> int:
    return state.b_prime ^ rng.bernoulli(params.report_flip)


def report_one_rate(params: BitwiseParams, b: int) -> float:
    """``Pr[r = 1 | b]`` for a single report."""
    a1, a2 = math.exp(params.eps1), math.exp(params.eps2)
    zero_input = (a1 + a2) / ((a1 + 1.0) * (a2 + 1.0))
    return zero_input if _bit(b) == 0 else 1.0 - zero_input


def estimate_from_mean(mean_report: float, params: BitwiseParams) -> FrequencyEstimate2:
    """Unbiased estimate of the fraction of zero bits from the mean report."""
    a1, a2 = math.exp(params.eps1), math.exp(params.eps2)
    p0 = (a1 * a2 + 1.0 - (a1 + 1.0) * (a2 + 1.0) * mean_report) / ((a1 - 1.0) * (a2 - 1.0))
    return FrequencyEstimate2(p0)


def estimate_frequencies(reports: Sequence[int], params: BitwiseParams) -> FrequencyEstimate2:
    """Frequency oracle over one report per user; the estimate is not clipped to [0, 1]."""
    r = np.asarray(reports)
    if r.size == 0:
        raise ValidationError("need at least one report")
    if np.any((r != 0) & (r != 1)):
        raise ValidationError("reports must be bits")
    return estimate_from_mean(float(r.mean()), params)


def _expansion(params: BitwiseParams) -> float:
    a1, a2 = math.exp(params.eps1), math.exp(params.eps2)
    return (a1 + 1.0) * (a2 + 1.0) / ((a1 - 1.0) * (a2 - 1.0))


def accuracy_bound(params: BitwiseParams, n: int, beta: float) -> float:
    """Radius that ``|p0_tilde - p0|`` stays within with probability at least ``1 - beta``."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0.0 < beta < 1.0:
        raise ValidationError(f"beta must lie in (0, 1), got {beta!r}")
    return _expansion(params) * math.sqrt(2.0 * math.log(2.0 / beta) / n)


def accuracy_bound_simplified(params: BitwiseParams, n: int, beta: float) -> float:
    """Looser closed form ``(eps1+2)(eps2+2)/(eps1 eps2) * sqrt(32 ln(2/beta)/n)``."""
    accuracy_bound(params, n, beta)  # argument checks
    e1, e2 = params.eps1, params.eps2
    return (e1 + 2.0) * (e2 + 2.0) / (e1 * e2) * math.sqrt(32.0 * math.log(2.0 / beta) / n)


def stream_probability(x: int, y: int, params: BitwiseParams) -> float:
    """Probability of a particular stream of ``y`` reports containing ``x`` ones, for input bit 1.

    By symmetry this is also the probability, for input bit 0, of a stream
    containing ``x`` zeros.
    """
    if not 0 <= x <= y:
        raise ValidationError(f"need 0 <= x <= y, got x={x}, y={y}")
    e1, e2 = params.eps1, params.eps2
    log_num = np.logaddexp(e1 + x * e2, (y - x) * e2)
    log_den = math.log1p(math.exp(e1)) + y * math.log1p(math.exp(e2))
    return float(math.exp(log_num - log_den))


def trackability_bounds(params: BitwiseParams, k: int) -> tuple[float, float]:
    """Closed-form ``(upper, lower)`` pair for ``k`` reports.

    ``lower`` is ``k/2*eps2 - eps1 - ln 2``, kept for compatibility.  It is
    too large by ``ln 2``: the exact parameter falls below it for small
    ``eps1`` and larger ``k``, and the bound that holds subtracts ``ln 4``.
    Use :func:`witness_gamma` for a value that is always attained.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    upper = permanent_state_untrackable(params.eps2, k)
    lower = max(0.0, 0.5 * k * params.eps2 - params.eps1 - math.log(2.0))
    assert lower <= upper + 1e-12
    return upper, lower


def witness_gamma(params: BitwiseParams, k: int) -> float:
    """Log-ratio of one user versus two on ``floor(k/2)`` ones followed by zeros, split between the blocks.

    This is attained by a concrete stream and split, so the exact
    untrackability parameter is at least this large.  For even ``k`` it is at
    least ``k/2*eps2 - eps1 - ln 4``.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if k == 1:
        return 0.0
    a = k // 2
    two = stream_probability(a, a, params) * stream_probability(0, k - a, params)
    return abs(math.log(two / stream_probability(a, k, params)))


def as_permanent_mechanism(params: BitwiseParams) -> PermanentStateMechanism:
    keep1, keep2 = 1.0 - params.state_flip, 1.0 - params.report_flip
    return PermanentStateMechanism(
        inputs=(0, 1),
        states=(0, 1),
        reports=(0, 1),
        state_prior=[[keep1, 1.0 - keep1], [1.0 - keep1, keep1]],
        report_kernel=[[keep2, 1.0 - keep2], [1.0 - keep2, keep2]],
    )


@dataclass(frozen=True)
class SimulationResult:
    p0_true: float
    estimates: np.ndarray
    bound: float
    violations: int


def simulate(
    params: BitwiseParams,
    n: int,
    p0: float,
    rounds: int,
    rng: SeededRng,
    beta: float = 0.1,
) -> SimulationResult:
    """Run ``rounds`` independent collections from ``n`` fresh users, ``round(n*p0)`` of them holding 0.

    Each round uses its own substream, so any single round can be reproduced
    in isolation.
    """
    p0 = check_probability(p0, "p0")
    if n < 1 or rounds < 1:
        raise ValidationError("n and rounds must be >= 1")
    n_zero = int(round(n * p0))
    truth = n_zero / n
    bits = np.ones(n, dtype=np.uint8)
    bits[:n_zero] = 0
    estimates = np.empty(rounds)
    for r in range(rounds):
        g = rng.substream(r).generator
        stored = bits ^ (g.random(n) < params.state_flip)
        reports = stored ^ (g.random(n) < params.report_flip)
        estimates[r] = estimate_from_mean(float(reports.mean()), params).p0_tilde
    bound = accuracy_bound(params, n, beta)
    violations = int(np.sum(np.abs(estimates - truth) > bound))
    return SimulationResult(truth, estimates, bound, violations)
