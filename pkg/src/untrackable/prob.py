"""Seeded randomness and small probability utilities.

Every sampler in the package draws from a :class:`SeededRng`.  A stream is
identified by ``(master_seed, stream_index)`` plus an optional tuple of
sub-keys, and is backed by numpy's counter-based Philox generator, so the
same key yields the same draws on every platform and regardless of how
work is split between processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientSamplesError, ValidationError

_U64 = 1 << 64


def check_probability(value: float, name: str = "probability") -> float:
    """Return ``value`` as a float, raising if it is outside [0, 1]."""
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValidationError(f"{name} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class SeededRng:
    """A reproducible random stream keyed by ``(master_seed, stream_index)``.

    Not thread-safe: give each concurrent task its own stream via
    :meth:`substream` instead of sharing one instance.
    """

    master_seed: int
    stream_index: int = 0
    subkey: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name, v in (("master_seed", self.master_seed), ("stream_index", self.stream_index)):
            if not 0 <= int(v) < _U64:
                raise ValidationError(f"{name} must be a 64-bit unsigned integer, got {v!r}")
        seq = np.random.SeedSequence(
            entropy=int(self.master_seed),
            spawn_key=(int(self.stream_index), *map(int, self.subkey)),
        )
        object.__setattr__(self, "generator", np.random.Generator(np.random.Philox(seq)))

    def substream(self, *keys: int) -> "SeededRng":
        """Derive an independent child stream; the parent is not advanced."""
        return SeededRng(self.master_seed, self.stream_index, self.subkey + tuple(int(k) for k in keys))

    def random(self, size=None):
        return self.generator.random(size)

    def bernoulli(self, p: float, size=None):
        """Bits equal to 1 with probability ``p`` (array when ``size`` is given)."""
        p = check_probability(p, "p")
        draws = self.generator.random(size) < p
        if size is None:
            return int(draws)
        return draws.astype(np.uint8)

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size=size)


def bernoulli(p: float, rng: SeededRng) -> int:
    """Draw one bit that is 1 with probability ``p``."""
    return rng.bernoulli(p)


def xor_bernoulli_param(q1: float, q2: float) -> float:
    """Probability that ``s XOR t == 1`` for independent ``s~Ber(q1)``, ``t~Ber(q2)``.

    The complementary probability ``Pr[s XOR t == 0]`` equals
    ``2*q1*q2 - q1 - q2 + 1``; see :func:`xor_bernoulli_zero_param`.
    """
    q1 = check_probability(q1, "q1")
    q2 = check_probability(q2, "q2")
    return q1 + q2 - 2.0 * q1 * q2


def xor_bernoulli_zero_param(q1: float, q2: float) -> float:
    """Probability that ``s XOR t == 0``."""
    return 1.0 - xor_bernoulli_param(q1, q2)


def _relative_log_pmf(n: int, p: float) -> np.ndarray:
    """Log pmf of Binomial(n, p) up to an additive constant, zero at the mode.

    Built from cumulative sums of the log term ratios walking away from the
    mode; avoids both overflow in C(n, j) and the absolute error lgamma
    carries at large arguments.
    """
    if p == 0.0 or p == 1.0:
        out = np.full(n + 1, -np.inf)
        out[0 if p == 0.0 else n] = 0.0
        return out
    mode = min(n, int(math.floor((n + 1) * p)))
    j = np.arange(n, dtype=float)
    # log pmf(j+1) - log pmf(j)
    step = np.log(n - j) - np.log(j + 1) + math.log(p) - math.log1p(-p)
    out = np.empty(n + 1)
    out[mode] = 0.0
    out[mode + 1 :] = np.cumsum(step[mode:])
    out[:mode] = -np.cumsum(step[:mode][::-1])[::-1]
    return out


def binomial_cdf(k: int, n: int, p: float) -> float:
    """``Pr[X <= k]`` for ``X ~ Binomial(n, p)``.

    Works in log space relative to the mode and sums the shorter tail, so
    results keep ~1e-14 absolute accuracy for ``n`` in the tens of thousands.
    """
    p = check_probability(p, "p")
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0 <= k <= n:
        raise ValidationError(f"k must lie in [0, {n}], got {k}")
    if k == n:
        return 1.0
    logs = _relative_log_pmf(n, p)
    weights = np.exp(logs)
    total = math.fsum(weights)
    mode = int(np.argmax(logs))
    if k < mode:
        return min(1.0, math.fsum(weights[: k + 1]) / total)
    return max(0.0, 1.0 - math.fsum(weights[k + 1 :]) / total)


def chernoff_radius(n: int, beta: float) -> float:
    """Deviation ``a`` at which ``2 exp(-2 n a^2) = beta`` for a mean of n bits."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0.0 < beta < 1.0:
        raise ValidationError(f"beta must lie in (0, 1), got {beta!r}")
    return math.sqrt(math.log(2.0 / beta) / (2.0 * n))


@dataclass(frozen=True)
class PercentileEstimate:
    point: float
    ci_low: float
    ci_high: float
    confidence: float
    ranks: tuple[int, int, int]


def order_statistic_coverage(low: int, high: int, n: int, q: float) -> float:
    """Probability that the ``q``-th percentile lies between the 1-based order statistics ``low`` and ``high``."""
    frac = q / 100.0
    upper = binomial_cdf(high - 1, n, frac) if high - 1 < n else 1.0
    lower = binomial_cdf(low - 1, n, frac) if low >= 1 else 0.0
    return upper - lower


def select_ranks(n: int, q: float, confidence: float, step: int | None = None) -> tuple[int, int, int, float]:
    """Pick 1-based ranks ``(low, point, high)`` and their coverage.

    The point rank is ``ceil(n*q/100)``.  The interval grows symmetrically in
    increments of ``step`` ranks (default ``n // 1000``, i.e. 0.1 percentile
    points) until its coverage reaches ``confidence``.  When one side runs
    into the sample boundary the other side keeps growing.
    """
    if n < 1:
        raise InsufficientSamplesError("no samples")
    if not 0.0 < q < 100.0:
        raise ValidationError(f"percentile must lie in (0, 100), got {q!r}")
    point = min(n, max(1, math.ceil(n * q / 100.0)))
    step = max(1, n // 1000) if step is None else int(step)
    width = step
    while True:
        low = max(1, point - width)
        high = min(n, point + width)
        coverage = order_statistic_coverage(low, high, n, q)
        if coverage >= confidence and low < point < high:
            return low, point, high, coverage
        if low == 1 and high == n:
            raise InsufficientSamplesError(
                f"{n} samples cannot bracket the {q}th percentile at confidence {confidence}"
                f" (best coverage {coverage:.6f})"
            )
        width += step


def percentile_with_ci(
    samples: Sequence[float], q: float, confidence: float = 0.95, step: int | None = None
) -> PercentileEstimate:
    """Order-statistic estimate of the ``q``-th percentile with a distribution-free CI."""
    confidence = check_probability(confidence, "confidence")
    values = np.sort(np.asarray(samples, dtype=float))
    if values.size == 0:
        raise InsufficientSamplesError("samples must be non-empty")
    low, point, high, _ = select_ranks(values.size, q, confidence, step)
    return PercentileEstimate(
        point=float(values[point - 1]),
        ci_low=float(values[low - 1]),
        ci_high=float(values[high - 1]),
        confidence=confidence,
        ranks=(low, point, high),
    )
