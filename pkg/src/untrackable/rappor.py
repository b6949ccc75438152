"""RAPPOR reports and their trackability.

A value is hashed into an ``s``-bit Bloom filter ``B``.  Each user then
fixes a permanently randomized copy ``B'`` (every bit is replaced by a fair
coin with probability ``f``) and derives every report from ``B'``: bit ``j``
is 1 with probability ``q`` if ``B'_j = 1`` and ``p`` otherwise.

Trackability of a report set ``T`` split at ``J`` compares the probability
that one user produced all of ``T`` with the probability that two users with
the same value produced ``T_J`` and the rest.  Positions are independent
given ``B``, so the log-ratio is a sum of per-position terms
``ln C_b(i, x, y)`` where ``i = |J|`` and ``x``/``y`` count the ones in the
two parts at that position.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ValidationError
from .mechanisms import SplitIndex
from .prob import PercentileEstimate, SeededRng, check_probability, percentile_with_ci

# Monte-Carlo samples are drawn in fixed-size blocks, each from its own
# stream keyed by the block number, so results do not depend on `workers`.
BLOCK_SIZE = 1000
MIN_SAMPLES = 1000
STATISTICS = ("signed", "absolute")


@dataclass(frozen=True)
class RapporParams:
    s: int = 128
    h: int = 2
    f: float = 0.5
    p: float = 0.5
    q: float = 0.75
    hash_seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.h <= self.s:
            raise ValidationError(f"need 1 <= h <= s, got h={self.h}, s={self.s}")
        for name in ("f", "p", "q"):
            object.__setattr__(self, name, check_probability(getattr(self, name), name))
        if not 0 <= int(self.hash_seed) < 1 << 64:
            raise ValidationError("hash_seed must be a 64-bit unsigned integer")

    def keep_prob(self, b: int) -> float:
        """``Pr[B'_j = 1 | B_j = b]``."""
        return 1.0 - self.f / 2.0 if b else self.f / 2.0


@dataclass(frozen=True)
class RapporReportSet:
    reports: np.ndarray  # (k, s) bits
    bloom_bits: np.ndarray  # (s,) bits

    def __post_init__(self) -> None:
        reports = np.atleast_2d(np.asarray(self.reports, dtype=np.uint8))
        bloom = np.asarray(self.bloom_bits, dtype=np.uint8).ravel()
        if reports.shape[1] != bloom.size:
            raise ValidationError(
                f"reports have length {reports.shape[1]} but the Bloom filter has {bloom.size} bits"
            )
        object.__setattr__(self, "reports", reports)
        object.__setattr__(self, "bloom_bits", bloom)

    @property
    def k(self) -> int:
        return self.reports.shape[0]


# mechanism


def hash_positions(value: bytes, params: RapporParams) -> list[int]:
    key = int(params.hash_seed).to_bytes(8, "little")
    out = []
    for i in range(params.h):
        digest = hashlib.blake2b(i.to_bytes(4, "little") + bytes(value), key=key, digest_size=8).digest()
        out.append(int.from_bytes(digest, "little") % params.s)
    return out


def encode_bloom(value: bytes, params: RapporParams) -> np.ndarray:
    bits = np.zeros(params.s, dtype=np.uint8)
    bits[hash_positions(value, params)] = 1
    return bits


def permanent_randomize(B: np.ndarray, params: RapporParams, rng: SeededRng) -> np.ndarray:
    B = np.asarray(B, dtype=np.uint8)
    if B.shape[-1] != params.s:
        raise ValidationError(f"Bloom filter must have {params.s} bits, got {B.shape[-1]}")
    g = rng.generator
    replace = g.random(B.shape) < params.f
    coin = (g.random(B.shape) < 0.5).astype(np.uint8)
    return np.where(replace, coin, B)


def rappor_report(B_prime: np.ndarray, params: RapporParams, rng: SeededRng) -> np.ndarray:
    B_prime = np.asarray(B_prime, dtype=np.uint8)
    if B_prime.shape[-1] != params.s:
        raise ValidationError(f"B' must have {params.s} bits, got {B_prime.shape[-1]}")
    rate = np.where(B_prime == 1, params.q, params.p)
    return (rng.generator.random(B_prime.shape) < rate).astype(np.uint8)


def marginal_one_rate(params: RapporParams, b: int) -> float:
    """``Pr[S_j = 1 | B_j = b]`` for a single report."""
    w = params.keep_prob(b)
    return w * params.q + (1.0 - w) * params.p


# per-position analysis


def _log_binom_mix(params: RapporParams, b: int, a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``ln P_b(a, c)``: probability of one specific length-``a`` bit column with ``c`` ones."""
    w = params.keep_prob(b)
    a, c = np.asarray(a, float), np.asarray(c, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = _xlogy(c, params.q) + _xlogy(a - c, 1.0 - params.q)
        lp = _xlogy(c, params.p) + _xlogy(a - c, 1.0 - params.p)
        return np.logaddexp(np.log(w) + lq, np.log1p(-w) + lp)


def _xlogy(n: np.ndarray, prob: float) -> np.ndarray:
    if prob == 0.0:
        return np.where(n > 0, -np.inf, 0.0)
    return n * math.log(prob)


@lru_cache(maxsize=256)
def _log_c_table(params: RapporParams, k: int, i: int) -> np.ndarray:
    """``ln C_b(i, x, y)`` for ``b`` in {0, 1}, shape ``(2, i+1, k-i+1)``; nan where impossible."""
    x = np.arange(i + 1)[:, None]
    y = np.arange(k - i + 1)[None, :]
    out = np.empty((2, i + 1, k - i + 1))
    if params.p == params.q:
        # reports ignore the state; skip the roundoff of the general formula
        out[:] = 0.0
        out.setflags(write=False)
        return out
    for b in (0, 1):
        num = _log_binom_mix(params, b, i, x) + _log_binom_mix(params, b, k - i, y)
        den = _log_binom_mix(params, b, k, x + y)
        with np.errstate(invalid="ignore"):
            out[b] = np.where(np.isneginf(den), np.nan, num - den)
    out.setflags(write=False)
    return out


def position_trackability(b: int, i: int, x: int, y: int, k: int, params: RapporParams) -> float:
    """The per-position ratio ``C_b(i, x, y) = P_b(i, x) P_b(k-i, y) / P_b(k, x+y)``."""
    if b not in (0, 1):
        raise ValidationError(f"b must be a bit, got {b!r}")
    if not (0 <= i <= k and 0 <= x <= i and 0 <= y <= k - i):
        raise ValidationError(f"need 0 <= x <= i <= k and 0 <= y <= k - i, got i={i}, x={x}, y={y}, k={k}")
    return float(np.exp(_log_c_table(params, k, i)[b, x, y]))


def report_set_log_ratio(T: RapporReportSet, J: SplitIndex, params: RapporParams) -> float:
    """Signed ``sum_l ln C_{b_l}(|J|, x_l, y_l)``."""
    if T.reports.shape[1] != params.s:
        raise ValidationError(f"reports must have {params.s} bits")
    if J.k != T.k:
        raise ValidationError(f"split is over {J.k} reports but the set has {T.k}")
    in_j = np.zeros(T.k, dtype=bool)
    in_j[list(J.J)] = True
    x = T.reports[in_j].sum(axis=0)
    y = T.reports[~in_j].sum(axis=0)
    table = _log_c_table(params, T.k, int(in_j.sum()))
    return float(np.sum(table[T.bloom_bits, x, y]))


def report_set_trackability(T: RapporReportSet, J: SplitIndex, params: RapporParams) -> float:
    return abs(report_set_log_ratio(T, J, params))


def worst_case_gamma(params: RapporParams, k: int, set_bits: int | None = None) -> float:
    """Largest ``|sum_l ln C_{b_l}|`` over every split size and every report set.

    ``set_bits`` is the number of 1s in the Bloom filter (``h`` when the hash
    positions do not collide).  Positions are independent, so the extreme is
    reached by taking the per-class extreme of ``ln C_b`` at every position.
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    ones = params.h if set_bits is None else int(set_bits)
    if not 0 <= ones <= params.s:
        raise ValidationError(f"set_bits must lie in [0, {params.s}]")
    zeros = params.s - ones
    best = 0.0
    for i in range(1, k):
        t = _log_c_table(params, k, i)
        hi = zeros * np.nanmax(t[0]) + ones * np.nanmax(t[1])
        lo = zeros * np.nanmin(t[0]) + ones * np.nanmin(t[1])
        best = max(best, abs(float(hi)), abs(float(lo)))
    return best


def composition_gamma(params: RapporParams, k: int) -> float:
    """Per-bit composition bound ``s * floor(k/2) * eps_report``; inf when a report bit is deterministic."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    p, q = params.p, params.q
    if p == q:
        return 0.0
    if p in (0.0, 1.0) or q in (0.0, 1.0):
        return math.inf
    eps = max(abs(math.log(p / q)), abs(math.log((1 - p) / (1 - q))))
    return params.s * (k // 2) * eps


# Monte-Carlo estimation of the trackability random variable


def _random_bloom(params: RapporParams, n: int, g: np.random.Generator, distinct: bool) -> np.ndarray:
    B = np.zeros((n, params.s), dtype=np.uint8)
    if distinct:
        pos = np.argsort(g.random((n, params.s)), axis=1)[:, : params.h]
    else:
        pos = g.integers(0, params.s, size=(n, params.h))
    np.put_along_axis(B, pos, 1, axis=1)
    return B


def _randomize(B: np.ndarray, f: float, g: np.random.Generator) -> np.ndarray:
    replace = g.random(B.shape) < f
    coin = (g.random(B.shape) < 0.5).astype(np.uint8)
    return np.where(replace, coin, B)


def _column_ones(B_prime: np.ndarray, n_reports: int, params: RapporParams, g: np.random.Generator) -> np.ndarray:
    """Number of 1s at each position among ``n_reports`` fresh reports from ``B_prime``."""
    rate = np.where(B_prime == 1, params.q, params.p)
    bits = g.random((n_reports,) + B_prime.shape) < rate
    return bits.sum(axis=0)


def _signed_sum(table: np.ndarray, B: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return table[B, x, y].sum(axis=1)


def _sample_block(args) -> np.ndarray:
    params, k, n, rng, statistic, distinct = args
    g = rng.generator
    best = np.zeros(n)
    for i in range(1, k // 2 + 1):
        table = _log_c_table(params, k, i)
        # two users holding the same value
        B = _random_bloom(params, n, g, distinct)
        x = _column_ones(_randomize(B, params.f, g), i, params, g)
        y = _column_ones(_randomize(B, params.f, g), k - i, params, g)
        two = _signed_sum(table, B, x, y)
        # one user, split after the first i reports
        B = _random_bloom(params, n, g, distinct)
        B_prime = _randomize(B, params.f, g)
        x = _column_ones(B_prime, i, params, g)
        y = _column_ones(B_prime, k - i, params, g)
        one = _signed_sum(table, B, x, y)
        if statistic == "signed":
            best = np.maximum(best, np.maximum(two, one))
        else:
            best = np.maximum(best, np.maximum(np.abs(two), np.abs(one)))
    return best


def trackability_samples(
    params: RapporParams,
    k: int,
    nsamps: int,
    rng: SeededRng,
    statistic: str = "signed",
    distinct_bits: bool = True,
    workers: int = 1,
) -> np.ndarray:
    """Draw ``nsamps`` values of the trackability random variable.

    For each prefix split size ``i`` up to ``k // 2`` one report set is
    generated by two users sharing a value and one by a single user.  With
    ``statistic="signed"`` a sample is the largest signed log-ratio over those
    sets, floored at 0; ``"absolute"`` takes the largest absolute value.
    ``distinct_bits`` draws Bloom filters with exactly ``h`` set bits; turn it
    off to hash ``h`` independent uniform positions (collisions allowed).
    """
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if nsamps < 1:
        raise ValidationError(f"nsamps must be >= 1, got {nsamps}")
    if statistic not in STATISTICS:
        raise ValidationError(f"statistic must be one of {STATISTICS}, got {statistic!r}")
    jobs = [
        (params, k, min(BLOCK_SIZE, nsamps - start), rng.substream(b), statistic, distinct_bits)
        for b, start in enumerate(range(0, nsamps, BLOCK_SIZE))
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_sample_block, jobs))
    else:
        blocks = [_sample_block(job) for job in jobs]
    return np.concatenate(blocks)


def estimate_trackability_percentiles(
    params: RapporParams,
    k: int,
    nsamps: int,
    rng: SeededRng,
    confidence: float = 0.95,
    statistic: str = "signed",
    distinct_bits: bool = True,
    workers: int = 1,
) -> tuple[PercentileEstimate, PercentileEstimate]:
    """Median and 90th percentile of the trackability random variable, with order-statistic CIs."""
    if nsamps < MIN_SAMPLES:
        raise ValidationError(f"nsamps must be >= {MIN_SAMPLES}, got {nsamps}")
    samples = trackability_samples(params, k, nsamps, rng, statistic, distinct_bits, workers)
    return (
        percentile_with_ci(samples, 50, confidence),
        percentile_with_ci(samples, 90, confidence),
    )
