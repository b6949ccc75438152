"""Report noisy inner product.

Each user with a ``d``-bit value ``u`` stores ``L`` pairs ``(v_j, b_j)``
where ``v_j`` is a uniform nonzero ``d``-bit vector and
``b_j = <v_j, u> XOR x_j`` with ``x_j ~ Ber(1/(e^eps' + 1))``.  Every report
replays one stored pair chosen uniformly at random, so no more than ``L``
noisy executions ever leave the device.

Vectors are represented as Python/numpy integers in ``[1, 2^d)``; the inner
product over GF(2) is the parity of ``v & u``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BudgetExceededError, InfeasibleParametersError, ValidationError
from .prob import SeededRng

MAX_D = 20


def parity(x) -> np.ndarray:
    """Inner product over GF(2) of packed bit-vectors, given their bitwise AND."""
    return (np.bitwise_count(np.asarray(x, dtype=np.uint64)) & 1).astype(np.uint8)


def derive_eps_prime(eps: float, delta: float, L: int) -> float:
    """Per-execution budget that keeps ``L`` stored executions ``(eps, delta)``-DP under advanced composition."""
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    if L < 1:
        raise ValidationError(f"L must be >= 1, got {L}")
    if not eps > 0:
        raise ValidationError(f"eps must be > 0, got {eps!r}")
    return eps / (2.0 * math.sqrt(2.0 * L * math.log(1.0 / delta)))


@dataclass(frozen=True)
class RnipParams:
    d: int
    L: int
    eps_prime: float
    eps: float | None = None
    delta: float | None = None

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValidationError(f"d must be >= 1, got {self.d}")
        if self.L < 1:
            raise ValidationError(f"L must be >= 1, got {self.L}")
        if not self.eps_prime > 0:
            raise ValidationError(f"eps_prime must be > 0, got {self.eps_prime!r}")

    @classmethod
    def from_privacy(cls, d: int, L: int, eps: float, delta: float) -> "RnipParams":
        return cls(d, L, derive_eps_prime(eps, delta, L), eps, delta)

    @property
    def flip(self) -> float:
        return 1.0 / (math.exp(self.eps_prime) + 1.0)

    @property
    def domain(self) -> int:
        return 1 << self.d


@dataclass(frozen=True)
class RnipState:
    vectors: np.ndarray  # (L,) ints in [1, 2^d)
    bits: np.ndarray  # (L,) noisy inner products


@dataclass(frozen=True)
class RnipReport:
    V: int
    B: int

    def __post_init__(self) -> None:
        if int(self.V) <= 0:
            raise ValidationError(f"report vector must be nonzero, got {self.V!r}")
        if self.B not in (0, 1):
            raise ValidationError(f"report bit must be 0 or 1, got {self.B!r}")


def _check_value(u: int, d: int) -> int:
    if not 0 <= int(u) < 1 << d:
        raise ValidationError(f"value must be a {d}-bit integer, got {u!r}")
    return int(u)


def _nonzero_vectors(g: np.random.Generator, d: int, size) -> np.ndarray:
    # draw uniform d-bit vectors and redraw the zeros
    v = g.integers(0, 1 << d, size=size, dtype=np.uint64)
    zero = v == 0
    while np.any(zero):
        v[zero] = g.integers(0, 1 << d, size=int(zero.sum()), dtype=np.uint64)
        zero = v == 0
    return v


def init_state(u: int, params: RnipParams, rng: SeededRng) -> RnipState:
    u = _check_value(u, params.d)
    g = rng.generator
    vectors = _nonzero_vectors(g, params.d, params.L)
    noise = (g.random(params.L) < params.flip).astype(np.uint8)
    return RnipState(vectors, parity(vectors & np.uint64(u)) ^ noise)


def report(state: RnipState, rng: SeededRng) -> RnipReport:
    if len(state.vectors) == 0:
        raise ValidationError("state is empty")
    j = int(rng.generator.integers(len(state.vectors)))
    return RnipReport(int(state.vectors[j]), int(state.bits[j]))


def walsh_hadamard(a: np.ndarray) -> np.ndarray:
    """Unnormalized transform ``out[u] = sum_v a[v] (-1)^<v,u>`` for a length-2^d array."""
    out = np.array(a, dtype=float)
    n = out.size
    h = 1
    while h < n:
        view = out.reshape(-1, 2, h)
        lo, hi = view[:, 0, :].copy(), view[:, 1, :]
        view[:, 0, :] += hi
        view[:, 1, :] = lo - hi
        h *= 2
    return out


def estimate_from_arrays(V: np.ndarray, B: np.ndarray, params: RnipParams, max_d: int = MAX_D) -> np.ndarray:
    """Frequency estimate for every value in ``[0, 2^d)`` from report columns."""
    if params.d > max_d:
        raise BudgetExceededError(f"instance too large: 2^{params.d} estimates exceed the d <= {max_d} cap")
    V = np.asarray(V, dtype=np.int64)
    B = np.asarray(B, dtype=np.int64)
    n = V.size
    if n == 0:
        raise ValidationError("need at least one report")
    if np.any(V <= 0) or np.any(V >= params.domain):
        raise ValidationError("report vectors must be nonzero d-bit values")
    signed = np.bincount(V, weights=1.0 - 2.0 * B, minlength=params.domain)
    scale = (params.domain - 1) / (params.domain * n) * (math.exp(params.eps_prime) + 1) / math.expm1(params.eps_prime)
    return scale * walsh_hadamard(signed) + 1.0 / params.domain


def estimate_frequencies(reports: Iterable[RnipReport], params: RnipParams, max_d: int = MAX_D) -> np.ndarray:
    reports = list(reports)
    V = np.array([r.V for r in reports], dtype=np.int64)
    B = np.array([r.B for r in reports], dtype=np.int64)
    return estimate_from_arrays(V, B, params, max_d)


def _estimator_scale(params: RnipParams) -> float:
    return (
        (params.domain - 1)
        / (params.domain / 2)
        * (math.exp(params.eps_prime) + 1)
        / math.expm1(params.eps_prime)
    )


def _log_union(d: int, beta: float) -> float:
    return (d + 1) * math.log(2.0) - math.log(beta)


def accuracy_bound(params: RnipParams, n: int, beta: float) -> float:
    """Max-norm error radius holding with probability at least ``1 - beta``."""
    if n < 1:
        raise ValidationError(f"n must be >= 1, got {n}")
    if not 0.0 < beta < 1.0:
        raise ValidationError(f"beta must lie in (0, 1), got {beta!r}")
    return _estimator_scale(params) * math.sqrt(2.0 * _log_union(params.d, beta) / n)


def accuracy_bound_simplified(params: RnipParams, n: int, beta: float) -> float:
    accuracy_bound(params, n, beta)
    e = params.eps_prime
    return (e + 2.0) / e * math.sqrt(8.0 * _log_union(params.d, beta) / n)


def collision_terms(k: int, L: int, d: int, first_user_reports: int | None = None) -> dict[str, float]:
    """Pieces of the collision probability bound for ``k`` reports.

    ``one_user`` bounds a repeated stored execution among one user's reports,
    ``two_users`` the same for a split with ``first_user_reports`` reports on
    the first user, and ``cross`` the chance the two users stored a common
    vector.
    """
    for name, v in (("k", k), ("L", L), ("d", d)):
        if v < 1:
            raise ValidationError(f"{name} must be >= 1, got {v}")
    k1 = k // 2 if first_user_reports is None else int(first_user_reports)
    if not 0 <= k1 <= k:
        raise ValidationError(f"first_user_reports must lie in [0, {k}]")
    return {
        "one_user": math.comb(k, 2) / L,
        "two_users": (math.comb(k1, 2) + math.comb(k - k1, 2)) / L,
        "cross": L * L / 2.0**d,
    }


def untrackable_delta(k: int, L: int, d: int) -> float:
    """``min(1, k^2/L + L^2/2^d)``: the additive term of the zero-gamma untrackability guarantee."""
    collision_terms(k, L, d)
    return min(1.0, k * k / L + L * L / 2.0**d)


def noise_floor(beta: float, n: int, d: int) -> float:
    return 2.0 * math.sqrt(2.0 * _log_union(d, beta) / n)


def minimum_eps_prime(alpha: float, beta: float, n: int, d: int) -> float:
    """Smallest per-execution budget meeting max-norm accuracy ``alpha``; inf below the noise floor."""
    root = math.sqrt(2.0 * _log_union(d, beta))
    gap = alpha * math.sqrt(n) - root
    return math.inf if gap <= 0 else 2.0 * root / gap


def select_parameters(eps: float, delta: float, alpha: float, beta: float, n: int, d: int) -> RnipParams:
    """Pick the per-execution budget from an accuracy target, then the largest state that fits ``(eps, delta)``."""
    if not 0.0 < beta < 1.0:
        raise ValidationError(f"beta must lie in (0, 1), got {beta!r}")
    if n < 1 or d < 1:
        raise ValidationError("n and d must be >= 1")
    if not alpha > noise_floor(beta, n, d):
        raise InfeasibleParametersError(
            f"accuracy target below noise floor: alpha={alpha} must exceed {noise_floor(beta, n, d):.6g}"
        )
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta!r}")
    eps_prime = 4.0 / alpha * math.sqrt(2.0 * _log_union(d, beta) / n)
    L = math.floor(eps * eps / (8.0 * eps_prime**2 * math.log(1.0 / delta)))
    if L < 1:
        raise InfeasibleParametersError(
            f"infeasible parameters: per-report budget {eps_prime:.6g} leaves no room for a state under eps={eps}"
        )
    return RnipParams.from_privacy(d, L, eps, delta)


# simulation


def _population(freqs: Sequence[float] | None, n: int, d: int, g: np.random.Generator) -> np.ndarray:
    """``n`` user values; counts are ``round(n * p_u)`` with leftovers assigned to the largest entries."""
    domain = 1 << d
    if freqs is None:
        return g.integers(0, domain, size=n, dtype=np.int64)
    freqs = np.asarray(freqs, dtype=float)
    if freqs.shape != (domain,) or np.any(freqs < 0) or abs(freqs.sum() - 1.0) > 1e-9:
        raise ValidationError(f"frequencies must be a probability vector of length {domain}")
    counts = np.floor(freqs * n).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(freqs * n - counts), kind="stable")
    counts[order[:short]] += 1
    return np.repeat(np.arange(domain, dtype=np.int64), counts)


def simulate_reports(values: np.ndarray, params: RnipParams, g: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One report from each of the users holding ``values``.

    A single report only depends on the stored pair it replays and stored
    pairs are i.i.d., so drawing that one pair directly has the same
    distribution as building the full state first.
    """
    V = _nonzero_vectors(g, params.d, values.size)
    noise = (g.random(values.size) < params.flip).astype(np.uint8)
    B = parity(V & values.astype(np.uint64)) ^ noise
    return V.astype(np.int64), B


@dataclass(frozen=True)
class RnipSimulation:
    true_freqs: np.ndarray
    linf_errors: np.ndarray
    sums: np.ndarray
    bound: float
    violations: int


def simulate(
    params: RnipParams,
    n: int,
    rounds: int,
    rng: SeededRng,
    beta: float = 0.1,
    freqs: Sequence[float] | None = None,
) -> RnipSimulation:
    """Run ``rounds`` collections over one fixed population; each round draws fresh states."""
    if n < 1 or rounds < 1:
        raise ValidationError("n and rounds must be >= 1")
    values = _population(freqs, n, params.d, rng.substream(0).generator)
    truth = np.bincount(values, minlength=params.domain) / n
    errors = np.empty(rounds)
    sums = np.empty(rounds)
    for r in range(rounds):
        V, B = simulate_reports(values, params, rng.substream(1, r).generator)
        est = estimate_from_arrays(V, B, params)
        errors[r] = float(np.max(np.abs(est - truth)))
        sums[r] = float(est.sum())
    bound = accuracy_bound(params, n, beta)
    return RnipSimulation(truth, errors, sums, bound, int(np.sum(errors > bound)))


@dataclass(frozen=True)
class CollisionRates:
    one_user: float
    two_users: float


def _has_repeat(V: np.ndarray) -> np.ndarray:
    s = np.sort(V, axis=1)
    return np.any(s[:, 1:] == s[:, :-1], axis=1)


def empirical_collision_rate(
    params: RnipParams,
    k: int,
    trials: int,
    rng: SeededRng,
    first_user_reports: int | None = None,
) -> CollisionRates:
    """Monte-Carlo frequency of two of ``k`` reports carrying the same vector.

    In the one-user case all ``k`` reports come from one state; in the
    two-user case the first ``first_user_reports`` (default ``k // 2``) come
    from one state and the rest from an independent one.
    """
    if k < 1 or trials < 1:
        raise ValidationError("k and trials must be >= 1")
    k1 = k // 2 if first_user_reports is None else int(first_user_reports)
    if not 0 <= k1 <= k:
        raise ValidationError(f"first_user_reports must lie in [0, {k}]")
    if k == 1:
        return CollisionRates(0.0, 0.0)

    def picks(g, n_reports):
        states = _nonzero_vectors(g, params.d, (trials, params.L))
        idx = g.integers(0, params.L, size=(trials, n_reports))
        return np.take_along_axis(states, idx, axis=1)

    g = rng.substream(0).generator
    one = _has_repeat(picks(g, k)).mean()
    g = rng.substream(1).generator
    two = _has_repeat(np.concatenate([picks(g, k1), picks(g, k - k1)], axis=1)).mean()
    return CollisionRates(float(one), float(two))


# exact report distributions for the collision-free equivalence check


def _single_pair_law(u: int, params: RnipParams) -> dict[tuple[int, int], float]:
    """Distribution of one stored pair ``(v, b)``."""
    n_vec = params.domain - 1
    law = {}
    for v in range(1, params.domain):
        ip = int(parity(v & u))
        law[(v, ip)] = law.get((v, ip), 0.0) + (1 - params.flip) / n_vec
        law[(v, ip ^ 1)] = law.get((v, ip ^ 1), 0.0) + params.flip / n_vec
    return law


def exact_report_distribution(u: int, params: RnipParams, k: int, first_user_reports: int | None = None):
    """Exact law of ``k`` reports, either from one user or split across two users holding ``u``.

    Enumerates every state and every choice of replayed indices, so it is
    only practical for tiny ``d``, ``L`` and ``k``.  Returns a dict keyed by
    tuples of ``(V, B)`` pairs.
    """
    u = _check_value(u, params.d)
    pair_law = list(_single_pair_law(u, params).items())

    def one_user(n_reports: int) -> dict:
        out: dict = {}
        if n_reports == 0:
            return {(): 1.0}
        for state in itertools.product(pair_law, repeat=params.L):
            p_state = math.prod(p for _, p in state)
            for idx in itertools.product(range(params.L), repeat=n_reports):
                key = tuple(state[j][0] for j in idx)
                out[key] = out.get(key, 0.0) + p_state / params.L**n_reports
        return out

    if first_user_reports is None:
        return one_user(k)
    first, second = one_user(first_user_reports), one_user(k - first_user_reports)
    out: dict = {}
    for a, pa in first.items():
        for b, pb in second.items():
            out[a + b] = out.get(a + b, 0.0) + pa * pb
    return out


def conditional_on_distinct_vectors(law: dict) -> dict:
    """Restrict a report law to outcomes whose vectors are pairwise distinct and renormalize."""
    kept = {key: p for key, p in law.items() if len({v for v, _ in key}) == len(key)}
    total = sum(kept.values())
    return {key: p / total for key, p in kept.items()}
