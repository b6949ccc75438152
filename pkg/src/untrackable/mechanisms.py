"""Finite mechanisms, report stream generation and exact distinguishing oracles.

A :class:`PermanentStateMechanism` draws a state once from ``state_prior[u]``
and then emits i.i.d. reports from ``report_kernel[state]``.  The oracles
below enumerate every report stream and every split of it and return the
exact pure (delta = 0) parameters for untrackability, everlasting privacy and
undetectability at a fixed horizon ``k``.

Because reports are conditionally i.i.d. given the state, the probability of
a stream depends only on how many times each report symbol appears in it.
The oracles still walk every ``(stream, split)`` pair; the count-vector
table is just a memo of the per-stream probabilities.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Hashable, Sequence

import numpy as np

from .errors import BudgetExceededError, ValidationError
from .prob import SeededRng

DEFAULT_BUDGET = 10_000_000
ROW_TOLERANCE = 1e-12
SCHEMA_ID = "untrackable/permanent-state-mechanism/v1"


def _as_matrix(rows, name: str, n_rows: int, n_cols: int) -> np.ndarray:
    try:
        m = np.asarray(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: not a numeric matrix") from exc
    if m.shape != (n_rows, n_cols):
        raise ValidationError(f"{name}: expected shape {(n_rows, n_cols)}, got {m.shape}")
    if not np.all(np.isfinite(m)) or np.any(m < 0):
        raise ValidationError(f"{name}: entries must be finite and nonnegative")
    bad = np.flatnonzero(np.abs(m.sum(axis=1) - 1.0) > ROW_TOLERANCE)
    if bad.size:
        raise ValidationError(f"{name}: row {int(bad[0])} sums to {m[bad[0]].sum()!r}, not 1")
    m.setflags(write=False)
    return m


def _check_labels(labels, name: str) -> tuple:
    labels = tuple(labels)
    if not labels:
        raise ValidationError(f"{name}: must be non-empty")
    if len(set(labels)) != len(labels):
        raise ValidationError(f"{name}: labels must be distinct")
    return labels


@dataclass(frozen=True, eq=False)
class FiniteStatelessMechanism:
    """Randomized map from a finite input set to a finite report set."""

    inputs: tuple
    reports: tuple
    kernel: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _check_labels(self.inputs, "inputs"))
        object.__setattr__(self, "reports", _check_labels(self.reports, "reports"))
        object.__setattr__(
            self, "kernel", _as_matrix(self.kernel, "kernel", len(self.inputs), len(self.reports))
        )

    def input_index(self, u: Hashable) -> int:
        try:
            return self.inputs.index(u)
        except ValueError:
            raise ValidationError(f"unknown input {u!r}") from None


@dataclass(frozen=True, eq=False)
class PermanentStateMechanism:
    """Mechanism whose state is drawn once per user and never changes."""

    inputs: tuple
    states: tuple
    reports: tuple
    state_prior: np.ndarray
    report_kernel: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _check_labels(self.inputs, "inputs"))
        object.__setattr__(self, "states", _check_labels(self.states, "states"))
        object.__setattr__(self, "reports", _check_labels(self.reports, "reports"))
        object.__setattr__(
            self,
            "state_prior",
            _as_matrix(self.state_prior, "state_prior", len(self.inputs), len(self.states)),
        )
        object.__setattr__(
            self,
            "report_kernel",
            _as_matrix(self.report_kernel, "report_kernel", len(self.states), len(self.reports)),
        )

    def input_index(self, u: Hashable) -> int:
        try:
            return self.inputs.index(u)
        except ValueError:
            raise ValidationError(f"unknown input {u!r}") from None

    def report_epsilon(self) -> float:
        """Pure DP parameter of the per-report kernel with the state as input."""
        return ldp_epsilon(self.report_kernel)

    # JSON round trip

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA_ID,
            "inputs": list(self.inputs),
            "states": list(self.states),
            "reports": list(self.reports),
            "state_prior": self.state_prior.tolist(),
            "report_kernel": self.report_kernel.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "PermanentStateMechanism":
        if not isinstance(doc, dict):
            raise ValidationError("mechanism document must be a JSON object")
        schema = doc.get("schema", SCHEMA_ID)
        if schema != SCHEMA_ID:
            raise ValidationError(f"schema: unsupported value {schema!r}")
        for key in ("inputs", "states", "reports", "state_prior", "report_kernel"):
            if key not in doc:
                raise ValidationError(f"{key}: missing field")
        for key in ("inputs", "states", "reports"):
            if not isinstance(doc[key], list):
                raise ValidationError(f"{key}: must be a list")
        unknown = set(doc) - {"schema", "inputs", "states", "reports", "state_prior", "report_kernel"}
        if unknown:
            raise ValidationError(f"{sorted(unknown)[0]}: unknown field")
        return cls(
            inputs=tuple(doc["inputs"]),
            states=tuple(doc["states"]),
            reports=tuple(doc["reports"]),
            state_prior=doc["state_prior"],
            report_kernel=doc["report_kernel"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def load(cls, path: str | Path) -> "PermanentStateMechanism":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(doc)


def ldp_epsilon(kernel: np.ndarray) -> float:
    """``max |ln K[a, r] / K[b, r]|`` over row pairs and columns; inf on 0-vs-positive."""
    kernel = np.asarray(kernel, dtype=float)
    worst = 0.0
    for a, b in itertools.combinations(range(kernel.shape[0]), 2):
        x, y = kernel[a], kernel[b]
        both = (x > 0) & (y > 0)
        if np.any((x > 0) != (y > 0)):
            return math.inf
        if np.any(both):
            worst = max(worst, float(np.max(np.abs(np.log(x[both]) - np.log(y[both])))))
    return worst


def chain(first: FiniteStatelessMechanism, second: FiniteStatelessMechanism) -> FiniteStatelessMechanism:
    """Feed the output of ``first`` into ``second``; reports of ``first`` must be inputs of ``second``."""
    if tuple(first.reports) != tuple(second.inputs):
        raise ValidationError("reports of the first mechanism must equal inputs of the second")
    kernel = first.kernel @ second.kernel
    kernel = kernel / kernel.sum(axis=1, keepdims=True)
    return FiniteStatelessMechanism(first.inputs, second.reports, kernel)


@dataclass(frozen=True)
class SplitIndex:
    """A subset ``J`` of the 0-based report positions ``range(k)``."""

    k: int
    J: frozenset[int]

    def __post_init__(self) -> None:
        J = frozenset(int(j) for j in self.J)
        if any(not 0 <= j < self.k for j in J):
            raise ValidationError(f"split indices must lie in [0, {self.k})")
        object.__setattr__(self, "J", J)

    @property
    def complement(self) -> frozenset[int]:
        return frozenset(range(self.k)) - self.J

    @classmethod
    def prefix(cls, i: int, k: int) -> "SplitIndex":
        return cls(k, frozenset(range(i)))


def generate_stream(mech, u: Hashable, k: int, rng: SeededRng) -> tuple:
    """Run the report stream generator for ``k`` steps on input ``u``."""
    if k < 0:
        raise ValidationError(f"k must be >= 0, got {k}")
    g = rng.generator
    if isinstance(mech, PermanentStateMechanism):
        s = g.choice(len(mech.states), p=mech.state_prior[mech.input_index(u)])
        row = mech.report_kernel[s]
    elif isinstance(mech, FiniteStatelessMechanism):
        row = mech.kernel[mech.input_index(u)]
    else:
        raise ValidationError(f"unsupported mechanism type {type(mech).__name__}")
    idx = g.choice(len(mech.reports), size=k, p=row)
    return tuple(mech.reports[i] for i in idx)


def _log_kernel(mech: PermanentStateMechanism) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(mech.state_prior), np.log(mech.report_kernel)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    top = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def exact_stream_probability(mech: PermanentStateMechanism, u: Hashable, stream: Sequence) -> float:
    """``sum_s prior[u, s] * prod_i kernel[s, t_i]`` evaluated per state in log space."""
    ui = mech.input_index(u)
    try:
        idx = [mech.reports.index(r) for r in stream]
    except ValueError:
        raise ValidationError("stream contains a symbol outside the report set") from None
    log_prior, log_kernel = _log_kernel(mech)
    per_state = log_prior[ui] + log_kernel[:, idx].sum(axis=1)
    return float(np.exp(_logsumexp(per_state, axis=0)))


def _count_log_probs(mech: PermanentStateMechanism, k: int) -> np.ndarray:
    """Log probability of one stream with a given symbol-count vector.

    Returns an array of shape ``(|U|,) + (k+1,)*|R|``; entries whose counts
    sum to more than ``k`` are never read.
    """
    n_r = len(mech.reports)
    log_prior, log_kernel = _log_kernel(mech)
    grids = np.indices((k + 1,) * n_r).reshape(n_r, -1).T  # (C, |R|)
    with np.errstate(invalid="ignore"):
        # 0 * log(0) contributes nothing: a symbol that never appears is free.
        terms = np.where(grids[None, :, :] > 0, grids[None, :, :] * log_kernel[:, None, :], 0.0)
    per_state = terms.sum(axis=2)  # (|S|, C)
    table = _logsumexp(log_prior[:, :, None] + per_state[None, :, :], axis=1)  # (|U|, C)
    table[:, 0] = 0.0  # the empty stream is certain; the prior's sum may round off 1
    return table.reshape((len(mech.inputs),) + (k + 1,) * n_r)


def _stream_onehot(n_r: int, k: int) -> np.ndarray:
    """One-hot encoding of every stream in ``R^k``, shape ``(|R|^k, k, |R|)``."""
    streams = np.array(list(itertools.product(range(n_r), repeat=k)), dtype=np.int64).reshape(-1, k)
    onehot = np.zeros((streams.shape[0], k, n_r), dtype=np.int64)
    if k:
        np.put_along_axis(onehot, streams[:, :, None], 1, axis=2)
    return onehot


def _check_budget(work: int, budget: int) -> None:
    if work > budget:
        raise BudgetExceededError(f"instance too large: {work} evaluations exceed budget {budget}")


def _enumerate_splits(mech: PermanentStateMechanism, k: int):
    """Symbol counts of every stream, and of both sides of every split of it."""
    onehot = _stream_onehot(len(mech.reports), k)
    masks = ((np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int64)  # (M, k)
    counts_j = np.einsum("mk,nkr->nmr", masks, onehot)  # (N, M, |R|)
    counts_all = onehot.sum(axis=1)  # (N, |R|)
    counts_c = counts_all[:, None, :] - counts_j
    return counts_all, counts_j, counts_c


def _gather(table_u: np.ndarray, counts: np.ndarray) -> np.ndarray:
    return table_u[tuple(np.moveaxis(counts, -1, 0))]


def _abs_log_ratio(num: np.ndarray, den: np.ndarray) -> float:
    """Max ``|num - den|`` over log-probabilities; pairs impossible on both sides are skipped."""
    num_zero = np.isneginf(num)
    den_zero = np.isneginf(den)
    if np.any(num_zero != den_zero):
        return math.inf
    live = ~num_zero
    if not np.any(live):
        return 0.0
    return float(np.max(np.abs(num[live] - den[live])))


def exact_untrackable_gamma(mech: PermanentStateMechanism, k: int, budget: int = DEFAULT_BUDGET) -> float:
    """Exact pure untrackability parameter for streams of length ``k``."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check_budget(len(mech.reports) ** k * 2**k * len(mech.inputs), budget)
    counts_all, counts_j, counts_c = _enumerate_splits(mech, k)
    table = _count_log_probs(mech, k)
    worst = 0.0
    for ui in range(len(mech.inputs)):
        joint = _gather(table[ui], counts_all)[:, None]
        split = _gather(table[ui], counts_j) + _gather(table[ui], counts_c)
        worst = max(worst, _abs_log_ratio(np.broadcast_to(joint, split.shape), split))
    return worst


def exact_everlasting_epsilon(mech: PermanentStateMechanism, k: int, budget: int = DEFAULT_BUDGET) -> float:
    """Exact pure everlasting-privacy parameter at horizon ``k``."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n_u = len(mech.inputs)
    _check_budget(len(mech.reports) ** k * n_u * n_u, budget)
    counts_all = _stream_onehot(len(mech.reports), k).sum(axis=1)
    table = _count_log_probs(mech, k)
    per_input = [_gather(table[ui], counts_all) for ui in range(n_u)]
    worst = 0.0
    for a, b in itertools.combinations(range(n_u), 2):
        worst = max(worst, _abs_log_ratio(per_input[a], per_input[b]))
    return worst


def exact_undetectable_gamma(mech: PermanentStateMechanism, k: int, budget: int = DEFAULT_BUDGET) -> float:
    """Exact pure undetectability parameter: the split's second part comes from a second input."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n_u = len(mech.inputs)
    _check_budget(len(mech.reports) ** k * 2**k * n_u * n_u, budget)
    counts_all, counts_j, counts_c = _enumerate_splits(mech, k)
    table = _count_log_probs(mech, k)
    worst = 0.0
    for ui in range(n_u):
        joint = _gather(table[ui], counts_all)[:, None]
        first = _gather(table[ui], counts_j)
        for vi in range(n_u):
            split = first + _gather(table[vi], counts_c)
            worst = max(worst, _abs_log_ratio(np.broadcast_to(joint, split.shape), split))
    return worst


def exact_stream_distribution(mech: PermanentStateMechanism, u: Hashable, k: int) -> dict[tuple, float]:
    """Probability of every stream in ``R^k`` for input ``u``."""
    return {
        tuple(mech.reports[i] for i in t): exact_stream_probability(mech, u, [mech.reports[i] for i in t])
        for t in itertools.product(range(len(mech.reports)), repeat=k)
    }
