import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from untrackable.bitwise import BitwiseParams, as_permanent_mechanism
from untrackable.errors import BudgetExceededError, ValidationError
from untrackable.mechanisms import (
    FiniteStatelessMechanism,
    PermanentStateMechanism,
    SplitIndex,
    chain,
    exact_everlasting_epsilon,
    exact_stream_distribution,
    exact_stream_probability,
    exact_undetectable_gamma,
    exact_untrackable_gamma,
    generate_stream,
    ldp_epsilon,
)
from untrackable.prob import SeededRng, chernoff_radius


def bitwise_mech(e1, e2):
    return as_permanent_mechanism(BitwiseParams(e1, e2))


def brute_untrackable(mech, k):
    """Independent oracle: walk streams and splits with exact_stream_probability."""
    worst = 0.0
    for u in mech.inputs:
        for t in itertools.product(mech.reports, repeat=k):
            joint = exact_stream_probability(mech, u, t)
            for mask in range(2**k):
                a = [t[i] for i in range(k) if mask >> i & 1]
                b = [t[i] for i in range(k) if not mask >> i & 1]
                split = exact_stream_probability(mech, u, a) * exact_stream_probability(mech, u, b)
                worst = max(worst, abs(math.log(joint / split)))
    return worst


@st.composite
def small_mechanisms(draw):
    n_u, n_s, n_r = (draw(st.integers(1, 3)) for _ in range(3))

    def rows(n, m):
        raw = np.array([[draw(st.floats(0.05, 1.0)) for _ in range(m)] for _ in range(n)])
        return raw / raw.sum(axis=1, keepdims=True)

    return PermanentStateMechanism(range(n_u), range(n_s), range(n_r), rows(n_u, n_s), rows(n_s, n_r))


def test_rows_must_be_stochastic():
    with pytest.raises(ValidationError, match="state_prior"):
        PermanentStateMechanism((0,), (0, 1), (0,), [[0.5, 0.6]], [[1.0], [1.0]])
    with pytest.raises(ValidationError, match="report_kernel"):
        PermanentStateMechanism((0,), (0,), (0, 1), [[1.0]], [[-0.1, 1.1]])


def test_generate_stream_identity_kernel():
    mech = PermanentStateMechanism((0,), ("a", "b"), ("a", "b"), [[0.0, 1.0]], np.eye(2))
    assert generate_stream(mech, 0, 6, SeededRng(1)) == ("b",) * 6
    with pytest.raises(ValidationError):
        generate_stream(mech, 3, 2, SeededRng(1))


def test_generate_stream_noiseless_reports_and_determinism():
    mech = bitwise_mech(1.0, 60.0)
    for seed in range(20):
        stream = generate_stream(mech, 1, 5, SeededRng(seed))
        assert len(set(stream)) == 1
    mech = bitwise_mech(1.0, 1.0)
    assert generate_stream(mech, 0, 5, SeededRng(3)) == generate_stream(mech, 0, 5, SeededRng(3))


def test_stateless_stream():
    mech = FiniteStatelessMechanism((0, 1), (0, 1), [[1.0, 0.0], [0.0, 1.0]])
    assert generate_stream(mech, 1, 3, SeededRng(0)) == (1, 1, 1)


def test_stream_probability_examples():
    mech = bitwise_mech(math.log(3), math.log(3))
    assert exact_stream_probability(mech, 0, ()) == 1.0
    # input 1 emitting two zeros = input 0 emitting two ones
    assert exact_stream_probability(mech, 1, (0, 0)) == pytest.approx(0.1875, abs=1e-15)
    assert exact_stream_probability(mech, 0, (1, 1)) == pytest.approx(0.1875, abs=1e-15)
    assert exact_stream_probability(mech, 0, (0, 0)) == pytest.approx(0.4375, abs=1e-15)
    single = PermanentStateMechanism((0,), (0,), (0, 1), [[1.0]], [[0.3, 0.7]])
    assert exact_stream_probability(single, 0, (1, 0, 1)) == pytest.approx(0.7 * 0.3 * 0.7)


@settings(max_examples=25, deadline=None)
@given(small_mechanisms(), st.integers(1, 4))
def test_stream_probabilities_sum_to_one(mech, k):
    for u in mech.inputs:
        assert sum(exact_stream_distribution(mech, u, k).values()) == pytest.approx(1.0, abs=1e-9)


def test_single_state_factorizes():
    mech = PermanentStateMechanism((0,), (0,), (0, 1, 2), [[1.0]], [[0.2, 0.3, 0.5]])
    t = (0, 2, 2, 1)
    J = SplitIndex(4, {0, 3})
    a = [t[i] for i in sorted(J.J)]
    b = [t[i] for i in sorted(J.complement)]
    assert exact_stream_probability(mech, 0, t) == pytest.approx(
        exact_stream_probability(mech, 0, a) * exact_stream_probability(mech, 0, b), rel=1e-12
    )
    assert exact_untrackable_gamma(mech, 4) == pytest.approx(0.0, abs=1e-12)


def test_split_index():
    J = SplitIndex.prefix(2, 5)
    assert J.J == frozenset({0, 1})
    assert J.complement == frozenset({2, 3, 4})
    with pytest.raises(ValidationError):
        SplitIndex(3, {3})


def test_monte_carlo_matches_exact():
    mech = bitwise_mech(0.7, 1.3)
    n = 10**5
    rng = SeededRng(11)
    counts: dict = {}
    for _ in range(n):
        t = generate_stream(mech, 0, 2, rng)
        counts[t] = counts.get(t, 0) + 1
    radius = chernoff_radius(n, 1e-3)
    for t, p in exact_stream_distribution(mech, 0, 2).items():
        assert abs(counts.get(t, 0) / n - p) <= radius


def test_trivial_oracle_values():
    mech = bitwise_mech(0.4, 0.9)
    assert exact_untrackable_gamma(mech, 1) == pytest.approx(0.0, abs=1e-12)
    flat = PermanentStateMechanism((0, 1), (0, 1), (0, 1), [[0.8, 0.2], [0.1, 0.9]], [[0.4, 0.6], [0.4, 0.6]])
    assert exact_untrackable_gamma(flat, 4) == pytest.approx(0.0, abs=1e-12)
    one_input = PermanentStateMechanism((0,), (0, 1), (0, 1), [[0.3, 0.7]], [[0.9, 0.1], [0.2, 0.8]])
    assert exact_everlasting_epsilon(one_input, 5) == 0.0
    assert exact_undetectable_gamma(one_input, 3) == pytest.approx(exact_untrackable_gamma(one_input, 3), abs=1e-12)
    blind = PermanentStateMechanism((0, 1), (0, 1), (0, 1), [[0.3, 0.7], [0.3, 0.7]], [[0.4, 0.6], [0.4, 0.6]])
    assert exact_everlasting_epsilon(blind, 4) == pytest.approx(0.0, abs=1e-12)
    assert exact_undetectable_gamma(blind, 3) == pytest.approx(0.0, abs=1e-12)


def test_bitwise_k2_bracket_and_brute_force():
    mech = bitwise_mech(0.1, 1.0)
    g = exact_untrackable_gamma(mech, 2)
    assert 1 - 0.1 - math.log(2) <= g <= 1.0
    assert g == pytest.approx(brute_untrackable(mech, 2), abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(small_mechanisms(), st.integers(1, 3))
def test_vectorized_oracle_matches_brute_force(mech, k):
    assert exact_untrackable_gamma(mech, k) == pytest.approx(brute_untrackable(mech, k), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(small_mechanisms(), st.integers(1, 5))
def test_permanent_state_bound_holds(mech, k):
    eps = mech.report_epsilon()
    assert exact_untrackable_gamma(mech, k) <= (k // 2) * eps + 1e-9


@settings(max_examples=20, deadline=None)
@given(small_mechanisms(), st.integers(1, 4))
def test_undetectable_at_most_sum(mech, k):
    total = exact_untrackable_gamma(mech, k) + exact_everlasting_epsilon(mech, k)
    assert exact_undetectable_gamma(mech, k) <= total + 1e-9


def test_undetectable_bitwise():
    mech = bitwise_mech(1.0, 1.0)
    assert exact_undetectable_gamma(mech, 2) <= exact_untrackable_gamma(mech, 2) + exact_everlasting_epsilon(mech, 2) + 1e-12


def test_everlasting_monotone_and_bounded():
    mech = bitwise_mech(0.5, 1.0)
    values = [exact_everlasting_epsilon(mech, k) for k in range(1, 11)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] <= 0.5 + 1e-12


def test_zero_vs_positive_is_infinite():
    mech = PermanentStateMechanism((0, 1), (0, 1), (0, 1), [[1.0, 0.0], [0.0, 1.0]], np.eye(2))
    assert exact_everlasting_epsilon(mech, 1) == math.inf
    assert ldp_epsilon(np.eye(2)) == math.inf


def test_budget_guard():
    with pytest.raises(BudgetExceededError, match="instance too large"):
        exact_untrackable_gamma(bitwise_mech(1, 1), 12, budget=1000)


def test_chain_matrix_product():
    a = FiniteStatelessMechanism((0, 1), ("x", "y"), [[0.7, 0.3], [0.3, 0.7]])
    b = FiniteStatelessMechanism(("x", "y"), (0, 1), [[0.6, 0.4], [0.4, 0.6]])
    c = chain(a, b)
    assert c.kernel[0, 0] == pytest.approx(0.7 * 0.6 + 0.3 * 0.4)


def test_json_round_trip(tmp_path):
    mech = bitwise_mech(0.3, 0.8)
    path = tmp_path / "m.json"
    path.write_text(mech.dumps())
    back = PermanentStateMechanism.load(path)
    np.testing.assert_allclose(back.report_kernel, mech.report_kernel)
    assert back.inputs == mech.inputs


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda d: d.pop("states"), "states"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d.update(report_kernel=[[0.5, 0.5]]), "report_kernel"),
        (lambda d: d.update(inputs="ab"), "inputs"),
    ],
)
def test_json_errors_name_field(mutate, field):
    doc = bitwise_mech(0.3, 0.8).to_dict()
    mutate(doc)
    with pytest.raises(ValidationError, match=field):
        PermanentStateMechanism.from_dict(json.loads(json.dumps(doc)))
