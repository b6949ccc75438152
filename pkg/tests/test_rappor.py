import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from untrackable.errors import ValidationError
from untrackable.mechanisms import SplitIndex
from untrackable.prob import SeededRng, chernoff_radius
from untrackable.rappor import (
    RapporParams,
    RapporReportSet,
    composition_gamma,
    encode_bloom,
    estimate_trackability_percentiles,
    marginal_one_rate,
    permanent_randomize,
    position_trackability,
    rappor_report,
    report_set_trackability,
    trackability_samples,
    worst_case_gamma,
)

P = RapporParams(128, 2, 0.5, 0.5, 0.75)

WORST_CASE = {
    2: 7.714008349934885,
    3: 13.810059121593174,
    4: 23.160702698499367,
    5: 38.32143182990363,
    6: 55.01599092734287,
    7: 72.14651052510693,
    8: 94.90089464514297,
    9: 119.36532468090775,
    10: 142.67375011125492,
    11: 170.17748308615091,
    12: 199.4380884218118,
    13: 225.9396144617209,
    14: 257.327381941984,
    15: 288.6453266158751,
}


def P_mix(b, a, c, params=P):
    """Direct-formula oracle for the probability of one column."""
    w = 1 - params.f / 2 if b else params.f / 2
    q, p = params.q, params.p
    return w * q**c * (1 - q) ** (a - c) + (1 - w) * p**c * (1 - p) ** (a - c)


def test_params_validation():
    with pytest.raises(ValidationError):
        RapporParams(4, 5)
    with pytest.raises(ValidationError):
        RapporParams(q=1.2)


def test_encode_bloom():
    single = RapporParams(64, 1)
    assert encode_bloom(b"x", single).sum() == 1
    assert np.array_equal(encode_bloom(b"abc", P), encode_bloom(b"abc", P))
    assert not np.array_equal(encode_bloom(b"abc", P), encode_bloom(b"abc", RapporParams(hash_seed=1)))


def test_encode_bloom_collision_rate():
    n = 10**4
    two = sum(int(encode_bloom(i.to_bytes(4, "little"), P).sum() == 2) for i in range(n))
    assert abs(two / n - 127 / 128) <= chernoff_radius(n, 1e-4)


def test_permanent_randomize():
    B = encode_bloom(b"v", P)
    zero_f = RapporParams(f=0.0)
    assert np.array_equal(permanent_randomize(B, zero_f, SeededRng(1)), B)
    n = 10**5
    ones = np.ones((n, P.s), dtype=np.uint8)
    out = permanent_randomize(ones, P, SeededRng(2))
    assert abs(out[:, 0].mean() - 0.75) <= chernoff_radius(n, 1e-4)
    full = RapporParams(f=1.0)
    a = permanent_randomize(ones[:n], full, SeededRng(3))[:, 0].mean()
    b = permanent_randomize(np.zeros_like(ones[:n]), full, SeededRng(3))[:, 0].mean()
    assert a == b and abs(a - 0.5) <= chernoff_radius(n, 1e-4)


def test_rappor_report_channels():
    B = encode_bloom(b"v", P)
    faithful = RapporParams(f=0.0, p=0.0, q=1.0)
    assert np.array_equal(rappor_report(permanent_randomize(B, faithful, SeededRng(1)), faithful, SeededRng(2)), B)
    flat = RapporParams(p=0.4, q=0.4)
    a = rappor_report(np.zeros((4000, 128), np.uint8), flat, SeededRng(5))
    b = rappor_report(np.ones((4000, 128), np.uint8), flat, SeededRng(5))
    assert np.array_equal(a, b)


def test_marginal_rates_match_closed_forms():
    assert marginal_one_rate(P, 1) == pytest.approx(0.6875)
    assert marginal_one_rate(P, 0) == pytest.approx(0.5 * 0.5 * 0.75 + 0.75 * 0.5)
    n = 10**5
    for b in (0, 1):
        B = np.full((n, P.s), b, dtype=np.uint8)
        rng = SeededRng(9, b)
        rate = rappor_report(permanent_randomize(B, P, rng.substream(0)), P, rng.substream(1))[:, 0].mean()
        assert abs(rate - marginal_one_rate(P, b)) <= chernoff_radius(n, 1e-4)


def test_position_trackability_examples():
    assert position_trackability(0, 1, 0, 0, 2, P) == pytest.approx(0.4375**2 / 0.203125, abs=1e-12)
    assert position_trackability(0, 1, 0, 0, 2, P) == pytest.approx(0.9423076923076923, abs=1e-12)
    assert position_trackability(1, 1, 0, 0, 2, P) == pytest.approx(0.3125**2 / 0.109375, abs=1e-12)
    for b in (0, 1):
        for x in range(4):
            assert position_trackability(b, 3, x, 0, 3, P) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValidationError):
        position_trackability(0, 1, 2, 0, 2, P)


@given(st.integers(0, 1), st.integers(2, 9), st.data())
def test_position_trackability_against_direct_formula(b, k, data):
    i = data.draw(st.integers(0, k))
    x = data.draw(st.integers(0, i))
    y = data.draw(st.integers(0, k - i))
    expected = P_mix(b, i, x) * P_mix(b, k - i, y) / P_mix(b, k, x + y)
    assert position_trackability(b, i, x, y, k, P) == pytest.approx(expected, rel=1e-12)


def test_report_set_trackability_examples():
    single = RapporParams(1, 1, 0.5, 0.5, 0.75)
    T = RapporReportSet(np.zeros((2, 1)), np.zeros(1))
    assert report_set_trackability(T, SplitIndex.prefix(1, 2), single) == pytest.approx(-math.log(0.4375**2 / 0.203125), abs=1e-12)
    assert report_set_trackability(T, SplitIndex(2, frozenset()), single) == pytest.approx(0.0, abs=1e-15)
    iid = RapporParams(16, 2, 0.5, 0.3, 0.3)
    rng = SeededRng(4).generator
    reports = rng.integers(0, 2, size=(6, 16))
    reports[3:] = reports[:3]
    T = RapporReportSet(reports, encode_bloom(b"z", iid))
    assert report_set_trackability(T, SplitIndex.prefix(3, 6), iid) == pytest.approx(0.0, abs=1e-12)


def test_worst_case_reference_values():
    for k, expected in WORST_CASE.items():
        assert worst_case_gamma(P, k) == pytest.approx(expected, rel=1e-12)


def test_worst_case_trivial_and_monotone():
    assert worst_case_gamma(RapporParams(p=0.6, q=0.6), 5) == pytest.approx(0.0, abs=1e-12)
    values = [worst_case_gamma(P, k) for k in range(2, 16)]
    assert all(a <= b for a, b in zip(values, values[1:]))
    with pytest.raises(ValidationError):
        worst_case_gamma(P, 1)
    # more set bits means more positions of the more revealing class
    assert worst_case_gamma(P, 4, set_bits=1) != worst_case_gamma(P, 4)


def test_composition_gamma():
    assert composition_gamma(RapporParams(1, 1, 0.5, 0.5, 0.75), 2) == pytest.approx(math.log(2), abs=1e-15)
    assert composition_gamma(P, 2) == pytest.approx(128 * math.log(2), abs=1e-12)
    assert composition_gamma(P, 2) == pytest.approx(88.7228, abs=1e-4)
    assert composition_gamma(RapporParams(p=0.3, q=0.3), 4) == 0.0
    assert composition_gamma(RapporParams(p=0.0, q=0.75), 2) == math.inf


@settings(max_examples=20, deadline=None)
@given(
    st.integers(1, 20),
    st.floats(0.0, 1.0),
    st.floats(0.05, 0.95),
    st.floats(0.05, 0.95),
    st.integers(2, 15),
)
def test_worst_case_below_composition(s, f, p, q, k):
    params = RapporParams(s, 1, f, p, q)
    assert worst_case_gamma(params, k) <= composition_gamma(params, k) + 1e-9


def test_sampled_report_sets_below_worst_case():
    k = 6
    bound = worst_case_gamma(P, k)
    rng = SeededRng(21)
    worst = 0.0
    for m in range(10**4 // 50):
        g = rng.substream(m)
        B = encode_bloom(m.to_bytes(4, "little"), P)
        for _ in range(50):
            reports = rappor_report(np.broadcast_to(permanent_randomize(B, P, g), (k, P.s)), P, g)
            J = SplitIndex(k, frozenset(np.flatnonzero(g.random(k) < 0.5).tolist()))
            worst = max(worst, report_set_trackability(RapporReportSet(reports, B), J, P))
    assert worst <= bound + 1e-9


def test_samples_deterministic_and_worker_independent():
    a = trackability_samples(P, 4, 2500, SeededRng(5))
    b = trackability_samples(P, 4, 2500, SeededRng(5))
    c = trackability_samples(P, 4, 2500, SeededRng(5), workers=2)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)
    assert np.all(a >= 0)


def test_flat_reports_give_zero_percentiles():
    flat = RapporParams(p=0.5, q=0.5)
    med, p90 = estimate_trackability_percentiles(flat, 3, 1000, SeededRng(1))
    assert med.point == 0.0 and p90.point == 0.0


def test_absolute_statistic_dominates_signed():
    signed = trackability_samples(P, 3, 1000, SeededRng(8))
    absolute = trackability_samples(P, 3, 1000, SeededRng(8), statistic="absolute")
    assert np.all(absolute >= signed - 1e-12)
    with pytest.raises(ValidationError):
        trackability_samples(P, 3, 10, SeededRng(8), statistic="median")


def test_percentiles_require_enough_samples():
    with pytest.raises(ValidationError):
        estimate_trackability_percentiles(P, 2, 500, SeededRng(1))
