import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circuitfair import (
    ConcavePwl,
    LinearUtility,
    UtilityFamily,
    ValidationError,
    alpha_utility,
    complete_demand_matrix,
    empirical_cdf,
    evaluate_utility,
    fit_concave_pwl,
    realtime_utilities,
)
from circuitfair.utility import (
    EPS_FLOOR,
    EPS_SLOPE,
    load_utilities,
    save_utilities,
)


# ---------------------------------------------------------------------------
# alpha-fair outer utility


def test_alpha0_is_identity():
    assert alpha_utility(7.25, 0) == 7.25


def test_alpha1_is_log():
    assert alpha_utility(1.0, 1) == 0.0


def test_alpha2():
    assert alpha_utility(2.0, 2) == -0.5


def test_domain_errors():
    with pytest.raises(ValidationError):
        alpha_utility(0.0, 1)
    with pytest.raises(ValidationError):
        alpha_utility(-1.0, 0)
    with pytest.raises(ValidationError):
        alpha_utility(1.0, -0.5)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(0.01, 1e4), st.floats(0.01, 1e4),
    st.floats(0.01, 0.99),
    st.sampled_from([0.0, 0.5, 1.0, 2.0, 4.0, 32.0]),
)
def test_alpha_utility_increasing_and_concave(f1, f2, theta, alpha):
    lo, hi = sorted((f1, f2))
    if hi - lo < 1e-9:
        hi = lo + 1e-6
    assert alpha_utility(hi, alpha) > alpha_utility(lo, alpha)
    mid = theta * lo + (1 - theta) * hi
    chord = (theta * alpha_utility(lo, alpha)
             + (1 - theta) * alpha_utility(hi, alpha))
    assert alpha_utility(mid, alpha) >= chord - 1e-12 * max(1.0, abs(chord))


# ---------------------------------------------------------------------------
# linear utilities


def test_linear_utility():
    fam = realtime_utilities(
        complete_demand_matrix(np.array([[0.0, 4.0], [1.0, 0.0]])), alpha=2.0)
    phi, u = evaluate_utility(fam, (0, 1), 8.0)
    assert phi == 2.0
    assert u == -0.5


def test_zero_rate_floor():
    fam = realtime_utilities(
        complete_demand_matrix(np.zeros((2, 2))), alpha=2.0, rate_floor=1e-3)
    assert fam.utilities[(0, 1)].rate == 1e-3
    assert fam.phi((0, 1), 1.0) == pytest.approx(1000.0)


def test_interpolated_rates_feed_weights():
    a = complete_demand_matrix(np.array([[0.0, 4.0], [2.0, 0.0]]))
    b = complete_demand_matrix(np.array([[0.0, 6.0], [4.0, 0.0]]))
    mean = complete_demand_matrix(0.5 * (a.offdiagonal() + b.offdiagonal()))
    fam = realtime_utilities(mean, alpha=2.0)
    assert fam.utilities[(0, 1)].rate == 5.0
    assert fam.utilities[(1, 0)].rate == 3.0


# ---------------------------------------------------------------------------
# empirical CDF


def test_cdf_simple():
    cdf = empirical_cdf([1.0, 2.0, 3.0, 4.0])
    assert cdf(2.5) == 0.5
    assert cdf(4.0) == 1.0
    assert cdf(0.5) == 0.0


def test_cdf_requires_samples():
    with pytest.raises(ValidationError):
        empirical_cdf([])


def test_42_sample_structure():
    # 7 weeks x 6 snapshots
    samples = np.arange(42, dtype=float)
    cdf = empirical_cdf(samples)
    assert cdf.count == 42
    assert cdf(samples[20]) == 21 / 42


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e5), min_size=1, max_size=80),
       st.floats(-10, 1e5 + 10))
def test_cdf_counts_are_integers(samples, x):
    cdf = empirical_cdf(samples)
    count = cdf(x) * cdf.count
    assert abs(count - round(count)) < 1e-9
    assert 0 <= count <= cdf.count


# ---------------------------------------------------------------------------
# PWL fitting


def test_fit_affine_data_is_exact():
    # CDF points exactly on y = x/10 over [5, 10]
    samples = np.linspace(0.05, 10.0, 200)
    cdf = empirical_cdf(samples)
    pwl = fit_concave_pwl(cdf, segments=3)
    med = cdf.median()
    for x in np.linspace(med, 10.0, 25):
        assert pwl.evaluate(float(x)) == pytest.approx(cdf(x), abs=1e-2)


def test_fit_line_reproduced_within_tolerance():
    # two-point "CDF" lying exactly on a line: the concave fit is exact
    xs = np.array([5.0, 6.0, 7.0, 8.0, 9.0, 10.0])
    cdf = empirical_cdf(np.concatenate([np.zeros(6), xs]))
    pwl = fit_concave_pwl(cdf, segments=1)
    # above-median points are (5, 7/12), ..., (10, 1): exactly affine
    for x, want in [(5.0, 7 / 12), (10.0, 1.0), (7.5, 0.5 * (7 / 12 + 1.0))]:
        assert pwl.evaluate(x) == pytest.approx(want, abs=1e-6)


def _uniform_fit_rms(n_samples, seed=123):
    rng = np.random.default_rng(seed)
    samples = rng.uniform(0.0, 10.0, size=n_samples)
    cdf = empirical_cdf(samples)
    pwl = fit_concave_pwl(cdf, segments=3)
    med = cdf.median()
    xs = np.linspace(med, samples.max(), 400)
    true = xs / 10.0
    est = np.array([pwl.evaluate(float(x)) for x in xs])
    return float(np.sqrt(np.mean((est - true) ** 2)))


def test_fit_uniform_rms_shrinks_with_samples():
    rms_small = _uniform_fit_rms(60)
    rms_big = _uniform_fit_rms(10_000)
    assert rms_big <= 0.05
    assert rms_big <= rms_small + 0.01


def test_degenerate_all_equal_samples():
    cdf = empirical_cdf([3.0] * 10)
    pwl = fit_concave_pwl(cdf, segments=3)
    slopes = pwl.slopes()
    assert all(s >= EPS_SLOPE * (1 - 1e-9) for s in slopes)
    assert all(b >= a - 1e-12 for a, b in zip(slopes[1:], slopes))
    assert pwl.evaluate(3.0) == pytest.approx(1.0, abs=1e-3)


def test_fit_slope_invariants_on_random_history():
    rng = np.random.default_rng(5)
    for _ in range(10):
        samples = rng.lognormal(mean=2.0, sigma=0.6, size=42)
        pwl = fit_concave_pwl(empirical_cdf(samples), segments=3)
        slopes = pwl.slopes()
        assert all(s >= EPS_SLOPE * (1 - 1e-9) for s in slopes)
        for a, b in zip(slopes, slopes[1:]):
            assert b <= a + 1e-9
        assert pwl.value_at_zero() >= EPS_FLOOR * (1 - 1e-9)


def test_fit_ignores_below_median_points():
    rng = np.random.default_rng(9)
    upper = rng.uniform(5.0, 10.0, size=21)
    lower = rng.uniform(0.0, 4.0, size=21)
    pwl1 = fit_concave_pwl(empirical_cdf(np.concatenate([lower, upper])),
                           segments=3)
    # perturb only below-median samples (keeping them below the median)
    lower2 = lower * 0.5
    pwl2 = fit_concave_pwl(empirical_cdf(np.concatenate([lower2, upper])),
                           segments=3)
    assert pwl1.breakpoints == pwl2.breakpoints


def test_evaluate_is_min_over_pieces():
    rng = np.random.default_rng(11)
    samples = rng.lognormal(mean=1.0, sigma=0.5, size=42)
    pwl = fit_concave_pwl(empirical_cdf(samples), segments=3)
    pieces = pwl.pieces()
    for x in np.linspace(0.0, samples.max() * 2, 60):
        want = min(a + b * x for a, b in pieces)
        assert pwl.evaluate(float(x)) == pytest.approx(max(want, EPS_FLOOR),
                                                       rel=1e-12)


def test_pwl_interpolation_example():
    pwl = ConcavePwl(breakpoints=((0.0, 0.1), (10.0, 1.0)))
    assert pwl.evaluate(5.0) == pytest.approx(0.55)
    fam = UtilityFamily(alpha=2.0, utilities={(0, 1): pwl,
                                              (1, 0): LinearUtility(1.0)})
    phi, _ = evaluate_utility(fam, (0, 1), 5.0)
    assert phi == pytest.approx(0.55)


def test_pwl_evaluate_at_zero_positive():
    rng = np.random.default_rng(3)
    samples = rng.uniform(5.0, 9.0, size=42)
    pwl = fit_concave_pwl(empirical_cdf(samples), segments=3)
    assert pwl.evaluate(0.0) >= EPS_FLOOR * (1 - 1e-9)


def test_pwl_invariant_violations_rejected():
    with pytest.raises(ValidationError):
        ConcavePwl(breakpoints=((0.0, 0.5), (1.0, 0.4)))  # decreasing
    with pytest.raises(ValidationError):
        ConcavePwl(breakpoints=((0.0, 0.1), (1.0, 0.2), (2.0, 0.5)))  # convex


# ---------------------------------------------------------------------------
# serialization


def test_family_roundtrip(tmp_path):
    rng = np.random.default_rng(17)
    utilities = {}
    for k in range(3):
        for l in range(3):
            if k == l:
                continue
            if (k + l) % 2:
                utilities[(k, l)] = LinearUtility(rate=float(rng.uniform(1, 9)))
            else:
                samples = rng.lognormal(1.0, 0.4, size=42)
                utilities[(k, l)] = fit_concave_pwl(empirical_cdf(samples))
    fam = UtilityFamily(alpha=2.0, utilities=utilities)
    path = tmp_path / "utils.txt"
    save_utilities(fam, path)
    back = load_utilities(path)
    assert back.alpha == 2.0
    assert sorted(back.utilities) == sorted(fam.utilities)
    for pair, u in fam.utilities.items():
        b = back.utilities[pair]
        if isinstance(u, LinearUtility):
            assert b.rate == u.rate
        else:
            assert b.breakpoints == u.breakpoints
