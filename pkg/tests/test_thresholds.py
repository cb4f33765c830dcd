import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.nonparametric.smoothers_lowess import lowess as sm_lowess

from infraq.errors import MissingThreshold, TooFewPoints
from infraq.thresholds import (
    FittedCurve,
    Pattern,
    ThresholdEntry,
    ThresholdProfile,
    bootstrap_band,
    classify_and_threshold,
    find_upward_crossings,
    lowess_fit,
)


@pytest.mark.parametrize("frac", [0.05, 0.2, 0.3, 0.6, 1.0])
def test_line_reproduced_exactly(frac, rng):
    x = rng.uniform(-3, 7, 150)
    curve = lowess_fit(x, 2 * x + 1, frac=frac)
    assert np.max(np.abs(curve.y - (2 * curve.x + 1))) <= 1e-9


def test_constant_reproduced(rng):
    curve = lowess_fit(rng.uniform(0, 1, 40), np.full(40, -0.37), frac=0.4)
    assert np.allclose(curve.y, -0.37, atol=1e-14, rtol=0)


@pytest.mark.parametrize("robust_iters", [0, 1, 3])
@pytest.mark.parametrize("frac", [0.3, 0.6])
def test_agrees_with_statsmodels(robust_iters, frac, rng):
    x = rng.uniform(0, 10, 120)
    y = np.sin(x) + rng.normal(0, 0.3, 120)
    ours = lowess_fit(x, y, frac=frac, robust_iters=robust_iters)
    ref = sm_lowess(y, x, frac=frac, it=robust_iters, delta=0.0)
    assert np.allclose(ours.y, ref[:, 1], atol=1e-10, rtol=0)


def test_agrees_with_statsmodels_on_sine_grid():
    x = np.linspace(0, 2 * np.pi, 200)
    ours = lowess_fit(x, np.sin(x), frac=0.3)
    ref = sm_lowess(np.sin(x), x, frac=0.3, it=1, delta=0.0)
    assert np.allclose(ours.y, ref[:, 1], atol=1e-12, rtol=0)


def test_tied_x_values_give_one_grid_point_each(rng):
    x = np.repeat(np.arange(10.0), 3)
    y = x**2 + rng.normal(0, 0.1, 30)
    curve = lowess_fit(x, y, frac=0.5, robust_iters=0)
    assert curve.x.tolist() == list(np.arange(10.0))
    ref = sm_lowess(y, x, frac=0.5, it=0, delta=0.0)
    assert np.allclose(curve.y, ref[::3, 1], atol=1e-10)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        lowess_fit(np.arange(5.0), np.arange(5.0))


def test_exact_line_band_has_no_width(rng):
    x = rng.uniform(0, 10, 60)
    lo, hi = bootstrap_band(x, 3 * x - 2, frac=0.6, B=50, seed=1)
    assert np.max(hi - lo) < 1e-6


def test_estimate_within_refit_range(rng):
    x = rng.uniform(0, 10, 80)
    y = np.sin(x) + rng.normal(0, 0.2, 80)
    est = lowess_fit(x, y, frac=0.5)
    _, _, refits = bootstrap_band(x, y, frac=0.5, B=100, seed=2, return_refits=True)
    assert np.all(est.y >= refits.min(axis=0) - 1e-12)
    assert np.all(est.y <= refits.max(axis=0) + 1e-12)


def test_more_replicates_do_not_widen_band():
    # A single pair of bands is noisy (percentile ends from 50 refits are
    # biased inward), so the widths are averaged over several data sets.
    w50, w200 = [], []
    for s in range(10):
        rng = np.random.default_rng([99, s])
        x = rng.uniform(0, 10, 100)
        y = 0.5 * x + rng.normal(0, 1, 100)
        lo, hi = bootstrap_band(x, y, frac=0.6, B=50, seed=[s, 50])
        w50.append(np.median(hi - lo))
        lo, hi = bootstrap_band(x, y, frac=0.6, B=200, seed=[s, 200])
        w200.append(np.median(hi - lo))
    assert np.mean(w200) <= 1.2 * np.mean(w50)


def test_band_is_seeded(rng):
    x = rng.uniform(0, 10, 50)
    y = x + rng.normal(size=50)
    a = bootstrap_band(x, y, B=20, seed=[4, 1])
    b = bootstrap_band(x, y, B=20, seed=[4, 1])
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


# crossings


def curve(xs, ys):
    return FittedCurve(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))


def test_linear_crossing_at_five():
    xs = np.arange(11.0)
    assert find_upward_crossings(curve(xs, xs - 5)) == [5.0]


def test_all_negative_has_no_crossing():
    assert find_upward_crossings(curve(range(5), [-1, -2, -0.5, -3, -1])) == []


def test_piecewise_crossings():
    assert find_upward_crossings(curve(range(5), [-1, -1, 1, -1, 1])) == [1.5, 3.5]


# patterns


def test_planted_zero_near_10_68(rng):
    x = rng.uniform(0, 30, 300)
    y = 0.08 * (x - 10.68) + rng.normal(0, 0.05, 300)
    fitted = lowess_fit(x, y)
    entry = classify_and_threshold(fitted, feature_range=(0, 30), feature="rail_pct")
    assert entry.pattern is Pattern.CROSSES_UPWARD
    assert abs(entry.threshold - 10.68) <= 0.5


def test_decreasing_negative_end_takes_maximum():
    entry = classify_and_threshold(curve(range(6), [0.5, 0.3, 0.1, -0.1, -0.3, -0.5]),
                                   feature_range=(-1, 7))
    assert entry.pattern is Pattern.DECREASING and entry.threshold == 7


def test_always_positive_takes_minimum():
    entry = classify_and_threshold(curve(range(6), np.full(6, 0.2)), feature_range=(-1, 7))
    assert entry.pattern is Pattern.ALWAYS_POSITIVE and entry.threshold == -1


def test_rising_but_negative_is_always_negative():
    entry = classify_and_threshold(curve(range(4), [-0.9, -0.5, -0.2, -0.1]))
    assert entry.pattern is Pattern.ALWAYS_NEGATIVE and entry.threshold == 3


def test_two_crossings_are_mixed():
    with pytest.warns(UserWarning):
        entry = classify_and_threshold(curve(range(5), [-1, -1, 1, -1, 1]))
    assert entry.pattern is Pattern.MIXED and entry.threshold == 1.5
    assert entry.crossings == [1.5, 3.5]


def test_crossing_then_fall_is_mixed():
    with pytest.warns(UserWarning):
        entry = classify_and_threshold(curve(range(4), [-1, 1, 1, -1]))
    assert entry.pattern is Pattern.MIXED and entry.threshold == 0.5


def test_profile_lookup():
    profile = ThresholdProfile({"a": ThresholdEntry("a", Pattern.DECREASING, 3.0)})
    assert profile.thresholds(["a"]).tolist() == [3.0]
    with pytest.raises(MissingThreshold):
        profile.thresholds(["a", "b"])


# properties


@given(st.integers(0, 10_000), st.sampled_from([(40, 0.25), (50, 0.6), (60, 0.5), (80, 0.3)]))
def test_duplicating_points_keeps_threshold(seed, shape):
    n, frac = shape
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 10, n)
    y = 0.3 * (x - rng.uniform(2, 8)) + rng.normal(0, 0.3, n)
    one = classify_and_threshold(lowess_fit(x, y, frac=frac), feature_range=(0, 10))
    two = classify_and_threshold(lowess_fit(np.tile(x, 2), np.tile(y, 2), frac=frac),
                                 feature_range=(0, 10))
    assert one.pattern == two.pattern
    assert one.threshold == pytest.approx(two.threshold, abs=1e-9)


@given(st.integers(0, 10_000), st.floats(0.1, 0.9), st.floats(0.05, 5.0), st.floats(0, 0.1))
def test_planted_line_threshold_recovered(seed, t_frac, slope, noise_frac):
    rng = np.random.default_rng(seed)
    lo, hi = 0.0, 50.0
    t = lo + t_frac * (hi - lo)
    x = rng.uniform(lo, hi, 200)
    y = slope * (x - t) + rng.normal(0, noise_frac * slope * (hi - lo), 200)
    entry = classify_and_threshold(lowess_fit(x, y), feature_range=(lo, hi))
    assert entry.pattern in (Pattern.CROSSES_UPWARD, Pattern.MIXED)
    assert abs(entry.threshold - t) <= 0.05 * (hi - lo)
