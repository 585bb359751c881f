import math
import random

import pytest
from hypothesis import given, strategies as st

from mpager.stats import DegenerateTestError, betainc, paired_ttest, student_t_sf_two_sided

# two-sided p-values, frozen from an arbitrary-precision (50 digit) incomplete beta
REFERENCE_P = [
    (1.0, 3, 0.39100221895577064),
    (2.0, 5, 0.10193947882985836),
    (-2.5, 10, 0.031446844236608804),
    (0.1, 1, 0.93654896513889286),
    (3.0, 2, 0.095465966266709132),
    (1.96, 1000, 0.050273184955748718),
    (5.0, 30, 2.3296685467007795e-5),
    (0.0, 7, 1.0),
    (12.0, 4, 0.00027642854850297295),
    (2.776445105, 4, 0.050000000010119479),
    (0.5, 100, 0.61817356583088657),
    (8.5, 2, 0.013559949584378917),
]


def test_hand_computed_example():
    # d = [1,1,1,-1]: mean 0.5, sd 1.0, n 4 -> t = 0.5 / (1.0 / 2) = 1.0
    res = paired_ttest([1, 1, 1, -1], [0, 0, 0, 0])
    assert res.t == 1.0
    assert res.df == 3
    assert abs(res.p_two_sided - 0.39100221895577064) < 1e-12


@pytest.mark.parametrize("t,df,p", REFERENCE_P)
def test_p_values_match_reference(t, df, p):
    assert abs(student_t_sf_two_sided(t, df) - p) < 1e-9


def test_p_values_match_scipy_grid():
    stats = pytest.importorskip("scipy.stats")
    for df in (1, 2, 3, 5, 9, 30, 99, 423, 1271):
        for t in (0.01, 0.3, 1.0, 1.7, 2.5, 4.0, 7.5, 20.0):
            ref = 2 * stats.t.sf(t, df)
            assert abs(student_t_sf_two_sided(t, df) - ref) < 1e-9


def test_betainc_edges():
    assert betainc(2, 3, 0.0) == 0.0
    assert betainc(2, 3, 1.0) == 1.0
    # I_x(1, 1) = x
    assert abs(betainc(1, 1, 0.37) - 0.37) < 1e-14
    with pytest.raises(ValueError):
        betainc(0, 1, 0.5)


def test_zero_variance_error():
    with pytest.raises(DegenerateTestError):
        paired_ttest([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    with pytest.raises(DegenerateTestError):
        paired_ttest([0.1, 0.1, 0.1], [0.0, 0.0, 0.0])


def test_length_errors():
    with pytest.raises(ValueError):
        paired_ttest([1, 2], [1])
    with pytest.raises(ValueError):
        paired_ttest([1], [2])


diffs = st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=40)


@given(diffs, diffs)
def test_antisymmetry(a, b):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    try:
        ab = paired_ttest(a, b)
    except DegenerateTestError:
        with pytest.raises(DegenerateTestError):
            paired_ttest(b, a)
        return
    ba = paired_ttest(b, a)
    assert ba.t == -ab.t
    assert ba.p_two_sided == ab.p_two_sided


def test_monte_carlo_null_behaviour():
    # symmetric differences around 0: p roughly uniform, |t| small most of the time
    rng = random.Random(1234)
    ps, big = [], 0
    for _ in range(400):
        a = [rng.gauss(0, 1) for _ in range(200)]
        b = [rng.gauss(0, 1) for _ in range(200)]
        r = paired_ttest(a, b)
        ps.append(r.p_two_sided)
        big += abs(r.t) > 3
    assert big <= 4
    rejected = sum(p < 0.05 for p in ps) / len(ps)
    assert 0.02 <= rejected <= 0.09
    assert 0.4 <= sum(ps) / len(ps) <= 0.6


def test_rounding_level_spread_is_zero_variance():
    with pytest.raises(DegenerateTestError):
        paired_ttest([0.2, 0.4, 0.6], [0.1, 0.3, 0.5])
    # a genuinely small spread is still tested
    res = paired_ttest([1e-9, 2e-9, 4e-9], [0.0, 0.0, 0.0])
    assert res.df == 2 and math.isfinite(res.t)
