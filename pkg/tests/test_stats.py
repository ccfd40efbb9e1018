import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from manyserver.stats import (Sample, convergence_table, ks_two_sample, summarize, wasserstein1)

values = st.lists(st.integers(-20, 20).map(lambda v: v / 4), min_size=1, max_size=40)


@pytest.mark.parametrize("a, b, d", [([1, 2, 3], [1, 2, 3], 0.0), ([0, 0], [1, 1], 1.0),
                                     ([1, 2], [1.5, 2.5], 0.5)])
def test_ks_examples(a, b, d):
    assert ks_two_sample(a, b).statistic == d


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@settings(max_examples=200, deadline=None)
@given(values, values)
def test_ks_matches_scipy_statistic(a, b):
    ours = ks_two_sample(a, b)
    ref = stats.ks_2samp(a, b, method="exact") if len(a) * len(b) < 400 else stats.ks_2samp(a, b)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert ours.statistic == ks_two_sample(b, a).statistic
    assert 0.0 <= ours.statistic <= 1.0
    if sorted(a) == sorted(b):
        assert ours.statistic == 0


def test_ks_zero_for_equal_ecdfs():
    assert ks_two_sample([1, 1, 2], [2, 1, 1]).statistic == 0
    assert ks_two_sample([1, 1, 2], [1, 2, 2]).statistic > 0
    assert ks_two_sample([1, 2], [1, 1, 2, 2]).statistic == 0  # equal ECDFs, different multisets


def test_ks_pvalue_asymptotic():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=3000), rng.normal(0.05, 1, size=2500)
    ours = ks_two_sample(a, b)
    d = ours.statistic
    en = 3000 * 2500 / 5500
    assert ours.pvalue == pytest.approx(stats.kstwobign.sf(math.sqrt(en) * d), rel=1e-10)


def test_empty_and_nonfinite_rejected():
    with pytest.raises(ValueError):
        ks_two_sample([], [1.0])
    with pytest.raises(ValueError):
        wasserstein1([1.0, math.nan], [1.0])
    with pytest.raises(ValueError):
        Sample([])


@pytest.mark.parametrize("a, b, w", [([1.0, 2.0], [1.0, 2.0], 0.0), ([0.0], [1.0], 1.0),
                                     ([0.0, 2.0], [1.0, 3.0], 1.0)])
def test_w1_examples(a, b, w):
    assert wasserstein1(a, b) == w


@settings(max_examples=200, deadline=None)
@given(values, values)
def test_w1_matches_scipy(a, b):
    assert wasserstein1(a, b) == pytest.approx(stats.wasserstein_distance(a, b), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_w1_metric_on_equal_sizes(m, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, m))
    assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a))
    assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-12


@pytest.mark.parametrize("a, mean, var", [([1, 1, 1], 1.0, 0.0), ([0, 2], 1.0, 2.0), ([-1, 1], 0.0, 2.0)])
def test_summarize_examples(a, mean, var):
    s = summarize(a)
    assert (s.mean, s.variance) == (mean, var) and s.variance_defined


def test_summarize_ci_and_small_samples():
    s = summarize([0.0, 2.0, 4.0, 6.0])
    assert s.ci_half_width == pytest.approx(1.959963984540054 * math.sqrt(np.var([0, 2, 4, 6], ddof=1) / 4))
    one = summarize([3.0])
    assert one.mean == 3.0 and math.isnan(one.variance) and not one.variance_defined


def test_table_final_row_self_reference():
    rng = np.random.default_rng(1)
    top = rng.normal(size=500)
    t = convergence_table({10: rng.normal(size=500), 40: top}, top)
    assert [r.n for r in t.rows] == [10, 40]
    assert t.rows[-1].ks_distance == 0 and t.rows[-1].w1 == 0


def test_table_synthetic_ladder():
    rng = np.random.default_rng(2)
    ref = rng.normal(size=20_000)
    ladder = {n: rng.normal(1 / math.sqrt(n), 1, size=20_000) for n in (1, 4, 16, 64, 256)}
    t = convergence_table(ladder, ref, t=1.0)
    assert t.ks_nonincreasing(slack=0.01)
    assert t.ks_distances()[0] > 0.3 and t.ks_distances()[-1] < 0.03
    assert all(row.t == 1.0 for row in t.rows)


def test_table_rows_sorted_and_empty_rejected():
    t = convergence_table([(100, [1.0, 2.0]), (25, [0.0, 1.0])], [0.5, 1.5])
    assert [r.n for r in t.rows] == [25, 100]
    with pytest.raises(ValueError):
        convergence_table({}, [1.0])


def test_statistics_bit_reproducible():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=999), rng.normal(size=1001)
    assert ks_two_sample(a, b) == ks_two_sample(a.copy(), b.copy())
    assert wasserstein1(a, b) == wasserstein1(a.copy(), b.copy())
