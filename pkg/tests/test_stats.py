import math

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from cf_translate.stats import (
    DEGENERATE,
    OK,
    ZERO_VARIANCE,
    paired_test,
    regularized_incomplete_beta,
    t_two_sided_p,
    unpaired_test,
)

finite_floats = st.floats(-1e3, 1e3, allow_nan=False, width=64)


class TestIncompleteBeta:
    def test_endpoints(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_symmetric_half(self):
        # I_0.5(a, a) = 0.5 by symmetry
        for a in (0.5, 1.0, 3.0, 10.0):
            assert regularized_incomplete_beta(a, a, 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_uniform_case(self):
        # I_x(1, 1) = x
        for x in (0.1, 0.37, 0.9):
            assert regularized_incomplete_beta(1.0, 1.0, x) == pytest.approx(x, abs=1e-12)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)

    @given(
        st.floats(0.5, 50.0),
        st.floats(0.5, 50.0),
        st.floats(0.0, 1.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_scipy(self, a, b, x):
        ours = regularized_incomplete_beta(a, b, x)
        ref = float(scipy.special.betainc(a, b, x))
        assert ours == pytest.approx(ref, abs=1e-12)


class TestTwoSidedP:
    def test_known_value_df6(self):
        assert t_two_sided_p(-1.7320508075688772, 6) == pytest.approx(
            0.13397459621556118, abs=1e-12
        )

    def test_zero_statistic(self):
        assert t_two_sided_p(0.0, 5) == 1.0

    @given(st.floats(-50, 50), st.integers(1, 200))
    @settings(max_examples=300, deadline=None)
    def test_matches_scipy_sf(self, t, df):
        ref = 2.0 * float(scipy.stats.t.sf(abs(t), df))
        assert t_two_sided_p(t, df) == pytest.approx(ref, abs=1e-12)


class TestUnpaired:
    def test_frozen_example(self):
        out = unpaired_test([1, 2, 3, 4], [2, 4, 6, 8])
        assert out.status == OK
        assert out.df == 6
        assert out.statistic == pytest.approx(-1.7320508075688772, abs=1e-12)
        assert out.p_value == pytest.approx(0.13397459621556118, abs=1e-12)

    def test_identical_groups(self):
        out = unpaired_test([0.0, 1.0], [0.0, 1.0])
        assert out.status == OK
        assert out.statistic == 0.0
        assert out.p_value == 1.0

    def test_constant_equal_groups_degenerate(self):
        out = unpaired_test([3.0, 3.0], [3.0, 3.0])
        assert out.status == DEGENERATE
        assert out.statistic is None and out.p_value is None

    def test_constant_unequal_groups_p_zero(self):
        out = unpaired_test([1.0, 1.0], [2.0, 2.0])
        assert out.status == ZERO_VARIANCE
        assert out.p_value == 0.0
        assert out.statistic == -math.inf

    def test_rejects_tiny_samples(self):
        with pytest.raises(ValueError):
            unpaired_test([1.0], [1.0, 2.0])

    @given(
        st.lists(finite_floats, min_size=2, max_size=30),
        st.lists(finite_floats, min_size=2, max_size=30),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_scipy(self, a, b):
        ours = unpaired_test(a, b)
        ref = scipy.stats.ttest_ind(a, b, equal_var=True)
        if ours.status != OK:
            assert not math.isfinite(ref.statistic) or math.isnan(ref.statistic)
            return
        assert ours.statistic == pytest.approx(float(ref.statistic), rel=1e-9, abs=1e-12)
        assert ours.p_value == pytest.approx(float(ref.pvalue), abs=1e-9)


class TestPaired:
    def test_frozen_example(self):
        a = [1.0, 1.0, 1.0, 1.0]
        b = [1.1, 1.2, 1.3, 1.4]
        out = paired_test(a, b)
        assert out.status == OK
        assert out.df == 3
        assert out.statistic == pytest.approx(3.8729833462074175, abs=1e-12)
        assert out.p_value == pytest.approx(0.03046629166217096, abs=1e-12)

    def test_identical_pairs_degenerate(self):
        out = paired_test([0.3, 0.7], [0.3, 0.7])
        assert out.status == DEGENERATE

    def test_constant_shift_p_zero(self):
        # dyadic values so every difference is exactly 0.5
        out = paired_test([0.125, 0.25, 0.375], [0.625, 0.75, 0.875])
        assert out.status == ZERO_VARIANCE
        assert out.p_value == 0.0
        assert out.statistic == math.inf

    def test_id_alignment(self):
        # same data, b given in reverse id order; alignment restores pairing
        a = [1.0, 2.0, 3.0]
        b = [3.3, 2.2, 1.1]
        out = paired_test(a, b, a_ids=["x", "y", "z"], b_ids=["z", "y", "x"])
        ref = scipy.stats.ttest_rel([1.1, 2.2, 3.3], a)
        assert out.statistic == pytest.approx(float(ref.statistic), rel=1e-9)

    def test_mismatched_ids_rejected(self):
        with pytest.raises(ValueError, match="pair"):
            paired_test([1, 2], [1, 2], a_ids=["x", "y"], b_ids=["x", "q"])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            paired_test([1, 2, 3], [1, 2])

    @given(
        st.lists(finite_floats, min_size=2, max_size=30),
        st.lists(finite_floats, min_size=2, max_size=30),
    )
    @settings(max_examples=300, deadline=None)
    def test_matches_scipy(self, a, b):
        n = min(len(a), len(b))
        a, b = a[:n], b[:n]
        ours = paired_test(a, b)
        ref = scipy.stats.ttest_rel(b, a)
        if ours.status != OK:
            assert not math.isfinite(ref.statistic) or math.isnan(ref.statistic)
            return
        assert ours.statistic == pytest.approx(float(ref.statistic), rel=1e-9, abs=1e-12)
        assert ours.p_value == pytest.approx(float(ref.pvalue), abs=1e-9)


class TestPairingSensitivity:
    def test_pairing_beats_unpaired_on_shared_baseline(self):
        # When per-sample baselines dominate the group effect, pairing should
        # detect the shift with the smaller p-value nearly always.
        wins = 0
        trials = 100
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            base = rng.normal(0.5, 0.15, size=16)
            a = base + rng.normal(0, 0.01, size=16)
            b = base + 0.05 + rng.normal(0, 0.01, size=16)
            unp = unpaired_test(a, b)
            par = paired_test(a, b)
            assert unp.status == OK and par.status == OK
            if par.p_value < unp.p_value:
                wins += 1
        assert wins >= 95
