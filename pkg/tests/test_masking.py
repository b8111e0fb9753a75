from fractions import Fraction
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flap.config import ConfigError, MaskConfig
from flap.masking import (
    apply_mask,
    keep_all,
    plan_mask,
    plan_mask_1d,
    plan_mask_2d,
    restore_order,
)
from flap.numerics import ShapeError, Tensor
from flap.rng import make_rng


def oracle_keep(n, ratio):
    """Exact rational floor of (1 - ratio) * n, clamped to 1."""
    return max(1, math.floor((1 - Fraction(repr(ratio))) * n))


def check_plan(plan, n):
    for b in range(plan.batch_size):
        kept, dropped = plan.kept[b], plan.dropped[b]
        assert np.all(np.diff(kept) > 0)
        assert set(kept).isdisjoint(dropped)
        assert sorted(np.concatenate([kept, dropped])) == list(range(n))
        np.testing.assert_array_equal(np.concatenate([kept, dropped])[plan.restore[b]], np.arange(n))


class TestPlan1D:
    def test_reference_setting(self):
        plan = plan_mask_1d(256, 0.4, make_rng(0))
        assert plan.num_kept == 153

    def test_zero_ratio_keeps_all_in_order(self):
        plan = plan_mask_1d(10, 0.0, make_rng(0), batch_size=2)
        np.testing.assert_array_equal(plan.kept, np.tile(np.arange(10), (2, 1)))

    def test_clamp_to_one(self):
        assert plan_mask_1d(4, 0.99, make_rng(0)).num_kept == 1

    def test_ratio_one_rejected(self):
        with pytest.raises(ConfigError):
            plan_mask_1d(8, 1.0, make_rng(0))

    def test_seeded_replay(self):
        a = plan_mask_1d(8, 0.5, make_rng(5, "mask"))
        b = plan_mask_1d(8, 0.5, make_rng(5, "mask"))
        np.testing.assert_array_equal(a.kept, b.kept)
        assert a.num_kept == 4

    def test_uniformity(self):
        rng = make_rng(0, "uniformity")
        counts = np.zeros(16)
        for _ in range(10_000):
            counts[plan_mask_1d(16, 0.5, rng).kept[0]] += 1
        freq = counts / 10_000
        assert np.all(np.abs(freq - 0.5) <= 0.03)

    def test_batch_items_independent(self):
        plan = plan_mask_1d(64, 0.5, make_rng(1), batch_size=4)
        assert len({tuple(r) for r in plan.kept}) > 1


class TestPlan2D:
    def test_reference_grouping(self):
        plan = plan_mask_2d(512, 64, 0.2, 0.2, make_rng(0))
        assert plan.num_kept == 51 * 6 == 306

    def test_zero_ratio_identity(self):
        plan = plan_mask_2d(64, 8, 0.0, 0.0, make_rng(0))
        np.testing.assert_array_equal(plan.kept[0], np.arange(64))

    def test_half_half_quarter(self):
        plan = plan_mask_2d(512, 64, 0.5, 0.5, make_rng(0))
        assert plan.keep_fraction == 0.25

    def test_same_count_per_kept_group(self):
        plan = plan_mask_2d(96, 12, 0.3, 0.4, make_rng(3), batch_size=3)
        k = 8
        for row in plan.kept:
            groups, counts = np.unique(row // k, return_counts=True)
            assert len(groups) == oracle_keep(12, 0.3)
            assert set(counts) == {oracle_keep(8, 0.4)}

    def test_indivisible_rejected(self):
        with pytest.raises(ConfigError):
            plan_mask_2d(100, 64, 0.2, 0.2, make_rng(0))


ratios = st.integers(0, 999).map(lambda k: k / 1000)


@given(st.integers(1, 400), ratios, st.integers(0, 2**16))
@settings(max_examples=200, deadline=None)
def test_1d_count_and_partition(n, ratio, seed):
    plan = plan_mask_1d(n, ratio, make_rng(seed), batch_size=2)
    assert plan.num_kept == oracle_keep(n, ratio)
    assert abs(plan.keep_fraction - (1 - ratio)) <= 1 / n
    check_plan(plan, n)


@given(st.integers(1, 32), st.integers(1, 16), ratios, ratios, st.integers(0, 2**16))
@settings(max_examples=200, deadline=None)
def test_2d_count_and_partition(m, k, rm, rk, seed):
    n = m * k
    plan = plan_mask_2d(n, m, rm, rk, make_rng(seed), batch_size=2)
    assert plan.num_kept == oracle_keep(m, rm) * oracle_keep(k, rk)
    assert abs(plan.keep_fraction - (1 - rm) * (1 - rk)) <= (m + k) / n
    check_plan(plan, n)


def test_eval_mode_forces_keep_all():
    cfg = MaskConfig(strategy="2d", group_ratio=0.5, frame_ratio=0.5, groups=8)
    plan = plan_mask(cfg, 64, make_rng(0), batch_size=2, train=False)
    assert plan.num_kept == 64 and plan.strategy == "none"
    assert plan_mask(cfg, 64, make_rng(0), batch_size=2).num_kept == 16


class TestApplyRestore:
    def setup_method(self):
        self.x = Tensor(np.random.default_rng(0).normal(size=(3, 10, 4)), requires_grad=True)

    def test_keep_all_identity(self):
        plan = keep_all(10, 3)
        np.testing.assert_array_equal(apply_mask(self.x, plan).data, self.x.data)
        mask = Tensor(np.full(4, 9.0))
        np.testing.assert_array_equal(restore_order(self.x, mask, plan).data, self.x.data)

    def test_rows_are_input_subsets(self):
        plan = plan_mask_1d(10, 0.6, make_rng(2), batch_size=3)
        out = apply_mask(self.x, plan).data
        assert out.shape == (3, 4, 4)
        for b in range(3):
            for j in range(4):
                assert np.array_equal(out[b, j], self.x.data[b, plan.kept[b, j]])

    def test_restore_inverse_pair(self):
        plan = plan_mask_2d(10, 5, 0.4, 0.5, make_rng(3), batch_size=3)
        mask = Tensor(np.full(4, -7.0), requires_grad=True)
        full = restore_order(apply_mask(self.x, plan), mask, plan).data
        for b in range(3):
            for i in range(10):
                expected = self.x.data[b, i] if i in plan.kept[b] else mask.data
                assert np.array_equal(full[b, i], expected)

    def test_mask_token_gradient_count(self):
        plan = plan_mask_1d(10, 0.7, make_rng(4), batch_size=3)
        mask = Tensor(np.zeros(4), requires_grad=True)
        restore_order(apply_mask(self.x, plan), mask, plan).sum().backward()
        np.testing.assert_array_equal(mask.grad, np.full(4, (10 - plan.num_kept) * 3))
        # visible rows receive gradient once each, dropped rows none
        assert self.x.grad.sum() == 3 * plan.num_kept * 4

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            apply_mask(self.x, keep_all(9, 3))
        with pytest.raises(ShapeError):
            restore_order(self.x, Tensor(np.zeros(4)), plan_mask_1d(10, 0.5, make_rng(0), 3))
