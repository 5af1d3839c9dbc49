import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nubblematch.diagnostics import (
    InteractionQuery,
    channel_diagnostics,
    interaction_strength,
    mismatch_report,
    threshold_counts,
)
from nubblematch.drop import DropMask
from nubblematch.errors import (
    ArgumentError,
    DimensionError,
    PreconditionError,
    ValidationError,
)
from nubblematch.harness import SynthSpec, synth_clusters
from nubblematch.tensorio import BinaryMask, FeatureGrid, normalize_grid
from conftest import oracle_interaction


class TestMismatchReport:
    def test_hand_example(self):
        # A=[1,0] fg, B=[1,0] bg, C=[0,1] bg: A's best match is B -> mismatch
        vals = np.array([[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
        ref = FeatureGrid(vals, normalized=True)
        fg = BinaryMask(np.array([[1, 0, 0]], dtype=np.uint8))
        rep = mismatch_report(ref, fg)
        assert rep.mismatch_count == 1
        assert rep.total_fg == 1
        assert rep.image_flagged
        rec = rep.records[0]
        assert (rec.best_row, rec.best_col) == (0, 1)
        assert rec.best_score == 1.0
        assert not rec.best_is_foreground

    def test_clean_clusters_have_no_mismatch(self):
        spec = SynthSpec(height=4, width=4, channels=24, fg_fraction=0.4,
                         margin=0.5, noise_sigma=0.0, seed=3)
        ref, fg, _, _ = synth_clusters(spec)
        assert mismatch_report(ref, fg).mismatch_count == 0

    def test_tie_break_decides_foreground(self):
        # P0 fg; P1 and P2 identical to P0. Winner is the lower linear index.
        vals = np.array([[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]])
        ref = FeatureGrid(vals, normalized=True)
        fg_then_bg = BinaryMask(np.array([[1, 1, 0]], dtype=np.uint8))
        rep = mismatch_report(ref, fg_then_bg)
        assert rep.records[0].best_is_foreground  # P1 (fg) beats P2 (bg)
        bg_then_fg = BinaryMask(np.array([[1, 0, 1]], dtype=np.uint8))
        rep2 = mismatch_report(ref, bg_then_fg)
        assert not rep2.records[0].best_is_foreground  # P1 (bg) wins the tie

    def test_empty_drop_equals_no_drop(self):
        spec = SynthSpec(height=3, width=4, channels=16, fg_fraction=0.3,
                         margin=0.4, noise_sigma=0.05, seed=9)
        ref, fg, _, _ = synth_clusters(spec)
        a = mismatch_report(ref, fg, drop=None)
        b = mismatch_report(ref, fg, drop=DropMask(total_channels=16, dropped=()))
        assert a == b

    def test_scale_invariance(self):
        spec = SynthSpec(height=3, width=3, channels=12, fg_fraction=0.4,
                         margin=0.4, noise_sigma=0.1, seed=21)
        ref, fg, _, _ = synth_clusters(spec)
        rep = mismatch_report(ref, fg)
        scaled = normalize_grid(FeatureGrid(ref.values * 2.0))
        assert mismatch_report(scaled, fg) == rep

    def test_validation(self):
        g = normalize_grid(FeatureGrid(np.random.default_rng(0).standard_normal((2, 2, 4))))
        with pytest.raises(ArgumentError):
            mismatch_report(g, BinaryMask(np.ones((2, 2), dtype=np.uint8)))
        with pytest.raises(ArgumentError):
            mismatch_report(g, BinaryMask(np.zeros((2, 2), dtype=np.uint8)))
        with pytest.raises(PreconditionError):
            mismatch_report(FeatureGrid(g.values * 3.0), BinaryMask(np.eye(2, dtype=np.uint8)))
        with pytest.raises(DimensionError):
            mismatch_report(g, BinaryMask(np.eye(3, dtype=np.uint8)))


class TestChannelDiagnostics:
    def test_dominant_patch(self):
        g = FeatureGrid(np.array([[[0.6, 0.8]]]), normalized=True)
        d = channel_diagnostics(g)
        assert d.max_abs[0, 0] == 0.8
        assert d.dominant_patch_count == 1
        assert d.max_abs[0, 0] ** 2 > 0.25

    def test_uniform_patch_never_submerges(self):
        c = 16
        g = FeatureGrid(np.full((2, 2, c), 1.0 / np.sqrt(c)), normalized=True)
        d = channel_diagnostics(g)
        assert np.all(d.variance_abs == 0.0)
        assert not d.submergence_flag

    def test_hand_variance(self):
        g = FeatureGrid(np.array([[[0.6, 0.8]]]), normalized=True)
        d = channel_diagnostics(g)
        assert abs(d.variance_abs[0, 0] - 0.01) < 1e-15
        assert abs(d.mean_abs_overall - 0.7) < 1e-15
        assert d.submergence_flag  # 0.01 > 0.0004

    def test_boundary_half_not_dominant(self):
        g = FeatureGrid(np.full((1, 1, 4), 0.5), normalized=True)
        d = channel_diagnostics(g)
        assert d.max_abs[0, 0] == 0.5
        assert d.dominant_patch_count == 0

    def test_strict_nu(self):
        g = FeatureGrid(np.array([[[0.6, 0.8]]]), normalized=True)
        base = channel_diagnostics(g)
        again = channel_diagnostics(g, nu=base.mean_variance)
        assert not again.submergence_flag

    def test_negative_values_use_magnitude(self):
        g = FeatureGrid(np.array([[[-0.6, 0.8]]]), normalized=True)
        d = channel_diagnostics(g)
        assert d.max_abs[0, 0] == 0.8
        assert abs(d.mean_abs_overall - 0.7) < 1e-15

    def test_requires_normalized(self):
        with pytest.raises(PreconditionError):
            channel_diagnostics(FeatureGrid(np.ones((1, 1, 2))))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_flagged_implies_quarter_mass(self, seed):
        rng = np.random.default_rng(seed)
        g = normalize_grid(FeatureGrid(rng.standard_normal((3, 3, 6))))
        d = channel_diagnostics(g)
        flagged = d.max_abs > d.kappa
        assert np.all((d.max_abs[flagged] ** 2) > 0.25)
        assert 0 <= d.dominant_patch_count <= 9
        assert np.all(d.max_abs <= 1.0 + 1e-12)


class TestThresholdCounts:
    def test_above_and_below(self):
        vals = [0.1, 0.5, 0.9]
        assert threshold_counts(vals, [0.0, 0.5, 1.0], "above") == [
            (0.0, 3), (0.5, 1), (1.0, 0)]
        assert threshold_counts(vals, [0.5], "below") == [(0.5, 1)]

    def test_mode_validated(self):
        with pytest.raises(ArgumentError):
            threshold_counts([1.0], [0.5], "sideways")


class TestInteractionStrength:
    def test_worked_example(self):
        q = InteractionQuery(
            weight_matrices=(np.array([[1.0, -2.0, 3.0], [4.0, 5.0, -6.0]]),),
            output_weights=np.array([2.0, -1.0]),
            interaction=(0, 1),
        )
        assert interaction_strength(q).tolist() == [3.0, 4.5]

    def test_singleton_same_for_both_aggregators(self, rng):
        w1 = rng.standard_normal((4, 5))
        wy = rng.standard_normal(4)
        for agg in ("mean", "min"):
            q = InteractionQuery((w1,), wy, interaction=(2,), aggregator=agg)
            expect = np.abs(wy) * np.abs(w1[:, 2])
            np.testing.assert_allclose(interaction_strength(q), expect, atol=1e-15)

    def test_zero_weights(self):
        q = InteractionQuery((np.zeros((3, 4)),), np.ones(3), interaction=(0, 3))
        assert interaction_strength(q).tolist() == [0.0, 0.0, 0.0]

    def test_multilayer_oracle(self, rng):
        for _ in range(10):
            layers = int(rng.integers(1, 4))
            widths = [int(rng.integers(1, 9)) for _ in range(layers + 1)]
            mats = tuple(rng.standard_normal((widths[i + 1], widths[i]))
                         for i in range(layers))
            wy = rng.standard_normal(widths[-1])
            k = int(rng.integers(1, widths[0] + 1))
            idx = tuple(int(i) for i in rng.permutation(widths[0])[:k])
            for agg in ("mean", "min"):
                q = InteractionQuery(mats, wy, interaction=idx, aggregator=agg)
                got = interaction_strength(q)
                expect = oracle_interaction(mats, wy, sorted(idx), agg)
                assert np.max(np.abs(got - expect)) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sign_flip_invariance(self, seed):
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((3, 4))
        w2 = rng.standard_normal((2, 3))
        wy = rng.standard_normal(2)
        q = InteractionQuery((w1, w2), wy, interaction=(1, 3))
        base = interaction_strength(q)
        flip1, flip2, flipy = w1.copy(), w2.copy(), wy.copy()
        flip1[1, 3] *= -1
        flip2[0, 2] *= -1
        flipy[1] *= -1
        q2 = InteractionQuery((flip1, flip2), flipy, interaction=(1, 3))
        np.testing.assert_array_equal(base, interaction_strength(q2))

    def test_dimension_chain_validated(self):
        with pytest.raises(DimensionError):
            InteractionQuery((np.ones((2, 3)), np.ones((2, 4))), np.ones(2),
                             interaction=(0,))
        with pytest.raises(DimensionError):
            InteractionQuery((np.ones((2, 3)),), np.ones(3), interaction=(0,))

    def test_interaction_set_validated(self):
        w = np.ones((2, 3))
        with pytest.raises(ValidationError):
            InteractionQuery((w,), np.ones(2), interaction=())
        with pytest.raises(ValidationError):
            InteractionQuery((w,), np.ones(2), interaction=(3,))
