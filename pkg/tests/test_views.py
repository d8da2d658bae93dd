import numpy as np
import numpy.testing as npt
import pytest

from mvir import autodiff as ad
from mvir.autodiff import Tensor
from mvir.errors import ConfigurationError, DimensionError
from mvir.views import (
    PyramidConfig,
    ViewScorer,
    check_summary_invariants,
    mvr_forward,
    pyramid_forward,
    summarize,
    view_scores,
)


def make_kernels(cfg, d, rng, requires_grad=False):
    return [(Tensor(rng.standard_normal((e.width, d, e.channels)) * 0.2, requires_grad),
             Tensor(np.zeros(e.channels), requires_grad)) for e in cfg.entries]


def scalar_softmax(v):
    e = np.exp(v - v.max())
    return e / e.sum()


class TestPyramidConfig:
    def test_default_matches_channel_budget(self):
        cfg = PyramidConfig()
        assert len(cfg.entries) == 7
        assert cfg.total_channels == 1024
        assert [e.width for e in cfg.entries] == [1, 3, 3, 3, 5, 5, 5]
        assert [e.dilation for e in cfg.entries] == [1, 1, 2, 3, 1, 2, 3]

    @pytest.mark.parametrize("bad", [[(2, 1, 8)], [(3, 0, 8)], [(3, 1, 0)], []])
    def test_invalid_entries_rejected(self, bad):
        with pytest.raises(ConfigurationError):
            PyramidConfig.from_lists(bad)


class TestPyramidForward:
    def test_default_output_shape(self):
        cfg = PyramidConfig()
        rng = np.random.default_rng(0)
        regions = Tensor(rng.standard_normal((49, 256)))
        out = pyramid_forward(regions, cfg, make_kernels(cfg, 256, rng))
        assert out.shape == (49, 1024)

    def test_identity_single_entry(self):
        d = 3
        cfg = PyramidConfig.from_lists([(1, 1, d)])
        kernel = Tensor(np.eye(d)[None, :, :])
        bias = Tensor(np.zeros(d))
        regions = Tensor(np.arange(12, dtype=float).reshape(4, 3))
        out = pyramid_forward(regions, cfg, [(kernel, bias)])
        npt.assert_array_equal(out.data, regions.data)

    def test_two_entry_concat_matches_standalone_convs(self):
        rng = np.random.default_rng(1)
        cfg = PyramidConfig.from_lists([(1, 1, 2), (3, 2, 3)])
        kernels = make_kernels(cfg, 2, rng)
        regions = Tensor(rng.standard_normal((3, 2)))
        out = pyramid_forward(regions, cfg, kernels)
        first = ad.dilated_conv1d(regions, kernels[0][0], kernels[0][1], 1)
        second = ad.dilated_conv1d(regions, kernels[1][0], kernels[1][1], 2)
        npt.assert_array_equal(out.data[:, :2], first.data)
        npt.assert_array_equal(out.data[:, 2:], second.data)

    def test_kernel_config_mismatch(self):
        cfg = PyramidConfig.from_lists([(3, 1, 4)])
        with pytest.raises(ConfigurationError):
            pyramid_forward(Tensor(np.zeros((5, 2))), cfg,
                            [(Tensor(np.zeros((3, 2, 5))), Tensor(np.zeros(5)))])


class TestViewScores:
    def test_zero_scorer_gives_uniform_columns(self):
        scorer = ViewScorer(Tensor(np.zeros((6, 4))), Tensor(np.zeros(4)), 4)
        scores = view_scores(Tensor(np.random.default_rng(2).standard_normal((5, 6))), scorer)
        npt.assert_allclose(scores.scores.data, np.full((5, 4), 1 / 5), atol=1e-15)

    def test_single_region_is_all_ones(self):
        scorer = ViewScorer(Tensor(np.ones((3, 2))), Tensor(np.zeros(2)), 2)
        scores = view_scores(Tensor([[1.0, -2.0, 0.5]]), scorer)
        npt.assert_allclose(scores.scores.data, np.ones((1, 2)), atol=1e-15)

    def test_columns_match_scalar_softmax_oracle(self):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((3, 4))
        w, b = rng.standard_normal((4, 2)), rng.standard_normal(2)
        scorer = ViewScorer(Tensor(w), Tensor(b), 2)
        got = view_scores(Tensor(feats), scorer).scores.data
        logits = feats @ w + b
        for n in range(2):
            npt.assert_allclose(got[:, n], scalar_softmax(logits[:, n]), atol=1e-12)

    def test_columns_are_distributions(self):
        rng = np.random.default_rng(4)
        scorer = ViewScorer(Tensor(rng.standard_normal((5, 3)) * 4), Tensor(rng.standard_normal(3)), 3)
        got = view_scores(Tensor(rng.standard_normal((7, 5)) * 3), scorer).scores.data
        npt.assert_allclose(got.sum(axis=0), 1.0, atol=1e-9)
        assert np.all(got >= 0) and np.all(got <= 1)

    def test_view_axis_mode(self):
        rng = np.random.default_rng(5)
        scorer = ViewScorer(Tensor(rng.standard_normal((5, 3))), Tensor(np.zeros(3)), 3)
        got = view_scores(Tensor(rng.standard_normal((4, 5))), scorer, softmax_over="views")
        npt.assert_allclose(got.scores.data.sum(axis=1), 1.0, atol=1e-12)

    def test_width_mismatch(self):
        scorer = ViewScorer(Tensor(np.zeros((6, 2))), Tensor(np.zeros(2)), 2)
        with pytest.raises(DimensionError):
            view_scores(Tensor(np.zeros((3, 5))), scorer)


class TestSummarize:
    def test_uniform_scores_give_mean_region(self):
        rng = np.random.default_rng(6)
        regions = rng.standard_normal((4, 3))
        scores = Tensor(np.full((4, 2), 0.25))
        out = summarize(Tensor(regions), view_scores_like(scores)).views.data
        npt.assert_allclose(out, np.tile(regions.mean(axis=0), (2, 1)), atol=1e-12)

    def test_one_hot_column_selects_region(self):
        regions = np.arange(12, dtype=float).reshape(4, 3)
        scores = np.zeros((4, 2))
        scores[2, 0] = 1.0
        scores[0, 1] = 1.0
        out = summarize(Tensor(regions), view_scores_like(Tensor(scores))).views.data
        npt.assert_array_equal(out[0], regions[2])
        npt.assert_array_equal(out[1], regions[0])

    def test_against_weighted_sum_oracle(self):
        rng = np.random.default_rng(7)
        regions = rng.standard_normal((4, 5))
        cols = rng.random((4, 3))
        cols /= cols.sum(axis=0)
        out = summarize(Tensor(regions), view_scores_like(Tensor(cols))).views.data
        for n in range(3):
            expect = sum(cols[i, n] * regions[i] for i in range(4))
            assert np.max(np.abs(out[n] - expect)) < 1e-12
        assert check_summary_invariants(regions, cols, out)

    def test_row_count_mismatch(self):
        with pytest.raises(DimensionError):
            summarize(Tensor(np.zeros((3, 2))), view_scores_like(Tensor(np.zeros((4, 2)))))


def view_scores_like(scores):
    from mvir.views import ViewScoreMatrix
    return ViewScoreMatrix(scores)


class TestMvrForward:
    def test_shapes_at_reference_dims(self):
        rng = np.random.default_rng(8)
        cfg = PyramidConfig()
        raw = Tensor(rng.standard_normal((49, 512)))
        pw = Tensor(rng.standard_normal((512, 256)) * 0.01)
        pb = Tensor(np.zeros(256))
        scorer = ViewScorer(Tensor(rng.standard_normal((1024, 12)) * 0.01),
                            Tensor(np.zeros(12)), 12)
        projected, summary = mvr_forward(raw, pw, pb, cfg, make_kernels(cfg, 256, rng), scorer)
        assert projected.shape == (49, 256)
        assert summary.views.shape == (12, 256)

    def test_zero_weights_give_zero_summary(self):
        cfg = PyramidConfig.from_lists([(1, 1, 2)])
        raw = Tensor(np.random.default_rng(9).standard_normal((3, 4)))
        pw, pb = Tensor(np.zeros((4, 2))), Tensor(np.zeros(2))
        kernels = [(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros(2)))]
        scorer = ViewScorer(Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)), 2)
        _, summary = mvr_forward(raw, pw, pb, cfg, kernels, scorer)
        npt.assert_array_equal(summary.views.data, np.zeros((2, 2)))

    def test_tiny_case_against_unrolled_oracle(self):
        # r=3, d=2, K=1 (w=1), N=2, fully unrolled with plain numpy
        rng = np.random.default_rng(10)
        raw = rng.standard_normal((3, 2))
        pw, pb = rng.standard_normal((2, 2)), rng.standard_normal(2)
        kw, kb = rng.standard_normal((1, 2, 2)), rng.standard_normal(2)
        sw, sb = rng.standard_normal((2, 2)), rng.standard_normal(2)

        cfg = PyramidConfig.from_lists([(1, 1, 2)])
        scorer = ViewScorer(Tensor(sw), Tensor(sb), 2)
        _, summary = mvr_forward(Tensor(raw), Tensor(pw), Tensor(pb), cfg,
                                 [(Tensor(kw), Tensor(kb))], scorer)

        projected = raw @ pw + pb
        bank = projected @ kw[0] + kb
        logits = bank @ sw + sb
        scores = np.stack([scalar_softmax(logits[:, n]) for n in range(2)], axis=1)
        expect = scores.T @ projected
        assert np.max(np.abs(summary.views.data - expect)) < 1e-10

    def test_region_permutation_invariance_with_pointwise_bank(self):
        rng = np.random.default_rng(11)
        cfg = PyramidConfig.from_lists([(1, 1, 3)])
        kernels = make_kernels(cfg, 3, rng)
        pw, pb = Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal(3))
        scorer = ViewScorer(Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal(2)), 2)
        raw = rng.standard_normal((5, 4))
        _, summary = mvr_forward(Tensor(raw), pw, pb, cfg, kernels, scorer)
        perm = rng.permutation(5)
        _, permuted = mvr_forward(Tensor(raw[perm]), pw, pb, cfg, kernels, scorer)
        npt.assert_allclose(permuted.views.data, summary.views.data, atol=1e-12)

    def test_gradient_through_block(self):
        rng = np.random.default_rng(12)
        cfg = PyramidConfig.from_lists([(1, 1, 3), (3, 1, 2)])
        raw = Tensor(rng.standard_normal((4, 3)))
        pw = Tensor(rng.standard_normal((3, 3)) * 0.5, requires_grad=True)
        pb = Tensor(np.zeros(3), requires_grad=True)
        kernels = make_kernels(cfg, 3, rng, requires_grad=True)
        scorer = ViewScorer(Tensor(rng.standard_normal((5, 2)) * 0.5, requires_grad=True),
                            Tensor(np.zeros(2), requires_grad=True), 2)
        target = Tensor(rng.standard_normal((2, 3)))
        params = [pw, pb, scorer.weight, scorer.bias]
        for k, b in kernels:
            params.extend([k, b])

        def f():
            _, summary = mvr_forward(raw, pw, pb, cfg, kernels, scorer)
            diff = ad.add(summary.views, ad.scale(target, -1.0))
            return ad.sum_all(ad.mul(diff, diff))
        assert ad.grad_check(f, params) < 1e-5
