"""Loss terms, the boundary-aware weighting schedule, and the report."""

import math

import numpy as np
import pytest

from invrescale import autodiff as ad
from invrescale import losses
from invrescale.errors import ShapeError
from invrescale.losses import LossReport, LossWeights


class TestBawSchedule:
    def test_early_phase_constant(self):
        w = LossWeights()
        sparse = np.random.default_rng(0).uniform(0, 200, (1, 8, 8))
        out = losses.baw_weight(sparse, 10, 100, w)
        np.testing.assert_array_equal(out, 2.0)

    def test_boundary_is_strict(self):
        # 29 of 100 is below the 0.3 split; 30 is not, despite the float
        # product 0.3 * 100 rounding just above 30.
        w = LossWeights()
        sparse = np.random.default_rng(1).uniform(0, 200, (1, 4, 4))
        early = losses.baw_weight(sparse, 29, 100, w)
        late = losses.baw_weight(sparse, 30, 100, w)
        np.testing.assert_array_equal(early, 2.0)
        assert late.max() > 2.0

    def test_late_phase_normalization(self):
        w = LossWeights()
        sparse = np.array([[[0.0, 100.0, 200.0]]])
        out = losses.baw_weight(sparse, 50, 100, w)
        np.testing.assert_allclose(out, [[[2.0, 2.5, 3.0]]])

    def test_late_phase_range(self):
        w = LossWeights()
        sparse = np.random.default_rng(2).uniform(0, 500, (1, 16, 16))
        out = losses.baw_weight(sparse, 99, 100, w)
        assert np.all(out >= 2.0) and np.all(out <= 3.0)

    def test_flat_map_degenerates_to_constant(self):
        w = LossWeights()
        sparse = np.full((1, 4, 4), 7.0)
        out = losses.baw_weight(sparse, 90, 100, w)
        np.testing.assert_array_equal(out, 2.0)

    def test_phase_helper(self):
        assert not losses.baw_is_late(29, 100, 0.3)
        assert losses.baw_is_late(30, 100, 0.3)
        assert losses.baw_is_late(3, 10, 0.3)
        assert not losses.baw_is_late(2, 10, 0.3)


class TestForwardLoss:
    def test_identical_is_zero(self):
        x = np.random.default_rng(0).standard_normal((3, 4, 4))
        assert losses.loss_forw(ad.Tensor(x), x, 2.0).item() == 0.0

    def test_constant_difference(self):
        a = np.zeros((3, 5, 5))
        b = np.full((3, 5, 5), 0.3)
        assert losses.loss_forw(ad.Tensor(a), b, 2.0).item() == pytest.approx(2.0 * 0.09)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((2, 3, 4, 4))
        want = 0.0
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    want += (a[c, i, j] - b[c, i, j]) ** 2
        want *= 2.0 / 48
        assert losses.loss_forw(ad.Tensor(a), b, 2.0).item() == pytest.approx(want, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            losses.loss_forw(ad.Tensor(np.zeros((3, 4, 4))), np.zeros((3, 2, 2)), 1.0)


class TestBackwardLoss:
    def test_identical_is_zero(self):
        x = np.random.default_rng(2).standard_normal((3, 4, 4))
        w = np.full((1, 4, 4), 2.0)
        assert losses.loss_back(ad.Tensor(x), x, w).item() == 0.0

    def test_uniform_weight_constant_error(self):
        a = np.zeros((3, 4, 4))
        b = np.full((3, 4, 4), 0.1)
        w = np.full((1, 4, 4), 2.0)
        assert losses.loss_back(ad.Tensor(a), b, w).item() == pytest.approx(0.2)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((2, 3, 4, 4))
        w = rng.uniform(2.0, 3.0, (1, 4, 4))
        want = 0.0
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    want += w[0, i, j] * abs(a[c, i, j] - b[c, i, j])
        want /= 48
        assert losses.loss_back(ad.Tensor(a), b, w).item() == pytest.approx(want, abs=1e-12)


class TestBoundaryLoss:
    def test_perfect_prediction(self):
        t = [np.zeros((1, 4, 4)), np.ones((1, 2, 2))]
        preds = [ad.Tensor(x) for x in t]
        assert losses.loss_bam(preds, t, 16.0).item() == 0.0

    def test_unit_mse(self):
        pred = [ad.Tensor(np.zeros((1, 4, 4)))]
        target = [np.ones((1, 4, 4))]
        assert losses.loss_bam(pred, target, 16.0).item() == pytest.approx(16.0)

    def test_level_averaging(self):
        # Levels with MSE 0.1 and 0.3 average to 0.2 before weighting.
        p1 = np.zeros((1, 2, 2))
        t1 = np.full((1, 2, 2), math.sqrt(0.1))
        p2 = np.zeros((1, 4, 4))
        t2 = np.full((1, 4, 4), math.sqrt(0.3))
        got = losses.loss_bam([ad.Tensor(p1), ad.Tensor(p2)], [t1, t2], 16.0).item()
        assert got == pytest.approx(16.0 * 0.2)

    def test_level_count_mismatch(self):
        with pytest.raises(ShapeError):
            losses.loss_bam([ad.Tensor(np.zeros((1, 2, 2)))], [np.zeros((1, 2, 2))] * 2, 16.0)


class TestLatentLoss:
    def test_zero_latent_closed_form(self):
        z = [np.zeros((4, 8, 8))]
        want = 4.0 * 0.5 * math.log(2.0 * math.pi)
        assert losses.loss_latent(z, 4.0).item() == pytest.approx(want, abs=1e-9)
        assert want == pytest.approx(3.675754, abs=1e-6)

    def test_unit_latent_closed_form(self):
        z = [np.ones((2, 3, 3))]
        want = 4.0 * 0.5 * (1.0 + math.log(2.0 * math.pi))
        assert losses.loss_latent(z, 4.0).item() == pytest.approx(want, abs=1e-9)

    def test_minimized_at_zero(self):
        base = losses.loss_latent([np.zeros((1, 4, 4))], 4.0).item()
        for eps in (0.1, -0.1, 1.0):
            assert losses.loss_latent([np.full((1, 4, 4), eps)], 4.0).item() > base

    def test_floor_bound(self):
        rng = np.random.default_rng(4)
        z = [rng.standard_normal((3, 6, 6)), rng.standard_normal((2, 4, 4))]
        assert losses.loss_latent(z, 4.0).item() >= 4.0 * losses.LATENT_FLOOR


class TestTotal:
    def test_components_sum(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 4, 4))
        y = rng.standard_normal((3, 4, 4))
        w = np.full((1, 4, 4), 2.0)
        f = losses.loss_forw(ad.Tensor(x), y, 2.0)
        b = losses.loss_back(ad.Tensor(x), y, w)
        m = losses.loss_bam([ad.Tensor(x[:1])], [y[:1]], 16.0)
        z = losses.loss_latent([x], 4.0)
        total, report = losses.total_loss(f, b, m, z)
        assert report.total == pytest.approx(report.forw + report.back + report.bam + report.latent, abs=1e-12)
        assert total.item() == pytest.approx(report.total)

    def test_lambda_scaling_is_linear(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((3, 4, 4))
        b = rng.standard_normal((3, 4, 4))
        one = losses.loss_forw(ad.Tensor(a), b, 1.0).item()
        for lam in (0.0, 2.0, 7.5):
            assert losses.loss_forw(ad.Tensor(a), b, lam).item() == pytest.approx(lam * one)

    def test_resummation_oracle(self):
        rng = np.random.default_rng(7)
        vals = rng.uniform(0.0, 5.0, 4)
        parts = [ad.Tensor(np.asarray(v)) for v in vals]
        total, report = losses.total_loss(*parts)
        assert total.item() == pytest.approx(float(vals.sum()), abs=1e-12)


class TestGradients:
    def test_all_terms_pass_fd(self):
        rng = np.random.default_rng(8)
        pred = ad.parameter(rng.uniform(0.5, 1.5, (3, 4, 4)))
        target = rng.uniform(-0.5, 0.0, (3, 4, 4))  # keep |diff| away from 0
        w = rng.uniform(2.0, 3.0, (1, 4, 4))

        err = ad.fd_check(lambda: losses.loss_forw(pred, target, 2.0), [pred])
        assert err < 1e-4
        err = ad.fd_check(lambda: losses.loss_back(pred, target, w), [pred])
        assert err < 1e-4
        err = ad.fd_check(lambda: losses.loss_bam([pred], [target], 16.0), [pred])
        assert err < 1e-4
        err = ad.fd_check(lambda: losses.loss_latent([pred], 4.0), [pred])
        assert err < 1e-4


class TestWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5) == (2.0, 2.0, 1.0, 16.0, 4.0)
        assert w.alpha == 0.3

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda4=-1.0)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=1.5)


class TestCsv:
    def test_header_and_row_align(self):
        report = LossReport(forw=1.0, back=2.0, bam=3.0, latent=4.0, total=10.0)
        row = losses.csv_row(3, 1.5e-4, report)
        assert len(row.split(",")) == len(losses.CSV_HEADER.split(","))
        assert row.startswith("3,0.00015,")
