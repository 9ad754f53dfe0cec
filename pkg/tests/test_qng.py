import json
import math

import numpy as np
import pytest

from fockqng import qng
from fockqng.channels import LossChannel, NoiseParams, binomial_loss, damp_evolve
from fockqng.hilbert import DensityMatrix, FockDistribution
from fockqng.qng import (
    CurvePoint,
    OptimizerConfig,
    QngPoint,
    ThresholdCurve,
    cached_threshold_curve,
    default_a_grid,
    depth_time_equivalent,
    qng_depth,
    qng_witness,
    threshold_curve,
    threshold_pbar,
)
from oracles import pbar1_dense_grid, random_core_points, random_mixtures

# regression fixtures for the point thresholds at the default configuration
PBAR = {1: 0.47789, 2: 0.55745, 3: 0.59256, 4: 0.61250, 5: 0.62538, 6: 0.63440}
SMALL = OptimizerConfig(restarts=8)
SMALL_GRID = np.concatenate([-np.geomspace(10, 0.05, 6), [0.0], np.geomspace(0.05, 10, 6)])


class TestTypes:
    def test_point_domain(self):
        with pytest.raises(ValueError):
            QngPoint(1.1, 0.0, 1)
        with pytest.raises(ValueError, match="unphysical"):
            QngPoint(0.7, 0.4, 1)

    def test_point_from_distribution_uses_tail(self):
        p = QngPoint.from_distribution(FockDistribution([0.1, 0.5, 0.3, 0.1]), 1)
        assert (p.p_n, p.p_np1) == (0.5, pytest.approx(0.4))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(restarts=0)
        with pytest.raises(ValueError):
            OptimizerConfig(alpha_box=-1)

    def test_default_grid(self):
        g = default_a_grid()
        assert g.size == 64 and 0.0 in g
        assert np.all(np.diff(g) > 0)
        assert g.max() == pytest.approx(20)

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            threshold_pbar(0)
        with pytest.raises(ValueError):
            threshold_curve(0, [0.0])


class TestPointThreshold:
    def test_single_phonon_matches_brute_force(self):
        assert threshold_pbar(1, SMALL) == pytest.approx(pbar1_dense_grid(), abs=1e-3)

    @pytest.mark.parametrize("n", range(1, 7))
    def test_regression_values(self, n, threshold_curves):
        value = threshold_curves(n).f_bar_at(0.0)
        assert value == pytest.approx(PBAR[n], abs=1e-4)
        assert value < 1

    def test_more_restarts_never_worse(self):
        vals = [threshold_pbar(3, OptimizerConfig(restarts=r)) for r in (1, 4, 16)]
        assert vals[0] <= vals[1] + 1e-12 <= vals[2] + 2e-12

    def test_deterministic(self):
        a = threshold_curve(2, SMALL_GRID, SMALL).to_dict()
        b = threshold_curve(2, SMALL_GRID, SMALL).to_dict()
        assert a == b


class TestCurve:
    @pytest.mark.parametrize("n", [1, 2, 6])
    def test_max_p_n_is_point_threshold(self, n, threshold_curves):
        c = threshold_curves(n)
        assert c.max_p_n() == pytest.approx(c.f_bar_at(0.0), abs=1e-3)

    @pytest.mark.parametrize("n", [1, 4])
    def test_fock_and_vacuum(self, n, threshold_curves):
        c = threshold_curves(n)
        assert qng_witness(QngPoint(1.0, 0.0, n), c).violated
        assert not qng_witness(QngPoint(0.0, 0.0, n), c).violated

    def test_f_bar_is_convex_in_a(self, threshold_curves):
        # a maximum of functions linear in a
        c = threshold_curves(2)
        a, f = c.a_grid, c.f_bar
        chord = f[:-2] + (f[2:] - f[:-2]) * (a[1:-1] - a[:-2]) / (a[2:] - a[:-2])
        assert np.all(f[1:-1] <= chord + 1e-6)

    def test_boundary_is_concave_envelope(self, threshold_curves):
        b = threshold_curves(3).boundary()
        assert np.all(np.diff(b[:, 0]) >= 0)
        slopes = np.diff(b[:, 1]) / np.maximum(np.diff(b[:, 0]), 1e-300)
        assert np.all(np.diff(slopes) <= 1e-9)

    def test_stored_points_reproduce_f_bar(self, threshold_curves):
        for p in threshold_curves(2).points:
            assert p.p_n + p.a * p.p_np1 == pytest.approx(p.f_bar, abs=1e-6)

    @pytest.mark.parametrize("n", [1, 3])
    def test_random_core_states_do_not_violate(self, n, threshold_curves):
        c = threshold_curves(n)
        pts = random_core_points(n, 200, seed=n)
        mixes = random_mixtures(pts, 200, seed=n)
        for p_n, tail in np.vstack([pts, mixes]):
            assert qng_witness(QngPoint(p_n, min(tail, 1 - p_n), n), c).margin <= 1e-4


class TestWitness:
    def test_margin_at_zero_is_gap_to_threshold(self, threshold_curves):
        c = threshold_curves(2)
        res = qng_witness(QngPoint(1.0, 0.0, 2), c)
        k = int(np.flatnonzero(c.a_grid == 0.0)[0])
        assert res.margins[k] == pytest.approx(1 - c.f_bar_at(0.0))
        assert res.margin >= res.margins[k]

    def test_measured_style_six_phonon_point(self, threshold_curves):
        assert qng_witness(QngPoint(0.75, 0.02, 6), threshold_curves(6)).violated

    def test_mismatched_n(self, threshold_curves):
        with pytest.raises(ValueError):
            qng_witness(QngPoint(1.0, 0.0, 2), threshold_curves(1))

    def test_untrusted_points_are_ignored(self):
        good = CurvePoint(a=0.0, f_bar=0.5, p_n=0.5, p_np1=0.1)
        bad = CurvePoint(a=1.0, f_bar=0.1, p_n=0.1, p_np1=0.0, converged=False)
        curve = ThresholdCurve(1, (good, bad))
        res = qng_witness(QngPoint(0.3, 0.3, 1), curve)
        assert not res.violated
        assert res.margins[1] == -np.inf

    def test_loss_monotonicity(self, threshold_curves):
        c = threshold_curves(2)
        margins = [
            qng_witness(QngPoint.from_distribution(binomial_loss(FockDistribution.fock(2), LossChannel(eta)), 2),
                        c).margin
            for eta in np.linspace(1.0, 0.05, 30)
        ]
        assert all(a >= b - 1e-12 for a, b in zip(margins, margins[1:]))


class TestDepth:
    def test_single_phonon_fixture(self, threshold_curves):
        res = qng_depth(FockDistribution.fock(1), 1, threshold_curves(1))
        assert res.violated and 0 < res.eta_min < 1
        assert res.eta_min == pytest.approx(0.1073, abs=1e-3)
        assert res.depth_db == pytest.approx(-10 * math.log10(res.eta_min))

    def test_ordering(self, threshold_curves):
        d1 = qng_depth(FockDistribution.fock(1), 1, threshold_curves(1)).depth_db
        d6 = qng_depth(FockDistribution.fock(6), 6, threshold_curves(6)).depth_db
        assert d6 < d1

    def test_non_violating_input(self, threshold_curves):
        res = qng_depth(FockDistribution.fock(0), 1, threshold_curves(1))
        assert (res.eta_min, res.depth_db, res.violated) == (1.0, 0.0, False)

    def test_bisection_brackets_the_flip(self, threshold_curves):
        c = threshold_curves(3)
        res = qng_depth(FockDistribution.fock(3), 3, c)

        def violated(eta):
            return qng_witness(QngPoint.from_distribution(binomial_loss(FockDistribution.fock(3), LossChannel(eta)), 3),
                               c).violated

        assert violated(res.eta_min)
        assert not violated(res.eta_min - 2e-5)


class TestWaitTime:
    def test_no_loss(self):
        assert depth_time_equivalent(1.0, 0.1) == 0.0

    def test_half_transmittance(self):
        assert depth_time_equivalent(0.5, 1 / 85) == pytest.approx(85 * math.log(2))
        assert depth_time_equivalent(0.5, 1 / 85) == pytest.approx(58.9, abs=0.05)

    def test_domain(self):
        with pytest.raises(ValueError):
            depth_time_equivalent(0.0, 1.0)
        with pytest.raises(ValueError):
            depth_time_equivalent(0.5, 0.0)

    @pytest.mark.parametrize("eta", [0.9, 0.4, 0.1])
    def test_matches_free_decay(self, eta):
        kappa = 1 / 85
        t = depth_time_equivalent(eta, kappa)
        dist = FockDistribution([0.05, 0.15, 0.2, 0.5, 0.1])
        rho = damp_evolve(DensityMatrix(np.diag(dist.probs).astype(complex)), NoiseParams(kappa), t)
        np.testing.assert_allclose(binomial_loss(dist, LossChannel(eta)).probs, np.diag(rho.elements).real,
                                   atol=1e-14)


class TestSerialization:
    def test_round_trip(self):
        c = threshold_curve(1, SMALL_GRID, SMALL)
        doc = json.loads(json.dumps(c.to_dict()))
        assert ThresholdCurve.from_dict(doc) == c

    def test_rejects_foreign_documents(self):
        with pytest.raises(ValueError):
            ThresholdCurve.from_dict({"format": "something-else"})
        doc = threshold_curve(1, [0.0], SMALL).to_dict()
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            ThresholdCurve.from_dict(doc)

    def test_cache_hit_skips_optimisation(self, tmp_path, monkeypatch):
        first = cached_threshold_curve(1, SMALL_GRID, SMALL, tmp_path)
        assert len(list(tmp_path.glob("*.json"))) == 1

        def boom(*args, **kwargs):
            raise AssertionError("recomputed")

        monkeypatch.setattr(qng, "threshold_curve", boom)
        assert cached_threshold_curve(1, SMALL_GRID, SMALL, tmp_path) == first

    def test_cache_key_depends_on_config(self):
        k1 = qng.curve_cache_key(1, SMALL_GRID, SMALL)
        k2 = qng.curve_cache_key(1, SMALL_GRID, OptimizerConfig(restarts=9))
        k3 = qng.curve_cache_key(1, SMALL_GRID, OptimizerConfig(restarts=8, jobs=4))
        assert k1 != k2 and k1 == k3
