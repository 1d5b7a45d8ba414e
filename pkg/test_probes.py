import itertools
import math

import numpy as np
import pytest
from pydantic import ValidationError

from datasets import XorSpec, sphere_dataset, xor_population, xor_sample
from errors import ConfigError, PreconditionError
from margin import build_reference, solve_margin, tangent_features
from network import (
    NetworkConfig,
    forward_with_trace,
    init_symmetric,
    layer_gradients,
    random_perturbation,
)
from probes import (
    ProbeReport,
    ScalingSweep,
    bound_check,
    descent_probe,
    descent_slacks,
    drift_probe,
    eval_F,
    eval_generalization_bound,
    fit_power_law,
    flip_counts,
    flip_probe,
    g_prime,
    gaussian_indicator_check,
    grad_drift_probe,
    gradient_drifts,
    init_norm_probe,
    lipschitz_probe,
    margin_trend,
    rademacher_iterates,
    rademacher_linearized,
    run_probe,
    semi_smooth_probe,
    semi_smooth_residuals,
    smooth_loss_bound,
    width_sweep,
)
from trainer import TrainConfig, empirical_risk, train


def _pair(seed=0, L=2, m=24, d=5, radius=0.8):
    init = init_symmetric(NetworkConfig(L=L, m=m, d=d, seed=seed))
    return init, init.shifted(random_perturbation(init, radius, seed + 1))


class TestReport:
    def test_negative_flip_count_rejected(self):
        with pytest.raises(ValidationError):
            ProbeReport(name="x", scalars={"max_flips": -1.0})

    def test_flips_above_width_rejected(self):
        with pytest.raises(ValidationError):
            ProbeReport(name="x", scalars={"max_flips": 9.0}, meta={"m": 8})

    def test_series_x_must_increase(self):
        with pytest.raises(ValidationError):
            ProbeReport(name="x", series={"s": {"x": [1.0, 1.0], "y": [0.0, 0.0]}})

    def test_fit_recovers_exact_power_law(self):
        x = np.array([64.0, 128.0, 256.0, 512.0])
        fit = fit_power_law(x, 3.0 * x ** 0.5)
        assert fit.exponent == pytest.approx(0.5, rel=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), rel=1e-12)
        assert fit.r2 == pytest.approx(1.0) and not fit.flagged

    def test_fit_needs_two_positive_points(self):
        assert fit_power_law([1.0, 2.0], [0.0, 1.0]) is None


class TestPerturbation:
    def test_zero_perturbation_changes_nothing(self, small_net, sphere_data):
        flips = flip_counts(small_net, small_net, sphere_data.inputs)
        assert np.all(flips == 0)
        report = drift_probe(small_net, small_net, sphere_data)
        assert report.scalars["max_drift"] == 0.0

    def test_flip_probe_bounds(self, sphere_data):
        init, moved = _pair()
        report = flip_probe(init, moved, sphere_data)
        assert 0 <= report.scalars["max_flips"] <= init.m
        assert report.passed
        assert report.series["flips_by_layer"].x == [1.0, 2.0]

    def test_output_drift_floor(self, sphere_data):
        init, moved = _pair()
        assert drift_probe(init, moved, sphere_data).checks["output_floor"]

    def test_gradient_drift_matches_dense_difference(self, sphere_data):
        init, moved = _pair(L=3, m=12)
        drift, _, _ = gradient_drifts(init, moved, sphere_data.inputs)
        for i, x in enumerate(sphere_data.inputs):
            _, t0 = forward_with_trace(init, x)
            _, t1 = forward_with_trace(moved, x)
            g0 = layer_gradients(init, x, t0)
            g1 = layer_gradients(moved, x, t1)
            dense = np.array([np.linalg.norm(a - b) for a, b in zip(g1.matrices, g0.matrices)])
            np.testing.assert_allclose(drift[i], dense, rtol=1e-7, atol=1e-12)
        assert grad_drift_probe(init, moved, sphere_data).checks["triangle"]

    def test_semi_smooth_residual_vanishes_at_same_point(self, sphere_data):
        init, moved = _pair()
        assert np.all(semi_smooth_residuals(moved, moved, sphere_data.inputs) == 0.0)
        report = semi_smooth_probe(moved, init, sphere_data, init=init)
        assert report.scalars["max_residual"] >= 0.0
        assert report.scalars["R"] == pytest.approx(0.8, rel=1e-12)

    def test_semi_smooth_residual_is_exact_for_one_layer_without_flips(self, sphere_data):
        init = init_symmetric(NetworkConfig(L=1, m=16, d=5, seed=0))
        near = init.shifted(random_perturbation(init, 1e-9, seed=3))
        assert np.all(flip_counts(init, near, sphere_data.inputs) == 0)
        np.testing.assert_allclose(semi_smooth_residuals(near, init, sphere_data.inputs), 0.0, atol=1e-15)

    def test_lipschitz_probe_zero_radius(self):
        init = init_symmetric(NetworkConfig(L=2, m=16, d=4, seed=0))
        report = lipschitz_probe(init, 0.0, n_sphere=20, K=2)
        assert report.scalars["max_drift"] == 0.0
        assert report.checks["constant_le_C"]

    def test_lipschitz_probe_rejects_negative_radius(self):
        init = init_symmetric(NetworkConfig(L=1, m=8, d=4, seed=0))
        with pytest.raises(PreconditionError):
            lipschitz_probe(init, -1.0)


class TestDescent:
    def test_slack_identity_and_radius(self):
        init = init_symmetric(NetworkConfig(L=1, m=64, d=4, seed=2))
        data = sphere_dataset(4, 10, seed=2)
        cert = solve_margin(tangent_features(init, data))
        ref = build_reference(init, cert, T=30, data=data)
        traj = train(init, data, TrainConfig(eta=0.1, T=30), reference=ref.params)
        report = descent_probe(traj, ref.params, data, eta=0.1, init=init)
        assert report.checks["identity"]
        ref_risk, _ = empirical_risk(ref.params, data)
        slacks = descent_slacks(traj, 0.1, ref_risk)
        assert len(slacks) == 30
        assert report.scalars["fraction_descent"] == pytest.approx(
            float(np.mean(slacks >= -0.01 * 0.1 * traj.train_loss[0])))

    def test_needs_reference_series(self, xor_data):
        init = init_symmetric(NetworkConfig(L=1, m=16, d=6, seed=0))
        traj = train(init, xor_data, TrainConfig(eta=0.1, T=2))
        with pytest.raises(PreconditionError):
            descent_probe(traj, init, xor_data, eta=0.1)


class TestInitialization:
    def test_init_norm_probe_reports_every_quantity(self, sphere_data):
        init = init_symmetric(NetworkConfig(L=3, m=64, d=5, seed=1))
        report = init_norm_probe(init, sphere_data.inputs, product_samples=2)
        assert len(report.series["spectral_norm_by_layer"].y) == 3
        assert report.scalars["max_spectral_norm_over_sqrt_m"] > 0
        assert report.scalars["min_hidden_norm_sq"] <= report.scalars["max_hidden_norm_sq"]
        assert report.scalars["max_product_norm"] > 0

    @pytest.mark.parametrize("mode", ["parallel", "orthogonal", "random"])
    def test_gaussian_indicator_identity(self, mode):
        report = gaussian_indicator_check(5, 1_000_000, seed=0, mode=mode)
        assert report.checks["within_tol"], report.scalars

    def test_gaussian_indicator_zero_vector(self):
        report = gaussian_indicator_check(4, 10_000, seed=0, mode="zero")
        assert report.scalars["estimate"] == 0.0 and report.scalars["target"] == 0.0

    def test_gaussian_indicator_rejects_few_trials(self):
        with pytest.raises(PreconditionError):
            gaussian_indicator_check(4, 100, seed=0)


class TestRademacher:
    def test_exact_enumeration_matches_brute_force(self):
        init, moved = _pair(L=2, m=8, d=4)
        data = sphere_dataset(4, 6, seed=4)
        B = 1.7
        report = rademacher_linearized(moved, data, B, seed=0, exact=True)
        grads = []
        for x in data.inputs:
            _, t = forward_with_trace(moved, x)
            grads.append(np.concatenate([g.ravel() for g in layer_gradients(moved, x, t).matrices]))
        G = np.array(grads)
        values = [B / data.n * np.linalg.norm(np.array(eps) @ G)
                  for eps in itertools.product([-1.0, 1.0], repeat=data.n)]
        assert report.scalars["estimate"] == pytest.approx(np.mean(values), rel=1e-10)
        assert report.meta["K"] == 2 ** data.n

    def test_ratio_is_against_depth_squared_shape(self):
        init = init_symmetric(NetworkConfig(L=3, m=16, d=4, seed=0))
        report = rademacher_linearized(init, sphere_dataset(4, 5, seed=1), 2.0, K=50)
        shape = 2.0 * 3 ** 2 * math.sqrt(math.log(16) / 5)
        assert report.scalars["bound_shape"] == pytest.approx(shape, rel=1e-15)
        assert report.scalars["ratio_to_shape"] == pytest.approx(report.scalars["estimate"] / shape, rel=1e-15)

    def test_enumeration_is_capped(self):
        init = init_symmetric(NetworkConfig(L=1, m=4, d=3, seed=0))
        with pytest.raises(PreconditionError):
            rademacher_linearized(init, sphere_dataset(3, 17, seed=0), 1.0, exact=True)

    def test_single_iterate_has_zero_complexity(self, xor_data):
        init, moved = _pair(L=1, m=16, d=6)
        traj = train(moved, xor_data, TrainConfig(eta=0.1, T=0))
        report = rademacher_iterates(traj, xor_data.take(range(10)), exact=True)
        assert report.scalars["estimate"] == pytest.approx(0.0, abs=1e-12)

    def test_more_iterates_never_lower_the_estimate(self, xor_data):
        init = init_symmetric(NetworkConfig(L=1, m=16, d=6, seed=0))
        data = xor_data.take(range(8))
        traj = train(init, data, TrainConfig(eta=0.5, T=6, snapshot_every=2))
        full = rademacher_iterates(traj, data, exact=True).scalars["estimate"]
        traj.snapshots = traj.snapshots[:2]
        fewer = rademacher_iterates(traj, data, exact=True).scalars["estimate"]
        assert full >= fewer - 1e-15


class TestBound:
    def test_formulas(self):
        assert eval_F(0.1, 10, 0.2, 1.0, 0.1, 20, 4.0) == pytest.approx(
            3 * 0.1 * 10 * (0.4 + 7 * math.log(20) / 120) + 4.0)
        assert g_prime(1.0, 2, 100, 3.0) == pytest.approx(2.0 + 16 * math.log(100) * 3.0)
        conf = 5.0 * math.log(20.0)
        assert smooth_loss_bound(0.25, 0.0, 5.0, 1, 0.1) == pytest.approx(0.5 * math.sqrt(conf) + conf)

    def test_generalization_bound_report(self):
        report = eval_generalization_bound(0.1, 0.25, 5.0, n=1, delta=0.1, measured_gap=0.2)
        assert report.scalars["bound"] == pytest.approx(smooth_loss_bound(0.25, 0.1, 5.0, 1, 0.1))
        assert report.checks["gap_le_bound"]

    def test_bound_check_on_small_xor_run(self):
        spec = XorSpec(d=4, seed=0)
        init = init_symmetric(NetworkConfig(L=1, m=32, d=4, seed=0))
        data = xor_sample(spec, 12)
        cert = solve_margin(tangent_features(init, data))
        if not cert.separable:
            pytest.skip("sample not NTK-separable at this width")
        ref = build_reference(init, cert, T=20, data=data)
        traj = train(init, data, TrainConfig(eta=0.1, T=20, snapshot_every=5), reference=ref.params)
        report = bound_check(traj, ref, init, data, xor_population(spec), eta=0.1, K=50)
        assert len(report.series["gap"].x) == len(traj.snapshots)
        assert report.scalars["B"] >= ref.shift_norm
        assert report.scalars["G_prime"] > 2 * report.scalars["G"]


class TestSweeps:
    def test_width_sweep_produces_fit(self):
        report = width_sweep("flip", ScalingSweep(widths=(16, 32, 64), repeats=2, L=2, d=4, n=6), seed=1)
        assert report.series["median"].x == [16.0, 32.0, 64.0]
        assert report.meta["loglog"]

    def test_flip_sweep_defaults_to_targeted_direction(self):
        sweep = ScalingSweep(widths=(16, 32))
        assert sweep.perturbation_for("flip") == "targeted"
        assert sweep.perturbation_for("drift") == "random"
        assert ScalingSweep(widths=(16, 32), perturbation="random").perturbation_for("flip") == "random"

    def test_unknown_perturbation_rejected(self):
        with pytest.raises(ConfigError, match="perturbation"):
            ScalingSweep(widths=(16, 32), perturbation="sideways")

    def test_targeted_flips_grow_with_width(self):
        report = width_sweep("flip", ScalingSweep(widths=(64, 256, 1024), repeats=2, L=1, d=4, n=4), seed=3)
        medians = report.series["median"].y
        assert medians[0] < medians[1] < medians[2]

    def test_sweep_widths_must_increase(self):
        with pytest.raises(ConfigError):
            ScalingSweep(widths=(64, 32))

    def test_margin_trend_series(self):
        report = margin_trend([4, 5, 6], m=32, L=1, seed=0)
        assert report.series["inverse_gamma"].x == [4.0, 5.0, 6.0]

    def test_margin_trend_collapses_repeated_dimensions(self):
        report = margin_trend([5, 4, 5, 6, 4], m=32, L=1, seed=0)
        assert report.series["inverse_gamma"].x == [4.0, 5.0, 6.0]
        with pytest.raises(ConfigError):
            margin_trend([5, 5], m=32)

    def test_inverse_margin_grows_with_dimension(self):
        report = margin_trend([4, 5, 6], m=128, L=1, seed=0)
        inv = report.series["inverse_gamma"].y
        assert all(math.isfinite(v) for v in inv)
        assert inv[0] < inv[1] < inv[2]
        assert report.scalars["exponent"] > 0

    def test_catalog_rejects_unknown_probe(self):
        with pytest.raises(ConfigError, match="catalog"):
            run_probe("nonsense", {})

    def test_catalog_dispatch(self):
        report = run_probe("flip", {"m": "16", "L": "1", "n": "4"}, seed=2)
        assert report.name == "flip"
        assert report.meta["seed"] == 2


@pytest.mark.slow
class TestWidthScaling:
    def test_drift_shrinks_with_width(self):
        report = width_sweep("drift", ScalingSweep(widths=(256, 512, 1024, 2048), repeats=5, L=3, d=5, n=8), seed=0)
        medians = report.series["median"].y
        assert medians[-1] < medians[0]

    def test_flip_counts_grow_like_two_thirds_power(self):
        sweep = ScalingSweep(widths=(256, 512, 1024, 2048, 4096), repeats=3, L=3, d=5, n=8)
        report = width_sweep("flip", sweep, seed=0)
        assert report.meta["perturbation"] == "targeted"
        assert 0.5 <= report.fit.exponent <= 0.85, report.series["median"].y

    @pytest.mark.parametrize("kind", ["semi-smooth", "grad-drift"])
    def test_medians_decrease_with_width(self, kind):
        report = width_sweep(kind, ScalingSweep(widths=(256, 1024, 4096), repeats=3, L=3, d=5, n=8), seed=0)
        medians = report.series["median"].y
        assert medians[0] > medians[1] > medians[2], medians


@pytest.mark.slow
class TestWideInitialization:
    def test_norm_suite_at_width_4096(self):
        init = init_symmetric(NetworkConfig(L=6, m=4096, d=5, seed=0))
        report = init_norm_probe(init, sphere_dataset(5, 64, seed=0).inputs)
        assert report.checks == {"spectral_le_c0": True, "hidden_band": True, "last_layer_grad": True,
                                 "product_le_C_L_sqrtlogm": True}, report.scalars

    def test_xor_run_gap_stays_under_bound(self):
        spec = XorSpec(d=6, seed=0)
        init = init_symmetric(NetworkConfig(L=1, m=1024, d=6, seed=0))
        data = xor_sample(spec, 20)
        cert = solve_margin(tangent_features(init, data))
        assert cert.separable
        ref = build_reference(init, cert, T=500, data=data)
        traj = train(init, data, TrainConfig(eta=0.1, T=500, snapshot_every=50), reference=ref.params)
        report = bound_check(traj, ref, init, data, xor_population(spec), eta=0.1, C=1.0, K=200)
        assert report.checks["gap_le_bound"]
        assert all(g >= 0.0 for g in report.series["gap"].y)
