import math

import numpy as np
import pytest

from datasets import sphere_dataset, sphere_sample
from errors import ConfigError, PreconditionError, ShapeError
from network import (
    GradientSet,
    NetworkConfig,
    NetworkParams,
    batch_layer_gradients,
    directional_derivative,
    forward,
    forward_batch,
    forward_with_trace,
    frobenius_distance,
    gradient_gram,
    in_ball,
    init_symmetric,
    layer_distances,
    layer_gradients,
    linearized_output,
    per_sample_gradient_norms,
    philox_stream,
    product_operator_norm,
    random_perturbation,
    reconstruct_layer,
    spectral_norm,
    targeted_perturbation,
    trace_batch,
)
from trainer import risk_gradient


def _scalar_forward(params: NetworkParams, x) -> float:
    """Plain-loop reference forward pass."""
    h = [float(v) for v in x]
    c = math.sqrt(2.0 / params.m)
    for w in params.weights:
        nxt = []
        for row in w:
            pre = sum(float(row[j]) * h[j] for j in range(len(h)))
            nxt.append(c * pre if pre >= 0.0 else 0.0)
        h = nxt
    return sum(float(a) * v for a, v in zip(params.a, h))


def _jacobi_singular_values(M: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """One-sided (Hestenes) Jacobi: rotate column pairs until all are orthogonal."""
    U = np.array(M, dtype=np.float64)
    cols = U.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = float(U[:, p] @ U[:, p])
                beta = float(U[:, q] @ U[:, q])
                gamma = float(U[:, p] @ U[:, q])
                if abs(gamma) <= 1e-15 * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                up = U[:, p].copy()
                U[:, p] = c * up - s * U[:, q]
                U[:, q] = s * up + c * U[:, q]
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def _perturbed(params, radius=0.5, seed=11):
    return params.shifted(random_perturbation(params, radius, seed))


class TestInit:
    def test_output_is_exactly_zero_at_init(self):
        for L in (1, 2, 4):
            init = init_symmetric(NetworkConfig(L=L, m=32, d=5, seed=L))
            X = sphere_sample(5, 50, seed=L)
            out = forward_batch(init, X)
            assert np.all(out == 0.0)

    def test_last_layer_rows_are_duplicated(self, small_net):
        last = small_net.weights[-1]
        half = small_net.m // 2
        assert np.array_equal(last[:half], last[half:])
        assert np.array_equal(small_net.a[half:], -small_net.a[:half])
        assert small_net.is_symmetric()

    def test_same_seed_same_weights(self):
        a = init_symmetric(NetworkConfig(L=2, m=8, d=3, seed=5))
        b = init_symmetric(NetworkConfig(L=2, m=8, d=3, seed=5))
        c = init_symmetric(NetworkConfig(L=2, m=8, d=3, seed=6))
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_weights_are_read_only(self, small_net):
        with pytest.raises(ValueError):
            small_net.weights[0][0, 0] = 1.0

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            NetworkConfig(L=1, m=7, d=3)

    def test_bad_signs_rejected(self):
        with pytest.raises(ShapeError):
            NetworkParams((np.ones((4, 2)),), np.array([1.0, 1.0, 1.0, 1.0]))

    def test_lower_layer_gradients_vanish_at_init(self, small_net, sphere_data):
        _, trace = trace_batch(small_net, sphere_data.inputs)
        grads = batch_layer_gradients(small_net, trace, sphere_data.labels)
        for g in grads.matrices[:-1]:
            assert np.all(g == 0.0)
        assert np.any(grads.matrices[-1] != 0.0)

    def test_exact_zero_identities_over_random_configs(self):
        gen = np.random.default_rng(2024)
        for k in range(100):
            L, m, d = int(gen.integers(1, 5)), 2 * int(gen.integers(1, 33)), int(gen.integers(2, 9))
            init = init_symmetric(NetworkConfig(L=L, m=m, d=d, seed=k))
            data = sphere_dataset(d, 10, seed=k)
            assert np.all(forward_batch(init, data.inputs) == 0.0), (L, m, d)
            grad = risk_gradient(init, data)
            for g in grad.matrices[:-1]:
                assert np.all(g == 0.0), (L, m, d)


class TestForward:
    def test_matches_scalar_loop(self, small_net, sphere_data):
        params = _perturbed(small_net)
        batch = forward_batch(params, sphere_data.inputs)
        for x, got in zip(sphere_data.inputs, batch):
            assert got == pytest.approx(_scalar_forward(params, x), rel=1e-12, abs=1e-13)

    def test_single_input_matches_batch(self, small_net, sphere_data):
        params = _perturbed(small_net)
        batch = forward_batch(params, sphere_data.inputs)
        assert forward(params, sphere_data.inputs[3]) == pytest.approx(batch[3], rel=1e-12, abs=1e-14)

    def test_activation_at_exact_zero_counts_as_active(self):
        params = NetworkParams((np.array([[0.0, 1.0], [0.0, 1.0]]),), np.array([1.0, -1.0]))
        _, trace = trace_batch(params, np.array([[1.0, 0.0]]))
        assert trace.sigma[0].all()
        assert np.all(trace.h[1] == 0.0)

    def test_reconstruct_layer_is_bit_identical(self, small_net, sphere_data):
        params = _perturbed(small_net)
        _, trace = trace_batch(params, sphere_data.inputs)
        for l in range(1, params.L + 1):
            assert np.array_equal(reconstruct_layer(params, trace, l), trace.h[l])

    def test_off_sphere_input_is_rejected_when_strict(self, small_net):
        x = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            forward(small_net, x)
        assert math.isfinite(forward(small_net, x, strict=False))

    def test_wrong_dimension_is_a_shape_error(self, small_net):
        with pytest.raises(ShapeError):
            forward(small_net, np.array([1.0, 0.0]))

    def test_positive_homogeneity(self, small_net, sphere_data):
        params = _perturbed(small_net)
        out, trace = trace_batch(params, sphere_data.inputs)
        doubled = NetworkParams(tuple(2.0 * w for w in params.weights), params.a)
        np.testing.assert_array_equal(forward_batch(doubled, sphere_data.inputs), 2.0 ** params.L * out)
        shrunk = NetworkParams(tuple(0.37 * w for w in params.weights), params.a)
        out_s, trace_s = trace_batch(shrunk, sphere_data.inputs)
        np.testing.assert_allclose(out_s, 0.37 ** params.L * out, rtol=1e-12, atol=1e-15)
        for s0, s1 in zip(trace.sigma, trace_s.sigma):
            assert np.array_equal(s0, s1)

    def test_non_finite_input_is_rejected_even_when_relaxed(self, small_net):
        x = np.array([np.nan, 0.0, 0.0, 0.0, 0.0])
        with pytest.raises(PreconditionError):
            forward(small_net, x)
        with pytest.raises(PreconditionError):
            forward(small_net, x, strict=False)


class TestGradients:
    def test_directional_derivative_matches_central_differences(self, small_net, sphere_data):
        params = _perturbed(small_net)
        direction = random_perturbation(params, 1.0, seed=99)
        eps = 1e-6
        plus = forward_batch(params.shifted(direction, eps), sphere_data.inputs)
        minus = forward_batch(params.shifted(direction, -eps), sphere_data.inputs)
        fd = (plus - minus) / (2 * eps)
        analytic = directional_derivative(params, sphere_data.inputs, direction)
        np.testing.assert_allclose(analytic, fd, rtol=1e-5, atol=1e-7)

    def test_single_sample_gradient_matches_entrywise_differences(self):
        params = _perturbed(init_symmetric(NetworkConfig(L=2, m=6, d=3, seed=2)))
        x = sphere_sample(3, 1, seed=8)[0]
        _, trace = forward_with_trace(params, x)
        grads = layer_gradients(params, x, trace)
        eps = 1e-6
        for l, w in enumerate(params.weights):
            for idx in np.ndindex(w.shape):
                bump = [np.zeros_like(v) for v in params.weights]
                bump[l][idx] = 1.0
                d = GradientSet(tuple(bump))
                fd = (forward(params.shifted(d, eps), x) - forward(params.shifted(d, -eps), x)) / (2 * eps)
                assert grads.matrices[l][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_trace_from_other_input_is_rejected(self, small_net, sphere_data):
        _, trace = forward_with_trace(small_net, sphere_data.inputs[0])
        with pytest.raises(ShapeError):
            layer_gradients(small_net, sphere_data.inputs[1], trace)

    def test_backprop_matches_finite_differences_at_kink_free_points(self):
        init = init_symmetric(NetworkConfig(L=3, m=8, d=5, seed=3))
        eps, checked = 1e-6, 0
        for trial in range(500):
            params = init.shifted(random_perturbation(init, 0.5, seed=trial))
            x = sphere_sample(5, 1, seed=trial)[0]
            _, trace = forward_with_trace(params, x)
            pre = [trace.h[l] @ w.T for l, w in enumerate(params.weights)]
            if min(float(np.min(np.abs(p))) for p in pre) < 1e-3:
                continue
            analytic = np.concatenate([g.ravel() for g in layer_gradients(params, x, trace).matrices])
            fd = []
            for l, w in enumerate(params.weights):
                for idx in np.ndindex(w.shape):
                    bump = [np.zeros(v.shape) for v in params.weights]
                    bump[l][idx] = 1.0
                    d = GradientSet(tuple(bump))
                    fd.append((forward(params.shifted(d, eps), x) - forward(params.shifted(d, -eps), x)) / (2 * eps))
            assert np.linalg.norm(analytic - np.array(fd)) < 1e-4 * np.linalg.norm(analytic)
            checked += 1
            if checked == 50:
                break
        assert checked == 50

    def test_gram_matches_explicit_gradients(self, small_net, sphere_data):
        params = _perturbed(small_net)
        flat = []
        for x in sphere_data.inputs:
            _, trace = forward_with_trace(params, x)
            g = layer_gradients(params, x, trace)
            flat.append(np.concatenate([m.ravel() for m in g.matrices]))
        flat = np.array(flat)
        np.testing.assert_allclose(gradient_gram(params, sphere_data.inputs), flat @ flat.T, rtol=1e-10, atol=1e-12)

    def test_rank_one_norms_match_dense(self, small_net, sphere_data):
        params = _perturbed(small_net)
        _, trace = trace_batch(params, sphere_data.inputs)
        norms = per_sample_gradient_norms(params, trace)
        for i, x in enumerate(sphere_data.inputs):
            _, t = forward_with_trace(params, x)
            dense = layer_gradients(params, x, t).layer_norms()
            np.testing.assert_allclose(norms[i], dense, rtol=1e-10, atol=1e-14)

    def test_linearized_output_is_exact_at_init(self, small_net, sphere_data):
        np.testing.assert_array_equal(linearized_output(small_net, small_net, sphere_data.inputs),
                                      np.zeros(sphere_data.n))


class TestNorms:
    def test_spectral_norm_matches_svd(self, rng):
        M = rng.standard_normal((30, 20))
        assert spectral_norm(M) == pytest.approx(np.linalg.norm(M, 2), rel=1e-9)

    def test_spectral_norm_of_zero_matrix(self):
        assert spectral_norm(np.zeros((4, 3))) == 0.0

    def test_spectral_norm_matches_jacobi_oracle(self, rng):
        worst = 0.0
        for _ in range(200):
            M = rng.standard_normal((6, 6))
            expected = _jacobi_singular_values(M)[0]
            worst = max(worst, abs(spectral_norm(M) - expected) / expected)
        assert worst <= 1e-8

    def test_product_norm_matches_explicit_product(self, sphere_data):
        params = init_symmetric(NetworkConfig(L=4, m=20, d=5, seed=4))
        _, trace = trace_batch(params, sphere_data.inputs)
        c = params.scale
        for a_idx, b_idx in ((2, 2), (2, 4), (3, 4)):
            H = np.eye(params.m)
            for l in range(a_idx, b_idx + 1):
                H = (c * trace.sigma[l - 1][0].astype(float))[:, None] * params.weights[l - 1] @ H
            expected = np.linalg.norm(H, 2)
            got = product_operator_norm(params, trace, a_idx, b_idx, sample=0)
            assert got == pytest.approx(expected, rel=1e-8)

    def test_product_norm_needs_valid_range(self, small_net, sphere_data):
        _, trace = trace_batch(small_net, sphere_data.inputs)
        with pytest.raises(PreconditionError):
            product_operator_norm(small_net, trace, 1, 2)
        with pytest.raises(PreconditionError):
            product_operator_norm(small_net, trace, 3, 2)

    def test_distances_and_ball(self, small_net):
        direction = random_perturbation(small_net, 0.3, seed=5)
        moved = small_net.shifted(direction)
        np.testing.assert_allclose(layer_distances(moved, small_net), 0.3, rtol=1e-12)
        assert frobenius_distance(moved, small_net) == pytest.approx(0.3 * math.sqrt(small_net.L), rel=1e-12)
        assert in_ball(moved, small_net, 0.31)
        assert not in_ball(moved, small_net, 0.29)


class TestStreams:
    def test_streams_are_independent_of_draw_order(self):
        first = philox_stream(3, 1, 2, 5).standard_normal(4)
        philox_stream(3, 1, 2, 4).standard_normal(1000)
        again = philox_stream(3, 1, 2, 5).standard_normal(4)
        assert np.array_equal(first, again)
        assert not np.array_equal(first, philox_stream(3, 1, 2, 6).standard_normal(4))


class TestTargetedPerturbation:
    def test_stays_inside_the_ball_layer_by_layer(self):
        net = init_symmetric(NetworkConfig(L=3, m=64, d=5, seed=2))
        x = sphere_sample(5, 1, seed=3)[0]
        direction = targeted_perturbation(net, 0.7, x)
        assert np.all(direction.layer_norms() <= 0.7 * (1 + 1e-12))

    def test_zero_radius_is_the_zero_direction(self, small_net, sphere_data):
        direction = targeted_perturbation(small_net, 0.0, sphere_data.inputs[0])
        assert direction.norm() == 0.0

    def test_one_layer_flips_the_cheapest_units(self):
        net = init_symmetric(NetworkConfig(L=1, m=200, d=6, seed=4))
        x = sphere_sample(6, 1, seed=5)[0]
        R = 0.8
        pre = net.weights[0] @ x
        cost = np.sort(1.01 * np.abs(pre))
        expected = int(np.sum(np.cumsum(cost ** 2) <= R ** 2))
        _, before = forward_with_trace(net, x)
        _, after = forward_with_trace(net.shifted(targeted_perturbation(net, R, x)), x)
        assert expected > 0
        assert int(np.sum(before.sigma[0] != after.sigma[0])) == expected

    def test_flips_at_least_as_many_units_as_a_random_direction(self):
        net = init_symmetric(NetworkConfig(L=2, m=256, d=5, seed=1))
        x = sphere_sample(5, 1, seed=2)[0]
        _, base = forward_with_trace(net, x)
        _, targeted = forward_with_trace(net.shifted(targeted_perturbation(net, 1.0, x)), x)
        _, rand = forward_with_trace(net.shifted(random_perturbation(net, 1.0, seed=3)), x)
        count = lambda t: sum(int(np.sum(a != b)) for a, b in zip(base.sigma, t.sigma))
        assert count(targeted) >= count(rand)

    def test_needs_a_single_input(self, small_net, sphere_data):
        with pytest.raises(ShapeError):
            targeted_perturbation(small_net, 1.0, sphere_data.inputs[:2])

    def test_negative_radius_rejected(self, small_net, sphere_data):
        with pytest.raises(PreconditionError):
            targeted_perturbation(small_net, -1.0, sphere_data.inputs[0])
