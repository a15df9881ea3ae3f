import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avido.autodiff import Graph, Tensor, softplus_values
from avido.model import (Architecture, DeepONet, ParameterLayout, forward, log_prior,
                         log_q, sample_parameters, standard_architecture)

LOG_2PI = math.log(2.0 * math.pi)


def tiny_arch(m=1, d=1, p=1):
    return Architecture(branch_dims=(m, 2 * p), trunk_dims=(d, 2 * p), p=p)


class TestArchitecture:
    def test_table_shapes(self):
        arch = standard_architecture("antiderivative")
        assert arch.branch_dims == (100, 25, 25, 50)
        assert arch.trunk_dims == (1, 25, 25, 50)
        assert arch.p == 25
        deep = standard_architecture("advection_diffusion")
        assert deep.branch_dims == (100, 35, 35, 35, 70)
        assert deep.trunk_dims == (2, 35, 35, 35, 70)

    def test_parameter_count_closed_form(self):
        arch = standard_architecture("antiderivative")
        branch = (100 + 1) * 25 + (25 + 1) * 25 + (25 + 1) * 50
        trunk = (1 + 1) * 25 + (25 + 1) * 25 + (25 + 1) * 50
        assert arch.parameter_count == branch + trunk + 2 == 6477
        assert DeepONet(arch).n_parameters == 6477

    def test_final_width_must_be_2p(self):
        with pytest.raises(ValueError):
            Architecture(branch_dims=(3, 5), trunk_dims=(1, 5), p=2)


class TestSampleParameters:
    def test_zero_noise_returns_means(self):
        model = DeepONet(tiny_arch(m=3), seed=1)
        theta = sample_parameters(model, np.zeros(model.n_parameters))
        np.testing.assert_array_equal(theta.data, model.mu.data)

    def test_unit_noise_adds_softplus_rho(self):
        model = DeepONet(tiny_arch(), seed=1)
        n = model.n_parameters
        model.mu.data[:] = 0.0
        model.rho.data[:] = -3.0
        theta = sample_parameters(model, np.ones(n))
        expected = math.log1p(math.exp(-3.0))
        np.testing.assert_allclose(theta.data, expected, rtol=1e-12)
        assert expected == pytest.approx(0.048587, abs=1e-6)

    def test_deterministic_in_epsilon(self):
        model = DeepONet(tiny_arch(m=4), seed=3)
        eps = np.linspace(-1, 1, model.n_parameters)
        a = sample_parameters(model, eps).data
        b = sample_parameters(model, eps).data
        np.testing.assert_array_equal(a, b)

    def test_dimension_check(self):
        model = DeepONet(tiny_arch(), seed=0)
        with pytest.raises(ValueError, match="length"):
            sample_parameters(model, np.zeros(model.n_parameters + 1))


class TestForward:
    def test_hand_built_dot_product(self):
        # Branch bias emits [2, 0], trunk bias emits [3, 0], mean bias 1:
        # mean = 1 + 2 * 3 = 7.
        arch = tiny_arch()
        model = DeepONet(arch, kind="deterministic", seed=0)
        layout = model.layout
        theta = np.zeros(model.n_parameters)

        def put(name, values):
            start, stop, shape = layout.offsets[name]
            theta[start:stop] = np.asarray(values).reshape(-1)

        put("branch.b0", [2.0, 0.0])
        put("trunk.b0", [3.0, 0.0])
        put("head.mean_bias", 1.0)
        model.theta.data[:] = theta
        mean, sigma = forward(model, model.theta, np.zeros((1, 1)), np.zeros((1, 1)))
        assert mean.data[0, 0] == pytest.approx(7.0)

    def test_sigma_floor_and_softplus(self):
        arch = tiny_arch()
        model = DeepONet(arch, kind="deterministic", seed=0)
        model.theta.data[:] = 0.0  # raw scale head output 0
        mean, sigma = forward(model, model.theta, np.zeros((2, 1)), np.zeros((3, 1)))
        np.testing.assert_allclose(mean.data, 0.0)
        np.testing.assert_allclose(sigma.data, math.log(2.0) + 1e-3, rtol=1e-12)
        assert sigma.data.shape == (2, 3)

    def test_deterministic_equals_variational_at_zero_noise(self):
        arch = standard_architecture("antiderivative")
        vmodel = DeepONet(arch, seed=5)
        theta = sample_parameters(vmodel, np.zeros(vmodel.n_parameters))
        dmodel = DeepONet(arch, kind="deterministic", seed=9,
                          params={"theta": vmodel.mu.data.copy()})
        a = np.random.default_rng(0).normal(size=(4, 100))
        y = np.random.default_rng(1).random(size=(6, 1))
        mv, sv = forward(vmodel, theta, a, y)
        md, sd = forward(dmodel, dmodel.theta, a, y)
        np.testing.assert_allclose(mv.data, md.data, atol=1e-14)
        np.testing.assert_allclose(sv.data, sd.data, atol=1e-14)

    def test_latent_permutation_invariance(self):
        arch = Architecture(branch_dims=(3, 4, 6), trunk_dims=(2, 4, 6), p=3)
        model = DeepONet(arch, kind="deterministic", seed=11)
        a = np.random.default_rng(3).normal(size=(2, 3))
        y = np.random.default_rng(4).random(size=(5, 2))
        base_mean, base_sigma = forward(model, model.theta, a, y)

        perm = np.array([2, 0, 1])
        layout = model.layout
        theta = model.theta.data.copy()
        for net in ("branch", "trunk"):
            for name in (f"{net}.w1", f"{net}.b1"):
                start, stop, shape = layout.offsets[name]
                block = theta[start:stop].reshape(shape)
                if len(shape) == 2:
                    block[:, :3] = block[:, :3][:, perm]
                    block[:, 3:] = block[:, 3:][:, perm]
                else:
                    block[:3] = block[:3][perm]
                    block[3:] = block[3:][perm]
                theta[start:stop] = block.reshape(-1)
        permuted = DeepONet(arch, kind="deterministic", seed=11, params={"theta": theta})
        pm, ps = forward(permuted, permuted.theta, a, y)
        np.testing.assert_allclose(pm.data, base_mean.data, atol=1e-12)
        np.testing.assert_allclose(ps.data, base_sigma.data, atol=1e-12)

    def test_per_example_queries_match_shared(self):
        arch = tiny_arch(m=4, d=2, p=2)
        model = DeepONet(arch, kind="deterministic", seed=2)
        a = np.random.default_rng(0).normal(size=(3, 4))
        y_shared = np.random.default_rng(1).random(size=(5, 2))
        y_tiled = np.broadcast_to(y_shared, (3, 5, 2)).copy()
        m1, s1 = forward(model, model.theta, a, y_shared)
        m2, s2 = forward(model, model.theta, a, y_tiled)
        np.testing.assert_allclose(m1.data, m2.data, atol=1e-14)
        np.testing.assert_allclose(s1.data, s2.data, atol=1e-14)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_sigma_is_always_above_floor(self, seed):
        arch = tiny_arch(m=2, d=1, p=2)
        model = DeepONet(arch, kind="deterministic", seed=0)
        rng_np = np.random.default_rng(seed)
        model.theta.data[:] = rng_np.normal(scale=3.0, size=model.n_parameters)
        a = rng_np.normal(size=(3, 2))
        y = rng_np.random(size=(4, 1))
        _, sigma = forward(model, model.theta, a, y)
        assert np.all(sigma.data >= arch.sigma_floor)

    def test_input_dimension_validation(self):
        model = DeepONet(tiny_arch(m=3), seed=0)
        theta = sample_parameters(model, np.zeros(model.n_parameters))
        with pytest.raises(ValueError, match="sensors"):
            forward(model, theta, np.zeros((2, 5)), np.zeros((2, 1)))
        with pytest.raises(ValueError, match="dim"):
            forward(model, theta, np.zeros((2, 3)), np.zeros((2, 2)))


class TestLogDensities:
    def test_log_prior_at_origin(self):
        val = log_prior(Tensor(np.zeros(1))).item()
        assert val == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)

    def test_log_prior_two_components(self):
        val = log_prior(Tensor(np.array([1.0, -1.0]))).item()
        assert val == pytest.approx(2 * (-0.5 * LOG_2PI) - 1.0, abs=1e-9)
        assert val == pytest.approx(-2.837877, abs=1e-6)

    def test_log_prior_scales_linearly(self):
        v1 = log_prior(Tensor(np.zeros(10))).item()
        v2 = log_prior(Tensor(np.zeros(20))).item()
        assert v2 == pytest.approx(2.0 * v1, rel=1e-12)

    def test_log_q_matches_prior_for_standard_posterior(self):
        n = 6
        rho = math.log(math.e - 1.0)  # softplus(rho) = 1
        theta = np.linspace(-1, 1, n)
        lq = log_q(Tensor(theta), Tensor(np.zeros(n)), Tensor(np.full(n, rho))).item()
        lp = log_prior(Tensor(theta)).item()
        assert lq == pytest.approx(lp, abs=1e-9)

    def test_log_q_mean_gradient_is_score(self):
        # d log q / d mu at theta = mu + sigma equals 1 / sigma.
        rho = Tensor(np.array([0.4]))
        mu = Tensor(np.array([0.2]))
        sigma = float(softplus_values(rho.data)[0])
        theta = Tensor(np.array([0.2 + sigma]))
        with Graph() as g:
            val = log_q(theta, mu, rho)
        g.backward(val)
        assert mu.grad[0] == pytest.approx(1.0 / sigma, rel=1e-10)

    def test_batched_log_densities(self):
        model = DeepONet(tiny_arch(m=2), seed=4)
        eps = np.random.default_rng(0).normal(size=(3, model.n_parameters))
        theta = sample_parameters(model, eps)
        lp = log_prior(theta)
        lq = log_q(theta, model.mu, model.rho)
        assert lp.shape == lq.shape == (3,)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        model = DeepONet(standard_architecture("pendulum"), seed=8)
        path = tmp_path / "model.avck"
        model.save(path, extra_meta={"problem": "pendulum", "alpha": 1.25})
        loaded, meta = DeepONet.load(path)
        assert meta["problem"] == "pendulum" and meta["alpha"] == 1.25
        np.testing.assert_array_equal(loaded.mu.data, model.mu.data)
        np.testing.assert_array_equal(loaded.rho.data, model.rho.data)
        assert loaded.arch == model.arch

    def test_deterministic_roundtrip(self, tmp_path):
        model = DeepONet(tiny_arch(m=5), kind="deterministic", seed=8)
        path = tmp_path / "det.avck"
        model.save(path)
        loaded, _ = DeepONet.load(path)
        assert loaded.kind == "deterministic"
        np.testing.assert_array_equal(loaded.theta.data, model.theta.data)
