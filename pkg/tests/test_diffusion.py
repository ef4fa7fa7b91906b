import math

import numpy as np
import pytest
import torch

from lfdiff.diffusion import (
    ddim_sample,
    ddim_step,
    ddpm_step,
    diffusion_loss,
    eps_loss,
    make_schedule,
    predict_z0,
    q_sample,
    sampling_grid,
)
from lfdiff.errors import ConfigError, DomainError, ShapeError

# frozen high-precision oracle (mpmath, 50 digits): prod(1 - beta_t) for the
# default linear schedule with T=200
ALPHA_BAR_200 = 0.13218275425061779


def true_eps_denoiser(z0, schedule):
    def denoiser(z_t, cond, t):
        ab = schedule.alpha_bar_at(t)
        return (z_t - math.sqrt(ab) * z0) / math.sqrt(1.0 - ab)

    return denoiser


class TestSchedule:
    def test_single_step(self):
        s = make_schedule(1, 0.01, 0.01)
        assert s.beta_at(1) == pytest.approx(0.01)
        assert s.alpha_bar_at(1) == pytest.approx(0.99)

    def test_alpha_bar_matches_high_precision_product(self):
        s = make_schedule(200)
        assert abs(s.alpha_bar_at(200) - ALPHA_BAR_200) <= 1e-10

    def test_monotonicity(self):
        s = make_schedule(50, 1e-4, 0.05)
        assert torch.all(s.beta[1:] >= s.beta[:-1])
        assert torch.all(s.alpha_bar[1:] < s.alpha_bar[:-1])

    def test_identities_double_precision(self):
        s = make_schedule(200)
        assert float((s.alpha + s.beta - 1.0).abs().max()) <= 1e-12
        ratio = s.alpha_bar[1:] / s.alpha_bar[:-1]
        assert float((ratio - s.alpha[1:]).abs().max()) <= 1e-12
        assert s.alpha_bar_at(0) == 1.0

    def test_invalid_bounds(self):
        with pytest.raises(ConfigError):
            make_schedule(0)
        with pytest.raises(ConfigError):
            make_schedule(10, 0.02, 0.01)
        with pytest.raises(ConfigError):
            make_schedule(10, 0.0, 0.01)
        with pytest.raises(ConfigError):
            make_schedule(10, 0.5, 1.0)

    def test_accessor_bounds(self):
        s = make_schedule(10)
        with pytest.raises(DomainError):
            s.beta_at(0)
        with pytest.raises(DomainError):
            s.alpha_bar_at(11)


class TestQSample:
    def test_zero_noise(self):
        s = make_schedule(200)
        z0 = torch.randn(2, 3, 4, 4, generator=torch.Generator().manual_seed(0))
        out = q_sample(z0, 50, torch.zeros_like(z0), s)
        torch.testing.assert_close(out, math.sqrt(s.alpha_bar_at(50)) * z0)

    def test_zero_signal(self):
        s = make_schedule(200)
        eps = torch.randn(2, 3, 4, 4, generator=torch.Generator().manual_seed(1))
        out = q_sample(torch.zeros_like(eps), 120, eps, s)
        torch.testing.assert_close(out, math.sqrt(1 - s.alpha_bar_at(120)) * eps)

    @pytest.mark.parametrize("t", [1, 7, 64, 200])
    def test_matches_iterated_single_steps(self, t):
        # brute-force oracle: compose x_i = sqrt(a_i) x_{i-1} + sqrt(b_i) e_i,
        # then express the matched effective noise analytically
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(t)
        z0 = torch.randn(1, 3, 8, 8, generator=gen)
        x = z0.clone()
        eff = torch.zeros_like(z0, dtype=torch.float64)
        ab_t = s.alpha_bar_at(t)
        for i in range(1, t + 1):
            e = torch.randn(z0.shape, generator=gen)
            a, b = s.alpha_at(i), s.beta_at(i)
            x = math.sqrt(a) * x + math.sqrt(b) * e
            eff += math.sqrt(ab_t / s.alpha_bar_at(i) * b) * e.double()
        eff = (eff / math.sqrt(1.0 - ab_t)).float()
        torch.testing.assert_close(q_sample(z0, t, eff, s), x, atol=1e-5, rtol=1e-5)

    def test_variance_contract_monte_carlo(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(9)
        n = 400_000
        for t in (10, 150):
            z0 = torch.randn(n, generator=gen)
            eps = torch.randn(n, generator=gen)
            var = float(q_sample(z0, t, eps, s).var())
            expect = s.alpha_bar_at(t) * 1.0 + (1.0 - s.alpha_bar_at(t))
            assert abs(var - expect) / expect < 0.05

    def test_shape_mismatch(self):
        s = make_schedule(10)
        with pytest.raises(ShapeError):
            q_sample(torch.zeros(2, 3), 1, torch.zeros(3, 2), s)


class TestPredictZ0:
    def test_exact_inverse_double(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(2)
        z0 = torch.randn(1, 3, 8, 8, generator=gen, dtype=torch.float64)
        eps = torch.randn(z0.shape, generator=gen, dtype=torch.float64)
        z_t = q_sample(z0, 77, eps, s)
        torch.testing.assert_close(predict_z0(z_t, eps, 77, s), z0, atol=1e-12, rtol=1e-12)

    def test_inverse_float32(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(3)
        z0 = torch.randn(1, 3, 8, 8, generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        back = predict_z0(q_sample(z0, 199, eps, s), eps, 199, s)
        assert float((back - z0).abs().max()) <= 1e-5

    def test_constant_case(self):
        s = make_schedule(200)
        c = 0.37
        z_t = torch.full((4, 4), math.sqrt(s.alpha_bar_at(42)) * c)
        out = predict_z0(z_t, torch.zeros_like(z_t), 42, s)
        torch.testing.assert_close(out, torch.full_like(out, c), atol=1e-6, rtol=0)

    def test_random_case_high_precision_oracle(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(4)
        z_t = torch.randn(5, generator=gen, dtype=torch.float64)
        eps = torch.randn(5, generator=gen, dtype=torch.float64)
        t = 130
        ab = float(s.alpha_bar[t - 1])
        expected = (z_t.numpy() - np.sqrt(1 - ab) * eps.numpy()) / np.sqrt(ab)
        np.testing.assert_allclose(predict_z0(z_t, eps, t, s).numpy(), expected, rtol=1e-14)


class TestDdimStep:
    def test_terminal_step_recovers_z0(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(5)
        z0 = torch.randn(1, 3, 4, 4, generator=gen, dtype=torch.float64)
        eps = torch.randn(z0.shape, generator=gen, dtype=torch.float64)
        z_t = q_sample(z0, 21, eps, s)
        torch.testing.assert_close(ddim_step(z_t, eps, 21, 0, s), z0, atol=1e-12, rtol=1e-12)

    def test_zero_eps_rescales_signal(self):
        s = make_schedule(200)
        z0 = torch.randn(2, 3, 4, 4, generator=torch.Generator().manual_seed(6))
        z_t = math.sqrt(s.alpha_bar_at(101)) * z0
        out = ddim_step(z_t, torch.zeros_like(z_t), 101, 41, s)
        torch.testing.assert_close(out, math.sqrt(s.alpha_bar_at(41)) * z0, atol=1e-6, rtol=1e-6)

    def test_noise_free_determinism(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(7)
        z_t = torch.randn(1, 3, 4, 4, generator=gen)
        eps = torch.randn(z_t.shape, generator=gen)
        a = ddim_step(z_t, eps, 100, 50, s)
        b = ddim_step(z_t, eps, 100, 50, s)
        assert torch.equal(a, b)

    def test_order_error(self):
        s = make_schedule(200)
        z = torch.zeros(2, 2)
        with pytest.raises(ConfigError):
            ddim_step(z, z, 10, 10, s)
        with pytest.raises(ConfigError):
            ddim_step(z, z, 10, 20, s)


class TestDdpmStep:
    def test_zero_inputs(self):
        s = make_schedule(200)
        z_t = torch.randn(2, 3, 4, 4, generator=torch.Generator().manual_seed(8))
        out = ddpm_step(z_t, torch.zeros_like(z_t), 60, s, torch.zeros_like(z_t))
        torch.testing.assert_close(out, z_t / math.sqrt(s.alpha_at(60)))

    def test_final_step_equals_predict_z0(self):
        # at t=1: (1-a)/sqrt(1-abar) = sqrt(beta_1), identical to the inversion
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(9)
        z0 = torch.randn(1, 3, 4, 4, generator=gen, dtype=torch.float64)
        eps = torch.randn(z0.shape, generator=gen, dtype=torch.float64)
        z_1 = q_sample(z0, 1, eps, s)
        out = ddpm_step(z_1, eps, 1, s, torch.zeros_like(z_1))
        torch.testing.assert_close(out, predict_z0(z_1, eps, 1, s), atol=1e-12, rtol=1e-12)

    def test_noise_variance_contract(self):
        s = make_schedule(200)
        gen = torch.Generator().manual_seed(10)
        t = 90
        noise = torch.randn(10_000, generator=gen)
        out = ddpm_step(torch.zeros(10_000), torch.zeros(10_000), t, s, noise)
        expect = 1.0 - s.alpha_at(t)
        assert abs(float(out.var()) - expect) / expect < 0.05


class TestDdimSample:
    def test_grid_matches_algorithm(self):
        assert sampling_grid(200, 2) == [(101, 1), (1, 0)]
        assert sampling_grid(200, 1) == [(1, 0)]
        grid = sampling_grid(200, 10)
        assert grid[0] == (181, 161) and grid[-1] == (1, 0)

    def test_non_divisor_rejected(self):
        s = make_schedule(200)
        with pytest.raises(ConfigError):
            ddim_sample(lambda z, c, t: z, torch.zeros(1, 3, 4, 4), 3, s, 0)

    def test_seed_determinism_bitwise(self):
        s = make_schedule(200)
        den = lambda z, c, t: 0.1 * z  # keeps the output a function of the draw
        a = ddim_sample(den, torch.zeros(1, 3, 8, 8), 10, s, rng_seed=11)
        b = ddim_sample(den, torch.zeros(1, 3, 8, 8), 10, s, rng_seed=11)
        assert torch.equal(a, b)
        c = ddim_sample(den, torch.zeros(1, 3, 8, 8), 10, s, rng_seed=12)
        assert not torch.equal(a, c)

    @pytest.mark.parametrize("S", [1, 2, 5, 10, 25, 50, 100, 200])
    def test_oracle_inversion(self, S):
        s = make_schedule(200)
        z0 = torch.randn(1, 3, 8, 8, generator=torch.Generator().manual_seed(S))
        out = ddim_sample(true_eps_denoiser(z0, s), torch.zeros_like(z0), S, s, rng_seed=99)
        assert float((out - z0).abs().max()) <= 1e-5

    def test_step_count_drives_work(self):
        s = make_schedule(200)
        calls = []

        def counting(z, c, t):
            calls.append(t)
            return torch.zeros_like(z)

        ddim_sample(counting, torch.zeros(1, 3, 4, 4), 25, s, 0)
        assert len(calls) == 25


class TestLosses:
    def test_eps_loss_examples(self):
        z = torch.zeros(2, 3, 4, 4)
        assert float(eps_loss(z, z)) == 0.0
        assert float(eps_loss(torch.ones_like(z), z)) == pytest.approx(1.0)

    def test_eps_loss_random_oracle(self):
        gen = torch.Generator().manual_seed(13)
        a = torch.randn(64, generator=gen, dtype=torch.float64)
        b = torch.randn(64, generator=gen, dtype=torch.float64)
        expected = np.mean((a.numpy() - b.numpy()) ** 2)
        assert float(eps_loss(a, b)) == pytest.approx(expected, rel=1e-12)

    def test_diffusion_loss_examples(self):
        z = torch.zeros(2, 3, 4, 4)
        out = diffusion_loss(z, z, z, z)
        assert float(out.total) == 0.0
        half = torch.full_like(z, 0.5)
        out = diffusion_loss(z, z, z, half)
        assert float(out.total) == pytest.approx(0.5)
        assert float(out.eps) == 0.0
        assert float(out.prior) == pytest.approx(0.5)

    def test_diffusion_loss_random_oracle(self):
        gen = torch.Generator().manual_seed(14)
        ts = [torch.randn(32, generator=gen, dtype=torch.float64) for _ in range(4)]
        out = diffusion_loss(*ts)
        expected = np.mean((ts[0].numpy() - ts[1].numpy()) ** 2) + np.mean(
            np.abs(ts[3].numpy() - ts[2].numpy())
        )
        assert float(out.total) == pytest.approx(expected, rel=1e-12)

    def test_nonnegative_and_zero_iff(self):
        gen = torch.Generator().manual_seed(15)
        for _ in range(5):
            ts = [torch.randn(16, generator=gen) for _ in range(4)]
            out = diffusion_loss(*ts)
            assert float(out.total) >= 0.0
        same = torch.randn(16, generator=gen)
        assert float(diffusion_loss(same, same.clone(), same, same.clone()).total) == 0.0
