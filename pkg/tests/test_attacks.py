"""Attack contracts: noise-move statistics, fault semantics, gradient-sign
box bounds, and seed determinism."""

import math
from dataclasses import replace

import numpy as np
import pytest

from capstab.attacks import (
    AttackedSample,
    Drift,
    Fgsm,
    Lag,
    NoiseMoveParams,
    Offset,
    apply_attack,
    drift_attack,
    fgsm_attack,
    generate_attack_set,
    lag_attack,
    noise_move_path,
    offset_attack,
    read_attack_set,
    sample_magnitude,
    spec_from_dict,
    spec_to_dict,
    write_attack_set,
)
from capstab.capsnet import CapsNetConfig, CapsNetModel
from capstab.data import synth_dataset
from capstab.errors import DataError


class TestNoiseMovePath:
    def test_zero_volatility_closed_form(self):
        params = NoiseMoveParams(mu=0.07, sigma=0.0, dt=0.02, s0=2.0, seed=0)
        path = noise_move_path(params, 500)
        t = np.arange(501)
        expected = 2.0 * np.exp(0.07 * t * 0.02)
        np.testing.assert_allclose(path, expected, rtol=1e-12)

    def test_zero_drift_zero_volatility_constant(self):
        params = NoiseMoveParams(mu=0.0, sigma=0.0, dt=1.0, s0=3.5, seed=0)
        np.testing.assert_array_equal(noise_move_path(params, 10), np.full(11, 3.5))

    def test_log_ratio_moments_match_lognormal(self):
        mu, sigma, dt = 0.05, 0.2, 0.01
        n = 100_000
        params = NoiseMoveParams(mu=mu, sigma=sigma, dt=dt, s0=1.0, seed=123)
        path = noise_move_path(params, n)
        log_ratios = np.diff(np.log(path))
        target_mean = (mu - sigma**2 / 2) * dt
        target_var = sigma**2 * dt
        stderr = sigma * math.sqrt(dt) / math.sqrt(n)
        assert abs(log_ratios.mean() - target_mean) <= 3 * stderr
        assert abs(log_ratios.var() - target_var) <= 0.02 * target_var

    def test_positivity(self):
        # the log-normal step cannot cross zero, unlike an additive scheme
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(10, 2000))
            total_time = rng.uniform(0.1, 4.0)
            params = NoiseMoveParams(
                mu=rng.uniform(-0.5, 0.5),
                sigma=rng.uniform(0.0, 1.0),
                dt=total_time / n,
                s0=rng.uniform(0.01, 10.0),
                seed=int(rng.integers(1 << 31)),
            )
            assert np.all(noise_move_path(params, n) > 0.0)

    def test_deterministic_per_seed(self):
        params = NoiseMoveParams(mu=0.1, sigma=0.3, dt=0.1, seed=42)
        assert np.array_equal(noise_move_path(params, 50), noise_move_path(params, 50))

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            NoiseMoveParams(mu=0.1, sigma=-0.1, dt=0.1)
        with pytest.raises(ValueError):
            NoiseMoveParams(mu=0.1, sigma=0.1, dt=0.0)
        with pytest.raises(ValueError):
            NoiseMoveParams(mu=0.1, sigma=0.1, dt=0.1, s0=0.0)
        with pytest.raises(ValueError):
            noise_move_path(NoiseMoveParams(mu=0.1, sigma=0.1, dt=0.1), 0)


class TestSampleMagnitude:
    def test_degenerate_zero(self):
        params = NoiseMoveParams(mu=0.0, sigma=0.0, dt=1.0, seed=0)
        assert sample_magnitude(params, 5) == 0.0

    def test_deterministic_exponential_growth(self):
        params = NoiseMoveParams(mu=0.1, sigma=0.0, dt=1.0, seed=0)
        assert sample_magnitude(params, 1) == pytest.approx(math.exp(0.1) - 1.0, rel=1e-12)

    def test_monte_carlo_mean(self):
        mu, sigma, dt, horizon = 0.1, 0.3, 0.01, 100
        n = 10_000
        draws = np.empty(n)
        for i in range(n):
            params = NoiseMoveParams(mu=mu, sigma=sigma, dt=dt, seed=1000 + i)
            draws[i] = sample_magnitude(params, horizon)
        total_time = horizon * dt
        expected = math.exp(mu * total_time) - 1.0
        # lognormal variance of s_T/s0 around its mean
        var = math.exp(2 * mu * total_time) * (math.exp(sigma**2 * total_time) - 1.0)
        stderr = math.sqrt(var / n)
        assert abs(draws.mean() - expected) <= 3 * stderr


class TestOffsetAttack:
    def test_degenerate_params_identity(self):
        x = np.linspace(0, 1, 16)
        spec = Offset(scale=0.2, noise=NoiseMoveParams(mu=0.0, sigma=0.0, dt=0.5, seed=0))
        out = offset_attack(x, spec)
        np.testing.assert_array_equal(out.attacked, x)
        assert out.realized_magnitude == 0.0

    def test_difference_is_constant(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=32)
        out = offset_attack(x, Offset(scale=0.2), seed=11)
        # bitwise the same shared addition: attacked == original + m
        np.testing.assert_array_equal(
            out.attacked, out.original + out.realized_magnitude
        )
        # recomputed difference is constant up to 1-ulp rounding of x[i] + m
        diff = out.attacked - out.original
        assert np.var(diff) <= 1e-30
        assert diff[0] == pytest.approx(out.realized_magnitude)

    def test_magnitude_replayable_from_seed(self):
        x = np.random.default_rng(4).uniform(size=24)
        spec = Offset(scale=0.2, noise=NoiseMoveParams(mu=0.1, sigma=0.3, dt=1 / 24))
        out = offset_attack(x, spec, seed=77)
        replay = noise_move_path(replace(spec.noise, seed=77), x.size)
        m = 0.2 * (replay[-1] / spec.noise.s0 - 1.0)
        assert out.realized_magnitude == pytest.approx(m, rel=1e-15)
        np.testing.assert_array_equal(out.attacked, x + m)


class TestDriftAttack:
    def test_deterministic_increasing_ramp_is_monotone(self):
        x = np.zeros(20)
        spec = Drift(
            direction="increasing",
            scale=0.3,
            noise=NoiseMoveParams(mu=0.5, sigma=0.0, dt=0.1, seed=0),
        )
        out = drift_attack(x, spec)
        ramp = out.attacked - x
        assert ramp[0] == 0.0  # path starts at s0
        assert np.all(np.diff(ramp) > 0.0)

    def test_decreasing_flips_sign(self):
        x = np.zeros(20)
        noise = NoiseMoveParams(mu=0.5, sigma=0.0, dt=0.1, seed=0)
        inc = drift_attack(x, Drift("increasing", 0.3, noise))
        dec = drift_attack(x, Drift("decreasing", 0.3, noise))
        np.testing.assert_allclose(dec.attacked, -inc.attacked, atol=1e-15)

    def test_zero_scale_identity(self):
        x = np.random.default_rng(5).uniform(size=16)
        out = drift_attack(x, Drift(scale=0.0), seed=3)
        np.testing.assert_array_equal(out.attacked, x)

    def test_ramp_matches_replayed_path(self):
        x = np.random.default_rng(6).uniform(size=16)
        spec = Drift("increasing", 0.25, NoiseMoveParams(mu=0.1, sigma=0.3, dt=1 / 16))
        out = drift_attack(x, spec, seed=21)
        path = noise_move_path(replace(spec.noise, seed=21), 15)
        np.testing.assert_allclose(
            out.attacked - x, 0.25 * (path / 1.0 - 1.0), atol=1e-15
        )


class TestLagAttack:
    @staticmethod
    def _magnitude_params(target_abs_magnitude, horizon):
        # sigma=0 makes |sample_magnitude| = e^(mu*horizon*dt) - 1 exactly
        mu = math.log(1.0 + target_abs_magnitude) / horizon
        return NoiseMoveParams(mu=mu, sigma=0.0, dt=1.0, seed=0)

    def test_zero_shift_identity(self):
        x = np.random.default_rng(7).uniform(size=12)
        spec = Lag("forward", 0.25, NoiseMoveParams(mu=0.0, sigma=0.0, dt=1.0, seed=0))
        out = lag_attack(x, spec)
        np.testing.assert_array_equal(out.attacked, x)
        assert out.realized_magnitude == 0.0

    def test_worked_forward_example(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        # |magnitude| = 0.5 and max_fraction = 0.5 give k = round(0.5*0.5*4) = 1
        spec = Lag("forward", 0.5, self._magnitude_params(0.5, horizon=4))
        out = lag_attack(x, spec)
        np.testing.assert_array_equal(out.attacked, [1.0, 1.0, 2.0, 3.0])
        assert out.realized_magnitude == 1.0

    def test_backward_replicates_trailing_edge(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        spec = Lag("backward", 0.5, self._magnitude_params(0.5, horizon=4))
        out = lag_attack(x, spec)
        np.testing.assert_array_equal(out.attacked, [2.0, 3.0, 4.0, 4.0])

    def test_forward_then_backward_restores_interior(self):
        x = np.random.default_rng(8).uniform(size=20)
        spec_f = Lag("forward", 0.5, self._magnitude_params(0.6, horizon=20))
        forwarded = lag_attack(x, spec_f)
        k = int(forwarded.realized_magnitude)
        assert k > 0
        spec_b = Lag("backward", 0.5, self._magnitude_params(0.6, horizon=20))
        restored = lag_attack(forwarded.attacked, spec_b)
        assert int(restored.realized_magnitude) == k
        np.testing.assert_array_equal(restored.attacked[: 20 - 2 * k], x[: 20 - 2 * k])

    def test_shift_clamped_to_half_length(self):
        x = np.arange(10.0) / 10.0
        spec = Lag("forward", 0.5, self._magnitude_params(40.0, horizon=10))
        out = lag_attack(x, spec)
        assert out.realized_magnitude == 5.0

    def test_content_preserved_as_contiguous_subsequence(self):
        x = np.random.default_rng(9).uniform(size=30)
        spec = Lag("forward", 0.4, self._magnitude_params(0.9, horizon=30))
        out = lag_attack(x, spec)
        k = int(out.realized_magnitude)
        np.testing.assert_array_equal(out.attacked[k:], x[: 30 - k])


class _StubModel:
    """Duck-typed model with a fixed input gradient."""

    def __init__(self, grad):
        self.grad = np.asarray(grad, dtype=np.float64)

    def loss_and_input_grad(self, x, label):
        return 0.0, self.grad.copy()


class TestFgsmAttack:
    def test_alpha_zero_is_identity(self):
        x = np.random.default_rng(10).uniform(size=8)
        out = fgsm_attack(_StubModel(np.ones(8)), x, 0, alpha=0.0)
        np.testing.assert_array_equal(out.attacked, x)

    def test_all_positive_gradient_adds_alpha_everywhere(self):
        x = np.random.default_rng(11).uniform(size=8)
        out = fgsm_attack(_StubModel(np.full(8, 0.3)), x, 0, alpha=0.01)
        np.testing.assert_allclose(out.attacked, x + 0.01, atol=1e-15)

    def test_box_bound_and_zero_gradient_coordinates(self):
        rng = np.random.default_rng(12)
        grad = rng.normal(size=16)
        grad[[2, 5, 9]] = 0.0
        x = rng.uniform(size=16)
        out = fgsm_attack(_StubModel(grad), x, 0, alpha=0.02)
        diff = out.attacked - x
        assert np.max(np.abs(diff)) <= 0.02 + 1e-15
        nonzero = grad != 0.0
        np.testing.assert_allclose(np.abs(diff[nonzero]), 0.02, atol=1e-15)
        np.testing.assert_array_equal(diff[~nonzero], 0.0)

    def test_loss_increases_on_trained_tiny_capsnet(self):
        cfg = CapsNetConfig(
            signal_len=16,
            conv1_channels=4,
            conv1_kernel=5,
            conv2_channels=4,
            conv2_kernel=5,
            conv2_stride=2,
            primary_dim=2,
            class_dim=4,
            n_classes=5,
            decoder_hidden=(8, 8),
        )
        model = CapsNetModel(cfg, seed=0)
        train = synth_dataset(n_per_class=4, length=16, noise_std=0.03, seed=1)
        # brief inline training: plain gradient descent
        for _ in range(20):
            for beat in train.beats:
                _, cache = model.loss(beat.signal, beat.label)
                grads = model.backward(cache, beat.label)
                for name, arr in model.param_items():
                    arr -= 0.1 * grads[name]
        probes = synth_dataset(n_per_class=20, length=16, noise_std=0.03, seed=2)
        increased = 0
        for beat in probes.beats:
            before, _ = model.loss(beat.signal, beat.label)
            out = fgsm_attack(model, beat.signal, beat.label, alpha=0.01)
            after, _ = model.loss(out.attacked, beat.label)
            if after >= before:
                increased += 1
        assert increased >= 90


class TestGenerateAttackSet:
    def test_empty_request(self):
        ds = synth_dataset(2, 16, 0.05, seed=0)
        assert generate_attack_set(ds, Offset(), 0, seed=0) == []

    def test_empty_dataset_rejected(self):
        ds = synth_dataset(2, 16, 0.05, seed=0)
        ds.beats.clear()
        with pytest.raises(DataError):
            generate_attack_set(ds, Offset(), 5, seed=0)

    def test_same_seed_bitwise_identical(self):
        ds = synth_dataset(5, 16, 0.05, seed=1)
        a = generate_attack_set(ds, Drift(), 10, seed=4)
        b = generate_attack_set(ds, Drift(), 10, seed=4)
        for s1, s2 in zip(a, b):
            assert np.array_equal(s1.attacked, s2.attacked)
            assert s1.seed == s2.seed and s1.label == s2.label

    def test_each_record_replayable_from_its_sub_seed(self):
        ds = synth_dataset(5, 16, 0.05, seed=2)
        samples = generate_attack_set(ds, Offset(scale=0.2), 100, seed=5)
        assert len(samples) == 100
        for sample in samples:
            replay = offset_attack(sample.original, sample.spec, seed=sample.seed)
            assert replay.realized_magnitude == sample.realized_magnitude
            np.testing.assert_array_equal(replay.attacked, sample.attacked)

    def test_oversampling_uses_replacement(self):
        ds = synth_dataset(1, 16, 0.05, seed=3)  # 5 beats total
        samples = generate_attack_set(ds, Offset(), 20, seed=6)
        assert len(samples) == 20


class TestSerialization:
    def test_spec_round_trip(self):
        specs = [
            Offset(scale=0.3, noise=NoiseMoveParams(mu=0.1, sigma=0.2, dt=0.5, seed=9)),
            Drift(direction="decreasing", scale=0.1),
            Lag(direction="backward", max_fraction=0.25),
            Fgsm(alpha=0.05),
        ]
        for spec in specs:
            assert spec_from_dict(spec_to_dict(spec)) == spec

    def test_attack_set_file_round_trip(self, tmp_path):
        ds = synth_dataset(3, 16, 0.05, seed=4)
        samples = generate_attack_set(ds, Lag(), 7, seed=8)
        path = tmp_path / "attacks.jsonl"
        write_attack_set(samples, path)
        back = read_attack_set(path)
        assert len(back) == 7
        for a, b in zip(samples, back):
            np.testing.assert_array_equal(a.original, b.original)
            np.testing.assert_array_equal(a.attacked, b.attacked)
            assert a.spec == b.spec
            assert a.seed == b.seed and a.label == b.label
            assert a.realized_magnitude == b.realized_magnitude

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": 0}\n')
        with pytest.raises(DataError, match=":1:"):
            read_attack_set(path)


class TestApplyAttackDispatch:
    def test_fgsm_requires_model_and_label(self):
        with pytest.raises(ValueError):
            apply_attack(np.zeros(8), Fgsm(alpha=0.01))

    def test_sample_shape_invariant(self):
        with pytest.raises(ValueError):
            AttackedSample(
                original=np.zeros(8), attacked=np.zeros(9), spec=Offset(), realized_magnitude=0.0
            )
