import numpy as np
import pytest

from noisy_ilrma.errors import DataError, UsageError
from noisy_ilrma.mixsim import (
    ArrayGeometry,
    MixtureSpec,
    Reverb,
    default_mixture_spec,
    default_noise_angles,
    diffuse_noise_signals,
    plane_wave_spectrogram,
    render_mixture,
    speech_like,
    steering_vector,
)
from noisy_ilrma.stft import StftConfig, analyze

FS = 16000


def short_spec(seed=0, n=8000, **kw):
    rng = np.random.default_rng(seed)
    target = speech_like(n, FS, rng)
    noises = diffuse_noise_signals(kw.pop("n_noise", 19), n, FS, rng)
    return MixtureSpec(target_signal=target, noise_signals=noises, **kw)


def snr_db(gt):
    return 10 * np.log10(np.sum(gt.target_image**2) / np.sum(gt.noise_image**2))


class TestGeometry:
    def test_rejects_single_mic(self):
        with pytest.raises(UsageError):
            ArrayGeometry(mic_count=1)

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(UsageError):
            ArrayGeometry(spacing=0.0)

    def test_endfire_delay(self):
        g = ArrayGeometry(mic_count=3, spacing=0.343, speed_of_sound=343.0)
        np.testing.assert_allclose(g.delays(90.0), [0.0, 1e-3, 2e-3], atol=1e-15)


class TestSteeringVector:
    def test_broadside(self):
        np.testing.assert_allclose(steering_vector(ArrayGeometry(), 0.0, 1234.0), np.ones(4))

    def test_dc(self):
        np.testing.assert_allclose(steering_vector(ArrayGeometry(), 47.0, 0.0), np.ones(4))

    def test_hand_computed_phases(self):
        # 30 degrees: sin = 1/2, so the per-element path difference is 0.025 m
        v = steering_vector(ArrayGeometry(4, 0.05), 30.0, 1000.0)
        expected = [np.exp(-2j * np.pi * 1000 * m * 0.025 / 343) for m in range(4)]
        np.testing.assert_allclose(v, expected, rtol=1e-12)
        np.testing.assert_allclose(np.abs(v), 1.0)

    def test_vectorized_over_frequency(self):
        f = np.array([0.0, 500.0, 1000.0])
        v = steering_vector(ArrayGeometry(), 20.0, f)
        assert v.shape == (3, 4)
        np.testing.assert_allclose(v[2], steering_vector(ArrayGeometry(), 20.0, 1000.0))

    def test_angle_out_of_range(self):
        with pytest.raises(UsageError):
            steering_vector(ArrayGeometry(), 91.0, 100.0)


class TestRenderMixture:
    def test_zero_db(self):
        gt = render_mixture(short_spec())
        assert abs(snr_db(gt)) < 1e-9

    @pytest.mark.parametrize("snr", [-30.0, -7.5, 0.0, 12.0, 30.0])
    def test_requested_snr(self, snr):
        gt = render_mixture(short_spec(input_snr=snr, n_noise=5))
        assert snr_db(gt) == pytest.approx(snr, abs=1e-9)

    def test_mixture_is_exact_sum(self):
        gt = render_mixture(short_spec(reverb=Reverb()))
        np.testing.assert_array_equal(gt.mixture, gt.target_image + gt.noise_image)
        assert gt.mixture.shape == (4, 8000)

    def test_single_direction_is_delayed_noise(self):
        # one-sample delay per microphone at endfire makes the delay exact
        geometry = ArrayGeometry(mic_count=3, spacing=343.0 / FS)
        rng = np.random.default_rng(3)
        target = rng.standard_normal(4000)
        noise = rng.standard_normal(4000)
        spec = MixtureSpec(target, [noise], geometry, target_angle=90.0, noise_angles=[90.0], input_snr=0.0)
        gt = render_mixture(spec)
        scale = np.linalg.norm(gt.noise_image[0]) / np.linalg.norm(noise)
        for m in range(3):
            delayed = np.concatenate([np.zeros(m), noise[: 4000 - m]])
            np.testing.assert_allclose(gt.noise_image[m], scale * delayed, atol=1e-10)
        # target and noise share the same rank-1 spatial signature
        np.testing.assert_allclose(gt.target_image[1, 1:], gt.target_image[0, :-1], atol=1e-10)

    def test_diffuse_coherence_at_4khz(self):
        gt = render_mixture(default_mixture_spec(seed=0, duration=4.0))
        cfg = StftConfig()
        spec = analyze(gt.noise_image, cfg)
        k = int(np.argmin(np.abs(cfg.bin_frequencies() - 4000.0)))
        x1, x2 = spec[k, :, 0], spec[k, :, 1]
        coherence = np.abs(np.mean(x1 * x2.conj())) / np.sqrt(np.mean(np.abs(x1) ** 2) * np.mean(np.abs(x2) ** 2))
        assert coherence < 0.5

    def test_deterministic(self):
        a = render_mixture(short_spec(seed=5, reverb=Reverb(rng_seed=2)))
        b = render_mixture(short_spec(seed=5, reverb=Reverb(rng_seed=2)))
        np.testing.assert_array_equal(a.mixture, b.mixture)

    def test_reverb_seed_changes_output(self):
        a = render_mixture(short_spec(reverb=Reverb(rng_seed=0)))
        b = render_mixture(short_spec(reverb=Reverb(rng_seed=1)))
        assert not np.allclose(a.target_image, b.target_image)

    def test_sensor_noise_is_spatially_white(self):
        quiet = render_mixture(short_spec(n_noise=1, noise_angles=[0.0]))
        noisy = render_mixture(short_spec(n_noise=1, noise_angles=[0.0], sensor_noise_db=0.0))
        # a single broadside source is identical on all mics unless sensor noise is added
        np.testing.assert_allclose(quiet.noise_image[0], quiet.noise_image[1], atol=1e-10)
        assert not np.allclose(noisy.noise_image[0], noisy.noise_image[1])
        assert abs(snr_db(noisy)) < 1e-9

    def test_trims_to_shortest(self):
        spec = short_spec()
        spec.noise_signals = [s[:5000] for s in spec.noise_signals]
        assert render_mixture(spec).mixture.shape[1] == 5000

    def test_zero_target_rejected(self):
        spec = short_spec()
        spec.target_signal = np.zeros(8000)
        with pytest.raises(DataError):
            render_mixture(spec)

    def test_length_mismatch_rejected(self):
        with pytest.raises(UsageError):
            render_mixture(short_spec(noise_angles=[0.0, 10.0]))

    def test_nonfinite_snr_rejected(self):
        with pytest.raises(UsageError):
            render_mixture(short_spec(input_snr=np.inf))


class TestSignals:
    def test_default_angles(self):
        angles = default_noise_angles()
        assert len(angles) == 19
        assert angles[0] == -90.0 and angles[-1] == 90.0
        np.testing.assert_allclose(np.diff(angles), 10.0)

    def test_speech_like_is_sparse(self):
        s = speech_like(FS * 4, FS, np.random.default_rng(0))
        frames = s[: FS * 4].reshape(-1, 400)
        energy = np.sum(frames**2, axis=1)
        # pauses between syllables leave a sizeable share of silent frames
        assert np.mean(energy < 1e-3 * energy.max()) > 0.1
        assert np.std(s) == pytest.approx(1.0)

    def test_noises_unit_variance(self):
        noises = diffuse_noise_signals(3, 10000, FS, np.random.default_rng(1))
        assert len(noises) == 3
        np.testing.assert_allclose([np.std(n) for n in noises], 1.0)

    def test_default_spec_length(self):
        spec = default_mixture_spec(seed=1)
        assert len(spec.target_signal) == int(8.8 * FS)
        assert len(spec.noise_signals) == 19


class TestPlaneWaveSpectrogram:
    def test_rank_one(self):
        cfg = StftConfig()
        rng = np.random.default_rng(0)
        s = rng.standard_normal((cfg.n_bins, 6)) + 1j * rng.standard_normal((cfg.n_bins, 6))
        x = plane_wave_spectrogram(s, ArrayGeometry(), 40.0, cfg)
        assert x.shape == (cfg.n_bins, 6, 4)
        np.testing.assert_allclose(np.linalg.matrix_rank(x[100]), 1)
        np.testing.assert_allclose(x[..., 0], s)
