import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisy_ilrma.errors import UsageError
from noisy_ilrma.evaluation import SDR_CAP, _truncated_gram, projection, sdr, sdr_improvement
from noisy_ilrma.mixsim import default_mixture_spec, render_mixture
from noisy_ilrma.stft import analyze, synthesize


def delay_matrix(reference, taps):
    """Columns r[n - k] for k = 0..taps-1, zero-filled."""
    n = len(reference)
    cols = [np.concatenate([np.zeros(k), reference[: n - k]]) for k in range(taps)]
    return np.stack(cols, axis=1)


def lstsq_sdr(estimate, reference, taps):
    basis = delay_matrix(reference, taps)
    coef = np.linalg.lstsq(basis, estimate, rcond=None)[0]
    proj = basis @ coef
    resid = estimate - proj
    return 10 * np.log10((proj @ proj) / (resid @ resid))


@pytest.fixture
def reference():
    return np.random.default_rng(0).standard_normal(4000)


class TestSdr:
    def test_scaled_copy_hits_cap(self, reference):
        assert sdr(2 * reference, reference, taps=1) == SDR_CAP

    def test_orthogonal_equal_power_noise(self, reference):
        noise = np.random.default_rng(1).standard_normal(4000)
        noise -= (noise @ reference) / (reference @ reference) * reference
        noise *= np.linalg.norm(reference) / np.linalg.norm(noise)
        assert sdr(reference + noise, reference, taps=1) == pytest.approx(0.0, abs=1e-10)

    def test_delay_within_taps_hits_cap(self, reference):
        delayed = np.concatenate([np.zeros(3), reference[:-3]])
        assert sdr(delayed, reference, taps=8) == SDR_CAP

    def test_delay_single_tap_matches_lstsq(self, reference):
        delayed = np.concatenate([np.zeros(3), reference[:-3]])
        value = sdr(delayed, reference, taps=1)
        assert value == pytest.approx(lstsq_sdr(delayed, reference, 1), abs=1e-9)
        assert value < 0

    @pytest.mark.parametrize("taps", [2, 16, 64])
    def test_matches_lstsq_oracle(self, reference, taps):
        rng = np.random.default_rng(taps)
        estimate = np.convolve(reference, rng.standard_normal(5))[:4000] + 0.3 * rng.standard_normal(4000)
        assert sdr(estimate, reference, taps) == pytest.approx(lstsq_sdr(estimate, reference, taps), abs=1e-8)

    def test_identity_hits_cap_any_taps(self, reference):
        for taps in [1, 7, 512]:
            assert sdr(reference, reference, taps) == SDR_CAP

    def test_adding_orthogonal_noise_lowers_sdr(self, reference):
        rng = np.random.default_rng(2)
        base = reference + 0.1 * rng.standard_normal(4000)
        extra = rng.standard_normal(4000)
        extra -= (extra @ reference) / (reference @ reference) * reference
        assert sdr(base + 0.5 * extra, reference, 1) <= sdr(base, reference, 1)

    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(1e-3, 1e3))
    def test_positive_scale_invariance(self, scale):
        rng = np.random.default_rng(3)
        ref = rng.standard_normal(500)
        est = ref + 0.5 * rng.standard_normal(500)
        assert sdr(scale * est, ref, 1) == pytest.approx(sdr(est, ref, 1), abs=1e-9)

    def test_zero_reference(self):
        with pytest.raises(UsageError):
            sdr(np.ones(10), np.zeros(10), 1)

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            sdr(np.ones(10), np.ones(11), 1)

    def test_bad_taps(self):
        with pytest.raises(UsageError):
            sdr(np.ones(10), np.ones(10), 0)


class TestProjectionInternals:
    def test_truncated_gram_matches_brute_force(self, reference):
        basis = delay_matrix(reference[:300], 12)
        np.testing.assert_allclose(_truncated_gram(reference[:300], 12), basis.T @ basis, atol=1e-10)

    def test_projection_matches_lstsq(self, reference):
        est = np.random.default_rng(4).standard_normal(4000)
        basis = delay_matrix(reference, 10)
        expected = basis @ np.linalg.lstsq(basis, est, rcond=None)[0]
        np.testing.assert_allclose(projection(est, reference, 10), expected, atol=1e-9)


class TestSdrImprovement:
    def test_identity_is_zero(self, reference):
        mix = reference + np.random.default_rng(5).standard_normal(4000)
        report = sdr_improvement(mix, mix, reference)
        assert report.sdr_improvement == 0.0
        assert report.projection_taps == 512

    def test_perfect_extraction(self, reference):
        mix = reference + np.random.default_rng(6).standard_normal(4000)
        report = sdr_improvement(reference, mix, reference)
        assert report.sdr_out == SDR_CAP
        assert report.sdr_improvement == SDR_CAP - report.sdr_in

    def test_difference_is_exact(self, reference):
        rng = np.random.default_rng(7)
        report = sdr_improvement(reference + rng.standard_normal(4000), reference + 2 * rng.standard_normal(4000), reference, 4)
        assert report.sdr_improvement == report.sdr_out - report.sdr_in

    def test_oracle_mask_improves(self):
        gt = render_mixture(default_mixture_spec(seed=0, duration=3.0))
        t, n = analyze(gt.target_image[:1]), analyze(gt.noise_image[:1])
        mask = np.abs(t) ** 2 / (np.abs(t) ** 2 + np.abs(n) ** 2 + 1e-20)
        estimate = synthesize(mask * analyze(gt.mixture[:1]), length=gt.mixture.shape[1])[0]
        report = sdr_improvement(estimate, gt.mixture[0], gt.target_image[0])
        assert report.sdr_in == pytest.approx(0.0, abs=0.5)
        assert report.sdr_improvement > 0
