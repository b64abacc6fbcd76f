import numpy as np
import pytest
from scipy.linalg import toeplitz

from demucs_mr.utils import metrics
from demucs_mr.utils.data import harmonic_vowel
from demucs_mr.utils.dsp import SAMPLE_RATE, AudioBuffer
from demucs_mr.utils.exceptions import InvalidArgument, UndefinedMetric
from demucs_mr.utils.metrics import CompositeCoefficients, MetricReport


def syllables(seconds=2.0, seed=0):
    """Vowel carrier under a 4 Hz syllabic envelope."""
    n = int(seconds * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    carrier = harmonic_vowel(n, np.random.default_rng(seed), f0_hz=130.0)
    envelope = 0.1 + 0.9 * (0.5 - 0.5 * np.cos(2 * np.pi * 4 * t))
    x = carrier * envelope
    return 0.5 * x / np.max(np.abs(x))


def loop_segsnr(x, x_hat):
    values = []
    energies = [np.sum(x[s:s + 512] ** 2) for s in range(0, len(x) - 511, 256)]
    peak = max(energies)
    for s, energy in zip(range(0, len(x) - 511, 256), energies):
        if energy < 1e-4 * peak:
            continue
        err = np.sum((x[s:s + 512] - x_hat[s:s + 512]) ** 2)
        value = 35.0 if err == 0 else 10 * np.log10(energy / err)
        values.append(min(max(value, -10.0), 35.0))
    return np.mean(values)


class TestSegSNR:
    def test_identical(self, rng):
        x = rng.standard_normal(4000)
        assert metrics.segsnr(x, x) == 35.0

    def test_double(self, rng):
        x = rng.standard_normal(4000)
        assert metrics.segsnr(x, 2 * x) == pytest.approx(0.0, abs=1e-9)

    def test_silent_estimate(self, rng):
        x = rng.standard_normal(4000)
        assert metrics.segsnr(x, np.zeros_like(x)) == pytest.approx(0.0, abs=1e-9)

    def test_joint_scaling(self, rng):
        x, noise = rng.standard_normal(4000), rng.standard_normal(4000)
        x_hat = x + 0.3 * noise
        assert metrics.segsnr(3 * x, 3 * x_hat) == pytest.approx(metrics.segsnr(x, x_hat), abs=1e-9)

    def test_matches_frame_loop(self):
        x = syllables(1.0)
        x_hat = x + 0.05 * np.random.default_rng(1).standard_normal(x.shape)
        assert metrics.segsnr(x, x_hat) == pytest.approx(loop_segsnr(x, x_hat), abs=1e-9)

    def test_silent_reference(self):
        with pytest.raises(UndefinedMetric):
            metrics.segsnr(np.zeros(2000), np.ones(2000))

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgument):
            metrics.segsnr(np.ones(2000), np.ones(1999))


class TestLLR:
    def test_identical(self):
        x = syllables(1.0)
        assert metrics.llr(x, x) == pytest.approx(0.0, abs=1e-9)

    def test_identical_white_noise(self, rng):
        x = rng.standard_normal(8000)
        assert metrics.llr(AudioBuffer(x), AudioBuffer(x)) == pytest.approx(0.0, abs=1e-9)

    def test_first_order_closed_form(self):
        rho = 0.8
        r = rho ** np.arange(11)
        a_ref = np.zeros(11)
        a_ref[:2] = [1.0, -rho]
        a_deg = np.zeros(11)
        a_deg[0] = 1.0
        assert metrics.llr_distance(a_ref, a_deg, r) == pytest.approx(-np.log(1 - rho ** 2), rel=1e-12)

    def test_lpc_normal_equations(self, rng):
        frame = rng.standard_normal(480) * metrics.analysis_window(480)
        r, a = metrics.lpc(frame)
        np.testing.assert_allclose(toeplitz(r[:10]) @ -a[1:], r[1:], atol=1e-9)

    def test_lpc_silent_frame(self):
        assert metrics.lpc(np.zeros(480)) is None

    def test_silent_frames_counted(self, rng):
        x = rng.standard_normal(8000)
        x[:4000] = 0.0
        with pytest.warns(metrics.DemucsWarning):
            values, skipped = metrics.llr_frames(x, x)
        assert skipped > 0 and values.size > 0

    def test_analysis_window(self):
        expected = [0.5 - 0.5 * np.cos(2 * np.pi * n / 4) for n in (1, 2, 3)]
        np.testing.assert_allclose(metrics.analysis_window(3), expected)

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            metrics.llr(np.ones(100), np.ones(100))


class TestWSS:
    def test_identical(self):
        x = syllables(1.0)
        assert metrics.wss(x, x) == pytest.approx(0.0, abs=1e-9)

    def test_level_shift(self, rng):
        x = rng.standard_normal(8000)
        assert metrics.wss(x, 0.5 * x) == pytest.approx(0.0, abs=1e-9)

    def test_single_frame_by_hand(self):
        clean = np.zeros(25)
        processed = np.concatenate([np.zeros(12), np.full(13, 3.0)])
        # only band 11 differs in slope (by 3 dB); processed weights are 20/23 below the step
        expected = (43 / 46 * 9) / (12 * 43 / 46 + 12)
        assert metrics.wss_frame_distortion(clean, processed) == pytest.approx(expected, rel=1e-12)

    def test_band_count(self, rng):
        energies = metrics.band_energies_db(rng.standard_normal((2, 480)))
        assert energies.shape == (2, 25)

    def test_silent_reference(self):
        with pytest.raises(UndefinedMetric):
            metrics.wss(np.zeros(8000), np.ones(8000))


class TestSTOI:
    def test_identical(self):
        x = syllables()
        assert metrics.stoi(x, x) == pytest.approx(1.0, abs=1e-6)

    def test_scaled_copy(self):
        x = syllables()
        assert metrics.stoi(x, 2 * x) == pytest.approx(1.0, abs=1e-6)

    def test_noise_scores_low(self):
        x = syllables()
        noise = np.random.default_rng(2).standard_normal(x.shape) * 0.1
        assert metrics.stoi(x, noise) < 0.3

    def test_decreases_with_snr(self):
        x = syllables()
        noise = np.random.default_rng(3).standard_normal(x.shape)
        noise *= np.sqrt(np.mean(x ** 2) / np.mean(noise ** 2))
        scores = [metrics.stoi(x, x + noise * 10 ** (-snr / 20)) for snr in (20, 10, 0, -10)]
        assert all(a > b for a, b in zip(scores, scores[1:])), scores
        assert all(0.0 <= s <= 1.0 for s in scores)

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            metrics.stoi(np.ones(6000), np.ones(6000))


class TestComposite:
    MEASURES = {'llr': 0.5, 'pesq': 2.5, 'wss': 30.0, 'segsnr': 5.0}

    def test_intercept_only(self):
        zero = {'intercept': 3.0, 'llr': 0.0, 'pesq': 0.0, 'wss': 0.0, 'segsnr': 0.0}
        coeffs = CompositeCoefficients(csig=dict(zero), cbak=dict(zero), covl=dict(zero))
        assert metrics.composite(self.MEASURES, coeffs) == {'csig': 3.0, 'cbak': 3.0, 'covl': 3.0}

    def test_unit_weight_passes_through(self):
        def unit(term):
            return {'intercept': 0.0, 'llr': 0.0, 'pesq': 0.0, 'wss': 0.0, 'segsnr': 0.0, term: 1.0}
        coeffs = CompositeCoefficients(csig=unit('llr'), cbak=unit('segsnr'), covl=unit('pesq'))
        assert metrics.composite(self.MEASURES, coeffs) == {'csig': 0.5, 'cbak': 5.0, 'covl': 2.5}

    def test_default_coefficients(self):
        out = metrics.composite(self.MEASURES)
        assert out['csig'] == pytest.approx(3.093 - 1.029 * 0.5 + 0.603 * 2.5 - 0.009 * 30)
        assert out['cbak'] == pytest.approx(1.634 + 0.478 * 2.5 - 0.007 * 30 + 0.063 * 5)
        assert out['covl'] == pytest.approx(1.594 - 0.512 * 0.5 + 0.805 * 2.5 - 0.007 * 30)

    def test_missing_pesq(self):
        with pytest.raises(InvalidArgument):
            metrics.composite({'llr': 0.5, 'wss': 30.0, 'segsnr': 5.0})

    def test_unknown_term(self):
        with pytest.raises(InvalidArgument):
            CompositeCoefficients(csig={'intercept': 1.0, 'stoi': 2.0})


class TestEvaluate:
    def test_identical_pair(self):
        x = AudioBuffer(syllables())
        report = metrics.evaluate_pair(x, x)
        assert report.segsnr == 35.0
        assert report.llr == pytest.approx(0.0, abs=1e-9)
        assert report.wss == pytest.approx(0.0, abs=1e-9)
        assert report.stoi == pytest.approx(1.0, abs=1e-6)
        assert report.pesq is None and report.csig is None

    def test_pair_with_pesq(self):
        x = syllables()
        report = metrics.evaluate_pair(x, x, pesq=4.5)
        assert report.csig == pytest.approx(metrics.composite(report)['csig'])

    def test_threads_keep_order(self):
        clean = syllables()
        rng = np.random.default_rng(4)
        pairs = [(clean, clean + s * rng.standard_normal(clean.shape), None) for s in (0.01, 0.1, 0.3)]
        serial = metrics.evaluate_pairs(pairs, jobs=1)
        threaded = metrics.evaluate_pairs(pairs, jobs=3)
        assert [r.row() for r in serial] == [r.row() for r in threaded]

    def test_corpus_mean(self):
        a = MetricReport(segsnr=10.0, llr=0.5, wss=20.0, stoi=0.9, pesq=3.0)
        b = MetricReport(segsnr=20.0, llr=1.5, wss=40.0, stoi=0.7)
        mean = metrics.corpus_mean([a, b])
        assert (mean.segsnr, mean.llr, mean.wss, mean.stoi) == pytest.approx((15.0, 1.0, 30.0, 0.8))
        assert mean.pesq is None
