import struct

import numpy as np
import pytest
import soundfile as sf

from demucs_mr.utils import data
from demucs_mr.utils.data import MixSpec, SegmentBatches
from demucs_mr.utils.dsp import AudioBuffer, StftConfig, stft
from demucs_mr.utils.exceptions import InvalidArgument, UnsupportedFormat
from demucs_mr.utils.manifest import CorpusManifest


def riff_chunks(blob):
    assert blob[:4] == b'RIFF' and blob[8:12] == b'WAVE'
    chunks, offset = {}, 12
    while offset + 8 <= len(blob):
        name, size = blob[offset:offset + 4], struct.unpack('<I', blob[offset + 4:offset + 8])[0]
        chunks[name] = blob[offset + 8:offset + 8 + size]
        offset += 8 + size + (size & 1)
    return chunks


class TestSynthesis:
    def test_length_and_determinism(self):
        spec = MixSpec('harmonic-vowel', 'white', 5.0, 1.0, seed=3)
        a, b = data.synth_clean(spec), data.synth_clean(spec)
        assert len(a) == 16000 and np.array_equal(a.samples, b.samples)
        assert np.max(np.abs(a.samples)) == pytest.approx(data.PEAK_LEVEL)

    def test_harmonic_peaks(self):
        spec = MixSpec('harmonic-vowel', 'white', 5.0, 1.0, seed=4, f0_hz=125.0, drift_depth=0.0)
        cfg = StftConfig(128, 64, 128)
        mag = np.abs(stft(data.synth_clean(spec), cfg).values).mean(axis=0)
        bin_hz = 16000 / cfg.fft_len
        for k in range(1, 6):
            expected = int(round(k * 125.0 / bin_hz))
            window = mag[expected - 4:expected + 5]
            assert abs(int(np.argmax(window)) - 4) <= 1

    @pytest.mark.parametrize('kind', ['white', 'pink', 'filtered-babble-surrogate'])
    def test_noise_kinds(self, kind):
        spec = MixSpec('chirp', kind, 0.0, 0.5, seed=5)
        noise = data.synth_noise(spec)
        assert len(noise) == 8000 and np.all(np.isfinite(noise.samples)) and np.any(noise.samples)

    def test_seed_changes_signal(self):
        a = data.synth_noise(MixSpec('chirp', 'white', 0.0, 0.5, seed=1))
        b = data.synth_noise(MixSpec('chirp', 'white', 0.0, 0.5, seed=2))
        assert not np.array_equal(a.samples, b.samples)

    def test_file_kind_needs_path(self):
        with pytest.raises(InvalidArgument):
            MixSpec('file', 'white', 0.0, 1.0, seed=0)

    def test_file_kind(self, tmp_path):
        path = str(tmp_path / 'src.wav')
        data.wav_write(path, AudioBuffer(0.25 * np.sin(np.arange(4000) / 7.0)))
        spec = MixSpec('file', 'white', 0.0, 0.5, seed=0, clean_path=path)
        assert len(data.synth_clean(spec)) == 8000

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgument):
            MixSpec('speech', 'white', 0.0, 1.0, seed=0)

    def test_too_short(self):
        with pytest.raises(InvalidArgument):
            MixSpec('chirp', 'white', 0.0, 0.2, seed=0)


class TestMixing:
    def test_zero_db_equal_power(self, rng):
        clean, noise = AudioBuffer(rng.standard_normal(8000)), AudioBuffer(3 * rng.standard_normal(8000))
        noisy, scaled = data.mix_at_snr(clean, noise, 0.0)
        assert np.mean(scaled.samples ** 2) == pytest.approx(np.mean(clean.samples ** 2), rel=1e-12)
        np.testing.assert_allclose(noisy.samples, clean.samples + scaled.samples)

    def test_huge_snr(self, rng):
        clean = AudioBuffer(rng.standard_normal(8000))
        noisy, scaled = data.mix_at_snr(clean, AudioBuffer(rng.standard_normal(8000)), 1e9)
        assert np.all(scaled.samples == 0.0)
        assert np.array_equal(noisy.samples, clean.samples)

    def test_very_low_snr_is_finite(self, rng):
        clean = AudioBuffer(rng.standard_normal(8000))
        _, scaled = data.mix_at_snr(clean, AudioBuffer(rng.standard_normal(8000)), -60.0)
        assert data.measured_snr(clean, scaled) == pytest.approx(-60.0, abs=1e-6)

    @pytest.mark.parametrize('snr', [-5.0, 0.0, 7.3, 15.0])
    def test_measured_snr(self, snr):
        spec = MixSpec('harmonic-vowel', 'pink', snr, 1.0, seed=6)
        clean = data.synth_clean(spec)
        _, scaled = data.mix_at_snr(clean, data.synth_noise(spec), snr)
        assert data.measured_snr(clean, scaled) == pytest.approx(snr, abs=1e-6)

    def test_silent_clean(self, rng):
        with pytest.raises(InvalidArgument):
            data.mix_at_snr(AudioBuffer(np.zeros(100)), AudioBuffer(rng.standard_normal(100)), 0.0)

    def test_length_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            data.mix_at_snr(AudioBuffer(np.ones(100)), AudioBuffer(np.ones(99)), 0.0)


class TestWav:
    def test_round_trip_within_lsb(self, tmp_path, rng):
        path = str(tmp_path / 'a.wav')
        x = rng.uniform(-0.9, 0.9, 3000)
        data.wav_write(path, AudioBuffer(x))
        back = data.wav_read(path)
        assert back.sample_rate == 16000 and len(back) == 3000
        assert np.max(np.abs(back.samples - x)) <= 1 / 32768

    def test_zero_exact(self, tmp_path):
        path = str(tmp_path / 'z.wav')
        data.wav_write(path, AudioBuffer(np.zeros(100)))
        assert np.all(data.wav_read(path).samples == 0)

    def test_header(self, tmp_path):
        path = tmp_path / 'h.wav'
        data.wav_write(str(path), AudioBuffer(np.zeros(10)))
        chunks = riff_chunks(path.read_bytes())
        audio_format, channels, rate, _, _, bits = struct.unpack('<HHIIHH', chunks[b'fmt '][:16])
        assert (audio_format, channels, rate, bits) == (1, 1, 16000, 16)
        assert len(chunks[b'data']) == 20

    def test_clipping(self, tmp_path):
        path = str(tmp_path / 'c.wav')
        data.wav_write(path, AudioBuffer(np.array([2.0, -2.0])))
        np.testing.assert_array_equal(data.wav_read(path).samples, [32767 / 32768, -1.0])

    def test_rejects_stereo(self, tmp_path):
        path = str(tmp_path / 's.wav')
        sf.write(path, np.zeros((10, 2)), 16000, subtype='PCM_16')
        with pytest.raises(UnsupportedFormat):
            data.wav_read(path)

    def test_rejects_other_rate(self, tmp_path):
        path = str(tmp_path / 'r.wav')
        sf.write(path, np.zeros(10), 8000, subtype='PCM_16')
        with pytest.raises(UnsupportedFormat):
            data.wav_read(path)

    def test_rejects_float(self, tmp_path):
        path = str(tmp_path / 'f.wav')
        sf.write(path, np.zeros(10), 16000, subtype='FLOAT')
        with pytest.raises(UnsupportedFormat):
            data.wav_read(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / 'g.wav'
        path.write_bytes(b'not audio at all')
        with pytest.raises(UnsupportedFormat):
            data.wav_read(str(path))


class TestCorpus:
    def test_plan_is_deterministic(self):
        assert data.plan_mixtures(5, 11) == data.plan_mixtures(5, 11)
        assert data.plan_mixtures(5, 11) != data.plan_mixtures(5, 12)

    def test_plan_snr_range(self):
        assert all(-5.0 <= s.snr_db <= 15.0 for s in data.plan_mixtures(20, 1))

    def test_manifest_reproducible(self, tmp_path):
        specs = data.plan_mixtures(3, 9, duration_s=0.5)
        first = data.synthesize_corpus(str(tmp_path / 'a'), specs)
        second = data.synthesize_corpus(str(tmp_path / 'b'), specs)
        with open(first) as f, open(second) as g:
            assert f.read() == g.read()
        for sub in ('clean', 'noisy'):
            for i in range(3):
                name = f'{i:05d}.wav'
                assert (tmp_path / 'a' / sub / name).read_bytes() == (tmp_path / 'b' / sub / name).read_bytes()

    def test_manifest_entries(self, tmp_path):
        specs = data.plan_mixtures(2, 9, duration_s=0.5)
        entries = CorpusManifest.read(data.synthesize_corpus(str(tmp_path), specs))
        assert [e.snr_db for e in entries] == [s.snr_db for s in specs]
        assert CorpusManifest.get_missing_files(entries) == []
        assert len(data.wav_read(entries[0].noisy)) == 8000

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InvalidArgument):
            CorpusManifest.read(str(tmp_path / 'nothing.csv'))

    def test_bad_columns(self, tmp_path):
        path = tmp_path / 'm.csv'
        path.write_text('a,b\n1,2\n')
        with pytest.raises(UnsupportedFormat):
            CorpusManifest.read(str(path))


class TestBatches:
    @pytest.fixture
    def pairs(self, rng):
        return [(rng.standard_normal(n), rng.standard_normal(n)) for n in (12000, 9000, 16000)]

    def test_shapes(self, pairs):
        noisy, clean = SegmentBatches(pairs, 0.5, 2, seed=0).batch_at(0)
        assert noisy.shape == (2, 1, 8000) and clean.shape == (2, 1, 8000)

    def test_same_seed_same_batches(self, pairs):
        a, b = SegmentBatches(pairs, 0.5, 2, seed=4), SegmentBatches(pairs, 0.5, 2, seed=4)
        for step in range(5):
            for x, y in zip(a.batch_at(step), b.batch_at(step)):
                assert np.array_equal(x, y)

    def test_crops_aligned(self, pairs):
        batches = SegmentBatches(pairs, 0.5, 2, seed=1)
        noisy, clean = batches.batch_at(1)
        plan = batches.epoch_plan(0)[2:4]
        for row, (index, offset) in enumerate(plan):
            assert np.array_equal(noisy[row, 0], pairs[index][0][offset:offset + 8000])
            assert np.array_equal(clean[row, 0], pairs[index][1][offset:offset + 8000])

    def test_short_files_excluded(self, rng):
        pairs = [(rng.standard_normal(4000), rng.standard_normal(4000)),
                 (rng.standard_normal(9000), rng.standard_normal(9000))]
        batches = SegmentBatches(pairs, 0.5, 1, seed=0)
        assert all(index == 1 for index, _ in batches.epoch_plan(0))

    def test_segment_longer_than_every_file(self, pairs):
        with pytest.raises(InvalidArgument):
            SegmentBatches(pairs, 2.0, 1, seed=0)

    def test_prefetch_matches_direct(self, pairs):
        batches = SegmentBatches(pairs, 0.5, 2, seed=2)
        direct = batches.iterate(3, prefetch=0)
        threaded = batches.iterate(3, prefetch=2)
        try:
            for _ in range(6):
                for x, y in zip(next(direct), next(threaded)):
                    assert np.array_equal(x, y)
        finally:
            threaded.close()

    def test_epochs_differ(self, pairs):
        batches = SegmentBatches(pairs, 0.5, 1, seed=3)
        assert batches.epoch_plan(0) != batches.epoch_plan(1)

    def test_from_manifest(self, tmp_path):
        specs = data.plan_mixtures(2, 5, duration_s=1.0)
        batches = data.segment_batches(data.synthesize_corpus(str(tmp_path), specs), 0.5, 2, seed=0)
        noisy, clean = batches.batch_at(0)
        assert noisy.shape == (2, 1, 8000) and not np.array_equal(noisy, clean)
