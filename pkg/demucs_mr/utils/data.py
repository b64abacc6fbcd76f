"""
Synthetic speech-like corpora, SNR-controlled mixing, PCM16 WAV I/O and
seeded segment batching.
"""
import logging
import os
import queue
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
import soundfile as sf
from scipy import signal

from .dsp import SAMPLE_RATE, AudioBuffer
from .exceptions import InvalidArgument, StorageError, UnsupportedFormat
from .manifest import CorpusEntry, CorpusManifest

log = logging.getLogger(__name__)

CLEAN_KINDS = ('harmonic-vowel', 'chirp', 'file')
NOISE_KINDS = ('white', 'pink', 'filtered-babble-surrogate', 'file')
PEAK_LEVEL = 0.5
PCM_SCALE = 32768.0

# (F1, F2, F3) in Hz with bandwidths, roughly /a/, /i/, /u/, /e/, /o/
VOWEL_FORMANTS = (
    ((730, 90), (1090, 110), (2440, 170)),
    ((270, 60), (2290, 100), (3010, 120)),
    ((300, 70), (870, 100), (2240, 120)),
    ((530, 80), (1840, 110), (2480, 150)),
    ((570, 80), (840, 100), (2410, 150)),
)


@dataclass(frozen=True)
class MixSpec:
    clean_kind: str
    noise_kind: str
    snr_db: float
    duration_s: float
    seed: int
    clean_path: Optional[str] = None
    noise_path: Optional[str] = None
    f0_hz: Optional[float] = None
    drift_depth: float = 0.03

    def __post_init__(self):
        if self.clean_kind not in CLEAN_KINDS:
            raise InvalidArgument(f'unknown clean kind {self.clean_kind!r}, expected one of {CLEAN_KINDS}')
        if self.noise_kind not in NOISE_KINDS:
            raise InvalidArgument(f'unknown noise kind {self.noise_kind!r}, expected one of {NOISE_KINDS}')
        if self.duration_s < 0.5:
            raise InvalidArgument(f'duration must be at least 0.5 s, got {self.duration_s}')
        if not np.isfinite(self.snr_db):
            raise InvalidArgument('snr_db must be finite')
        if self.clean_kind == 'file' and not self.clean_path:
            raise InvalidArgument('clean kind "file" needs clean_path')
        if self.noise_kind == 'file' and not self.noise_path:
            raise InvalidArgument('noise kind "file" needs noise_path')

    @property
    def length(self):
        return int(round(self.duration_s * SAMPLE_RATE))


def _peak_normalise(x, level=PEAK_LEVEL):
    peak = np.max(np.abs(x))
    return x if peak == 0 else x * (level / peak)


def _fit_length(x, length):
    if x.shape[0] >= length:
        return x[:length]
    return np.resize(x, length)


def harmonic_vowel(length, rng, f0_hz=None, drift_depth=0.03, formants=None):
    """Harmonic series under a formant envelope, fundamental drifting slowly."""
    t = np.arange(length) / SAMPLE_RATE
    f0 = f0_hz if f0_hz is not None else rng.uniform(100.0, 220.0)
    if formants is None:
        formants = VOWEL_FORMANTS[rng.integers(len(VOWEL_FORMANTS))]
    rate, phase0 = rng.uniform(0.5, 2.0), rng.uniform(0, 2 * np.pi)
    inst_f0 = f0 * (1 + drift_depth * np.sin(2 * np.pi * rate * t + phase0))
    phase = 2 * np.pi * np.cumsum(inst_f0) / SAMPLE_RATE
    out = np.zeros(length)
    k = 1
    while k * f0 * (1 + drift_depth) < 0.45 * SAMPLE_RATE:
        freq = k * f0
        gain = 0.01 + sum(np.exp(-0.5 * ((freq - fc) / bw) ** 2) for fc, bw in formants)
        out += gain * np.cos(k * phase + rng.uniform(0, 2 * np.pi))
        k += 1
    return out


def synth_clean(spec):
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.length
    if spec.clean_kind == 'harmonic-vowel':
        x = harmonic_vowel(n, rng, spec.f0_hz, spec.drift_depth)
    elif spec.clean_kind == 'chirp':
        t = np.arange(n) / SAMPLE_RATE
        x = signal.chirp(t, f0=rng.uniform(200, 400), t1=spec.duration_s, f1=rng.uniform(2000, 4000),
                         method='logarithmic')
    else:
        x = _fit_length(wav_read(spec.clean_path).samples, n)
    return AudioBuffer(_peak_normalise(x))


def synth_noise(spec, length=None):
    rng = np.random.default_rng([spec.seed, 1])
    n = length or spec.length
    if spec.noise_kind == 'white':
        x = rng.standard_normal(n)
    elif spec.noise_kind == 'pink':
        spectrum = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n)
        spectrum[1:] /= np.sqrt(freqs[1:])
        spectrum[0] = 0
        x = np.fft.irfft(spectrum, n)
    elif spec.noise_kind == 'filtered-babble-surrogate':
        x = sum(harmonic_vowel(n, rng, drift_depth=0.08) * rng.uniform(0.5, 1.0) for _ in range(6))
        sos = signal.butter(4, [100, 4000], btype='bandpass', fs=SAMPLE_RATE, output='sos')
        x = signal.sosfilt(sos, x)
    else:
        x = _fit_length(wav_read(spec.noise_path).samples, n)
    return AudioBuffer(_peak_normalise(x))


def mix_at_snr(clean, noise, snr_db):
    """Scale ``noise`` so the mixture has ``snr_db`` over the whole signal; returns (noisy, scaled noise)."""
    c, d = clean.samples, noise.samples
    if c.shape != d.shape:
        raise InvalidArgument(f'clean has {c.shape[0]} samples, noise has {d.shape[0]}')
    p_clean, p_noise = np.mean(c ** 2), np.mean(d ** 2)
    if p_clean == 0:
        raise InvalidArgument('cannot mix at an SNR with a silent clean signal')
    if p_noise == 0:
        raise InvalidArgument('cannot mix at an SNR with silent noise')
    scale = np.sqrt(p_clean / p_noise) * np.power(10.0, -float(snr_db) / 20.0)
    scaled = d * scale
    return AudioBuffer(c + scaled, clean.sample_rate), AudioBuffer(scaled, clean.sample_rate)


def measured_snr(clean, noise):
    return float(10 * np.log10(np.mean(clean.samples ** 2) / np.mean(noise.samples ** 2)))


def wav_write(path, buf):
    ints = np.clip(np.round(buf.samples * PCM_SCALE), -32768, 32767).astype(np.int16)
    try:
        sf.write(path, ints, buf.sample_rate, format='WAV', subtype='PCM_16')
    except sf.LibsndfileError as e:
        raise StorageError(f'cannot write {path} ({e})') from None


def wav_read(path):
    try:
        info = sf.info(path)
    except (RuntimeError, sf.LibsndfileError) as e:
        raise UnsupportedFormat(f'{path}: not a readable audio file ({e})') from None
    problems = []
    if info.format != 'WAV':
        problems.append(f'container {info.format}')
    if info.subtype != 'PCM_16':
        problems.append(f'encoding {info.subtype}')
    if info.channels != 1:
        problems.append(f'{info.channels} channels')
    if info.samplerate != SAMPLE_RATE:
        problems.append(f'{info.samplerate} Hz')
    if problems:
        raise UnsupportedFormat(f'{path}: expected PCM16 mono {SAMPLE_RATE} Hz WAV, got {", ".join(problems)}')
    data, rate = sf.read(path, dtype='int16')
    return AudioBuffer(data.astype(np.float64) / PCM_SCALE, rate)


def plan_mixtures(count, seed, duration_s=1.0, snr_range=(-5.0, 15.0),
                  clean_kinds=('harmonic-vowel', 'chirp'), noise_kinds=('white', 'pink', 'filtered-babble-surrogate')):
    """Deterministic list of MixSpec drawn from (count, seed)."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        specs.append(MixSpec(
            clean_kind=clean_kinds[int(rng.integers(len(clean_kinds)))],
            noise_kind=noise_kinds[int(rng.integers(len(noise_kinds)))],
            snr_db=float(np.round(rng.uniform(*snr_range), 3)),
            duration_s=duration_s,
            seed=int(rng.integers(2 ** 31)),
        ))
    return specs


def synthesize_corpus(out_dir, specs, manifest_name='manifest.csv'):
    """Write clean/ and noisy/ WAVs plus the CSV manifest; returns the manifest path."""
    for sub in ('clean', 'noisy'):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    entries = []
    for i, spec in enumerate(specs):
        clean = synth_clean(spec)
        noisy, _ = mix_at_snr(clean, synth_noise(spec, len(clean)), spec.snr_db)
        name = f'{i:05d}.wav'
        clean_path = os.path.join(out_dir, 'clean', name)
        noisy_path = os.path.join(out_dir, 'noisy', name)
        wav_write(clean_path, clean)
        wav_write(noisy_path, noisy)
        entries.append(CorpusEntry(clean_path, noisy_path, spec.snr_db, spec.seed,
                                   spec.clean_kind, spec.noise_kind, spec.duration_s))
    path = os.path.join(out_dir, manifest_name)
    CorpusManifest.write(path, entries)
    log.info('wrote %d mixtures to %s', len(entries), out_dir)
    return path


class SegmentBatches:
    """Seeded fixed-length crops of aligned (noisy, clean) pairs.

    Step ``s`` always maps to the same batch, so training can resume anywhere.
    """

    def __init__(self, pairs, segment_s, batch, seed):
        if batch < 1:
            raise InvalidArgument(f'batch must be at least 1, got {batch}')
        self.segment = int(round(segment_s * SAMPLE_RATE))
        self.batch = batch
        self.seed = seed
        self.pairs = [(np.asarray(n, dtype=np.float64), np.asarray(c, dtype=np.float64)) for n, c in pairs]
        for noisy, clean in self.pairs:
            if noisy.shape != clean.shape:
                raise InvalidArgument(f'noisy/clean length mismatch {noisy.shape} vs {clean.shape}')
        self.eligible = [i for i, (n, _) in enumerate(self.pairs) if n.shape[0] >= self.segment]
        if not self.eligible:
            raise InvalidArgument(f'segment of {segment_s} s is longer than every file in the corpus')
        skipped = len(self.pairs) - len(self.eligible)
        if skipped:
            log.warning('%d files shorter than the %s s segment are excluded', skipped, segment_s)
        per_epoch = max(batch, len(self.eligible))
        self.batches_per_epoch = -(-per_epoch // batch)
        self._cached = (None, None)

    @classmethod
    def from_entries(cls, entries, segment_s, batch, seed):
        pairs = [(wav_read(e.noisy).samples, wav_read(e.clean).samples) for e in entries]
        return cls(pairs, segment_s, batch, seed)

    def epoch_plan(self, epoch):
        """List of (file index, crop offset), batches_per_epoch * batch long."""
        if self._cached[0] == epoch:
            return self._cached[1]
        rng = np.random.default_rng([self.seed, epoch])
        needed = self.batches_per_epoch * self.batch
        order = []
        while len(order) < needed:
            order.extend(rng.permutation(self.eligible).tolist())
        plan = []
        for index in order[:needed]:
            span = self.pairs[index][0].shape[0] - self.segment
            plan.append((index, int(rng.integers(0, span + 1))))
        self._cached = (epoch, plan)
        return plan

    def batch_at(self, step):
        epoch, k = divmod(step, self.batches_per_epoch)
        chunk = self.epoch_plan(epoch)[k * self.batch:(k + 1) * self.batch]
        noisy = np.stack([self.pairs[i][0][o:o + self.segment] for i, o in chunk])[:, None, :]
        clean = np.stack([self.pairs[i][1][o:o + self.segment] for i, o in chunk])[:, None, :]
        return noisy, clean

    def __iter__(self):
        for k in range(self.batches_per_epoch):
            yield self.batch_at(k)

    def iterate(self, start_step=0, prefetch=0):
        """Endless batches from ``start_step``; ``prefetch`` > 0 loads on a worker thread."""
        if prefetch <= 0:
            step = start_step
            while True:
                yield self.batch_at(step)
                step += 1
        buffer = queue.Queue(maxsize=prefetch)
        stop = threading.Event()

        def _worker():
            step = start_step
            while not stop.is_set():
                item = self.batch_at(step)
                while not stop.is_set():
                    try:
                        buffer.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                step += 1

        worker = threading.Thread(target=_worker, name='segment-prefetch', daemon=True)
        worker.start()
        try:
            while True:
                yield buffer.get()
        finally:
            stop.set()
            worker.join(timeout=1.0)


def segment_batches(corpus, segment_s, batch, seed):
    """Batches over a manifest path, entry list, or list of (noisy, clean) arrays."""
    if isinstance(corpus, str):
        corpus = CorpusManifest.read(corpus)
    if corpus and isinstance(corpus[0], CorpusEntry):
        return SegmentBatches.from_entries(corpus, segment_s, batch, seed)
    return SegmentBatches(corpus, segment_s, batch, seed)
