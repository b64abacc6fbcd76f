import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from .exceptions import InvalidArgument

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
ZERO_CROSSINGS = 32
KAISER_BETA = 8.0
SPECTRUM_KINDS = ('complex', 'magnitude', 'log-magnitude')
LOG_FLOOR = 1e-7


def ms_to_samples(ms, sample_rate=SAMPLE_RATE):
    n = ms * sample_rate / 1000.0
    if abs(n - round(n)) > 1e-9:
        raise InvalidArgument(f'{ms} ms is not a whole number of samples at {sample_rate} Hz')
    return int(round(n))


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono waveform with a fixed sample rate; samples are copied and made read-only."""
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidArgument(f'audio must be mono, got array of shape {samples.shape}')
        if not np.all(np.isfinite(samples)):
            raise InvalidArgument('audio contains NaN or Inf samples')
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate

    def require_rate(self, rate=SAMPLE_RATE):
        if self.sample_rate != rate:
            raise InvalidArgument(f'expected {rate} Hz audio, got {self.sample_rate} Hz')
        return self


@dataclass(frozen=True)
class StftConfig:
    fft_ms: float
    hop_ms: float
    win_ms: float
    center_pad: bool = True
    periodic: bool = False

    def __post_init__(self):
        if self.hop_ms <= 0:
            raise InvalidArgument(f'hop must be positive, got {self.hop_ms} ms')
        if self.win_ms > self.fft_ms:
            raise InvalidArgument(f'window {self.win_ms} ms longer than FFT {self.fft_ms} ms')
        for ms in (self.fft_ms, self.hop_ms, self.win_ms):
            ms_to_samples(ms)

    @property
    def fft_len(self):
        return ms_to_samples(self.fft_ms)

    @property
    def hop_len(self):
        return ms_to_samples(self.hop_ms)

    @property
    def win_len(self):
        return ms_to_samples(self.win_ms)

    @property
    def bins(self):
        return self.fft_len // 2 + 1

    @property
    def label(self):
        return f'{self.fft_ms:g}ms'

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    values: np.ndarray
    kind: str
    config: StftConfig

    def __post_init__(self):
        if self.kind not in SPECTRUM_KINDS:
            raise InvalidArgument(f'unknown spectrogram kind {self.kind!r}')
        if self.values.shape[-1] != self.config.bins:
            raise InvalidArgument(
                f'{self.values.shape[-1]} bins does not match fft length {self.config.fft_len}')
        if self.kind == 'magnitude' and np.any(self.values < 0):
            raise InvalidArgument('magnitude spectrogram with negative values')

    @property
    def frames(self):
        return self.values.shape[0]


RESOLUTION_PRESETS = {
    'conventional': (
        StftConfig(32, 3.125, 15),
        StftConfig(64, 7.5, 37.5),
        StftConfig(128, 15, 75),
    ),
    'stationary': (
        StftConfig(8, 0.75, 3.75),
        StftConfig(16, 1.5625, 7.5),
        StftConfig(32, 3.125, 15),
    ),
    'single-32ms': (
        StftConfig(32, 3.125, 15),
    ),
    'encoder': (
        StftConfig(8, 4, 8),
        StftConfig(16, 8, 16),
        StftConfig(32, 16, 32),
    ),
    'encoder-nonstationary': (
        StftConfig(32, 16, 32),
        StftConfig(64, 32, 64),
        StftConfig(128, 64, 128),
    ),
}


def resolve_resolutions(value):
    """Accept a preset name or a list of StftConfig / dicts."""
    if isinstance(value, str):
        if value not in RESOLUTION_PRESETS:
            raise InvalidArgument(
                f'unknown resolution preset {value!r}, expected one of {sorted(RESOLUTION_PRESETS)}')
        return RESOLUTION_PRESETS[value]
    return tuple(v if isinstance(v, StftConfig) else StftConfig.from_dict(v) for v in value)


def hann_window(length, periodic=False):
    if length < 1:
        raise InvalidArgument(f'window length must be at least 1, got {length}')
    return signal.windows.hann(length, sym=not periodic).astype(np.float64)


def frame_count(length, cfg):
    padded = length + 2 * (cfg.win_len // 2) if cfg.center_pad else length
    if padded < cfg.win_len:
        return 0
    return (padded - cfg.win_len) // cfg.hop_len + 1


def pad_signal(x, cfg):
    if not cfg.center_pad:
        return x
    pad = cfg.win_len // 2
    if x.shape[-1] <= pad:
        raise InvalidArgument(
            f'{x.shape[-1]} samples too short to reflect-pad {pad} samples for {cfg.label}')
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    return np.pad(x, widths, mode='reflect')


def unpad_signal_grad(grad, length, cfg):
    """Adjoint of pad_signal along the last axis."""
    if not cfg.center_pad:
        return grad
    pad = cfg.win_len // 2
    out = grad[..., pad:pad + length].copy()
    if pad:
        out[..., 1:pad + 1] += grad[..., :pad][..., ::-1]
        out[..., length - pad - 1:length - 1] += grad[..., pad + length:][..., ::-1]
    return out


def frame_signal(padded, cfg):
    return sliding_window_view(padded, cfg.win_len, axis=-1)[..., ::cfg.hop_len, :]


def stft_array(x, cfg):
    """Complex one-sided STFT of the last axis, shaped [..., frames, bins]."""
    x = np.asarray(x, dtype=np.float64)
    if frame_count(x.shape[-1], cfg) == 0:
        raise InvalidArgument(
            f'{x.shape[-1]} samples shorter than one {cfg.win_len}-sample window for {cfg.label}')
    frames = frame_signal(pad_signal(x, cfg), cfg)
    window = hann_window(cfg.win_len, cfg.periodic)
    return np.fft.rfft(frames * window, n=cfg.fft_len, axis=-1)


def stft(x, cfg):
    if len(x) == 0:
        raise InvalidArgument('cannot transform empty audio')
    return Spectrogram(stft_array(x.samples, cfg), 'complex', cfg)


def magnitude(s):
    if s.kind != 'complex':
        raise InvalidArgument(f'magnitude expects a complex spectrogram, got {s.kind}')
    return Spectrogram(np.abs(s.values), 'magnitude', s.config)


def log_magnitude(s, floor=LOG_FLOOR):
    if s.kind == 'complex':
        s = magnitude(s)
    return Spectrogram(np.log(np.maximum(s.values, floor)), 'log-magnitude', s.config)


def _parse_factor(factor):
    ratio = Fraction(factor).limit_denominator(16)
    if ratio not in (Fraction(2), Fraction(4), Fraction(1, 2), Fraction(1, 4)):
        raise InvalidArgument(f'unsupported resampling factor {factor}, expected 2, 4, 1/2 or 1/4')
    return ratio


@lru_cache(maxsize=None)
def resample_filter(ratio):
    """Kaiser-windowed sinc low-pass for an integer ratio, centred, 32 zero crossings per side."""
    taps = 2 * ZERO_CROSSINGS * ratio + 1
    h = signal.firwin(taps, 1.0 / ratio, window=('kaiser', KAISER_BETA))
    h.setflags(write=False)
    return h


def resample_lookahead(ratio):
    """Samples of future input seen by an up-then-down pair at the original rate."""
    return 2 * ZERO_CROSSINGS if ratio > 1 else 0


def upsample_array(x, ratio):
    h = ratio * resample_filter(ratio)
    centre = ZERO_CROSSINGS * ratio
    length = x.shape[-1]
    full = signal.upfirdn(h, x, up=ratio, axis=-1)
    return full[..., centre:centre + length * ratio]


def downsample_array(x, ratio):
    g = resample_filter(ratio)
    out_len = math.floor(x.shape[-1] / ratio + 0.5)
    full = signal.upfirdn(g, x, down=ratio, axis=-1)
    return full[..., ZERO_CROSSINGS:ZERO_CROSSINGS + out_len]


def sinc_resample(x, factor):
    ratio = _parse_factor(factor)
    samples = x.samples
    if ratio > 1:
        out = upsample_array(samples, int(ratio))
    else:
        out = downsample_array(samples, int(1 / ratio))
    rate = int(x.sample_rate * ratio)
    log.debug('resampled %d samples by %s to %d', len(samples), ratio, out.shape[-1])
    return AudioBuffer(out, rate)
