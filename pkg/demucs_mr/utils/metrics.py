"""
Objective speech-quality measures: segmental SNR, LPC log-likelihood ratio,
weighted spectral slope, STOI and the composite CSIG/CBAK/COVL predictors.

Default composite coefficients are external: they come from the Hu & Loizou
(2008) regression of objective measures against listening-test ratings.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from pystoi import stoi as _pystoi
from scipy.linalg import LinAlgError, solve_toeplitz

from .dsp import SAMPLE_RATE, AudioBuffer
from .exceptions import DemucsWarning, InvalidArgument, UndefinedMetric

log = logging.getLogger(__name__)

SEGSNR_FRAME = 512
SEGSNR_HOP = 256
SEGSNR_RANGE = (-10.0, 35.0)
SILENCE_RATIO = 1e-4

FRAME_MS = 30
LPC_ORDER = 10
TRIM_FRACTION = 0.95

WSS_KMAX = 20.0
WSS_KLOCMAX = 1.0
WSS_CENT_FREQ = np.array([
    50.0000, 120.000, 190.000, 260.000, 330.000, 400.000, 470.000, 540.000, 617.372,
    703.378, 798.717, 904.128, 1020.38, 1148.30, 1288.72, 1442.54, 1610.70, 1794.16,
    1993.93, 2211.08, 2446.71, 2701.97, 2978.04, 3276.17, 3597.63,
])
WSS_BANDWIDTH = np.array([
    70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 70.0000, 77.3724, 86.0056,
    95.3398, 105.411, 116.256, 127.914, 140.423, 153.823, 168.154, 183.457, 199.776,
    217.153, 235.631, 255.255, 276.072, 298.126, 321.465, 346.136,
])

STOI_MIN_SAMPLES = 6144
REPORT_COLUMNS = ('ref', 'deg', 'segsnr', 'llr', 'wss', 'stoi', 'pesq', 'csig', 'cbak', 'covl')


@dataclass
class CompositeCoefficients:
    """Per-measure intercept plus weights over llr, pesq, wss and segsnr."""
    csig: Dict[str, float] = field(default_factory=lambda: {
        'intercept': 3.093, 'llr': -1.029, 'pesq': 0.603, 'wss': -0.009, 'segsnr': 0.0})
    cbak: Dict[str, float] = field(default_factory=lambda: {
        'intercept': 1.634, 'llr': 0.0, 'pesq': 0.478, 'wss': -0.007, 'segsnr': 0.063})
    covl: Dict[str, float] = field(default_factory=lambda: {
        'intercept': 1.594, 'llr': -0.512, 'pesq': 0.805, 'wss': -0.007, 'segsnr': 0.0})

    def __post_init__(self):
        for name in ('csig', 'cbak', 'covl'):
            weights = getattr(self, name)
            unknown = set(weights) - {'intercept', 'llr', 'pesq', 'wss', 'segsnr'}
            if unknown:
                raise InvalidArgument(f'{name}: unknown composite terms {sorted(unknown)}')
            if not all(np.isfinite(float(v)) for v in weights.values()):
                raise InvalidArgument(f'{name}: composite coefficients must be finite')

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class MetricReport:
    segsnr: float
    llr: float
    wss: float
    stoi: float
    pesq: Optional[float] = None
    csig: Optional[float] = None
    cbak: Optional[float] = None
    covl: Optional[float] = None
    llr_skipped: int = 0

    def row(self, ref='', deg=''):
        values = asdict(self)
        return [ref, deg] + [values[c] for c in REPORT_COLUMNS[2:]]


def _pair(x, x_hat, name):
    x = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)
    x_hat = x_hat.samples if isinstance(x_hat, AudioBuffer) else np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise InvalidArgument(f'{name}: reference has {x.shape} samples, processed has {x_hat.shape}')
    return x, x_hat


def _frames(x, length, hop):
    if x.shape[-1] < length:
        return x[None, :]
    return sliding_window_view(x, length)[::hop]


def segsnr(x, x_hat):
    x, x_hat = _pair(x, x_hat, 'segsnr')
    clean = _frames(x, SEGSNR_FRAME, SEGSNR_HOP)
    error = _frames(x - x_hat, SEGSNR_FRAME, SEGSNR_HOP)
    signal_energy = np.sum(clean ** 2, axis=-1)
    error_energy = np.sum(error ** 2, axis=-1)
    peak = signal_energy.max(initial=0.0)
    if peak <= 0:
        raise UndefinedMetric('segsnr: reference is silent in every frame')
    voiced = signal_energy >= SILENCE_RATIO * peak
    lo, hi = SEGSNR_RANGE
    with np.errstate(divide='ignore'):
        snr = np.where(error_energy[voiced] > 0,
                       10 * np.log10(signal_energy[voiced] / np.maximum(error_energy[voiced], 1e-300)), hi)
    return float(np.mean(np.clip(snr, lo, hi)))


def analysis_window(length):
    """Raised cosine 0.5 * (1 - cos(2 pi n / (N + 1))), n = 1..N."""
    n = np.arange(1, length + 1)
    return 0.5 * (1 - np.cos(2 * np.pi * n / (length + 1)))


def _analysis_frames(x, sample_rate):
    length = int(round(FRAME_MS * sample_rate / 1000))
    skip = length // 4
    count = x.shape[-1] // skip - length // skip
    if count <= 0:
        raise InvalidArgument(f'{x.shape[-1]} samples shorter than one {FRAME_MS} ms analysis frame')
    starts = np.arange(count) * skip
    return sliding_window_view(x, length)[starts] * analysis_window(length)


def autocorrelation(frame, order):
    return np.array([np.dot(frame[:frame.size - k], frame[k:]) for k in range(order + 1)])


def lpc(frame, order=LPC_ORDER):
    """Autocorrelation-method LPC; returns (r, [1, -a1, ..., -ap]) or None when the frame is degenerate."""
    r = autocorrelation(frame, order)
    if r[0] <= 1e-20:
        return None
    try:
        a = solve_toeplitz(r[:order], r[1:order + 1])
    except LinAlgError:
        return None
    if not np.all(np.isfinite(a)):
        return None
    return r, np.concatenate([[1.0], -a])


def llr_distance(a_ref, a_deg, r_ref):
    """log(a_deg R a_deg^T / a_ref R a_ref^T) with R the reference Toeplitz autocorrelation."""
    order = len(a_ref) - 1
    idx = np.abs(np.arange(order + 1)[:, None] - np.arange(order + 1)[None, :])
    R = np.asarray(r_ref)[idx]
    return float(np.log((a_deg @ R @ a_deg) / (a_ref @ R @ a_ref)))


def llr_frames(x, x_hat, sample_rate=SAMPLE_RATE):
    """Per-frame LLR values and the number of frames skipped as silent or unstable."""
    x, x_hat = _pair(x, x_hat, 'llr')
    values, skipped = [], 0
    for clean, processed in zip(_analysis_frames(x, sample_rate), _analysis_frames(x_hat, sample_rate)):
        ref, deg = lpc(clean), lpc(processed)
        if ref is None or deg is None:
            skipped += 1
            continue
        with np.errstate(divide='ignore', invalid='ignore'):
            value = llr_distance(ref[1], deg[1], ref[0])
        if not np.isfinite(value):
            skipped += 1
            continue
        values.append(value)
    if skipped:
        warnings.warn(f'llr skipped {skipped} silent or unstable LPC frames', DemucsWarning)
    return np.array(values), skipped


def _trimmed_mean(values):
    if values.size == 0:
        raise UndefinedMetric('no usable analysis frames')
    keep = max(1, int(round(values.size * TRIM_FRACTION)))
    return float(np.mean(np.sort(values)[:keep]))


def llr(x, x_hat, sample_rate=SAMPLE_RATE):
    values, _ = llr_frames(x, x_hat, sample_rate)
    return _trimmed_mean(values)


def _critical_bands(n_fft, sample_rate):
    half = n_fft // 2
    max_freq = sample_rate / 2
    min_factor = np.exp(-30.0 / (2.0 * 2.303))
    bins = np.arange(half)
    bank = np.zeros((WSS_CENT_FREQ.size, half))
    for i, (centre, width) in enumerate(zip(WSS_CENT_FREQ, WSS_BANDWIDTH)):
        f0 = centre / max_freq * half
        bw = width / max_freq * half
        norm = np.log(WSS_BANDWIDTH[0]) - np.log(width)
        row = np.exp(-11 * ((bins - np.floor(f0)) / bw) ** 2 + norm)
        bank[i] = row * (row > min_factor)
    return bank


def _local_peaks(energy, slope):
    bands = energy.size
    peaks = np.zeros(bands - 1)
    for i in range(bands - 1):
        n = i
        if slope[i] > 0:
            while n < bands - 1 and slope[n] > 0:
                n += 1
            peaks[i] = energy[n - 1]
        else:
            while n >= 0 and slope[n] <= 0:
                n -= 1
            peaks[i] = energy[n + 1]
    return peaks


def wss_frame_distortion(clean_db, processed_db):
    """Weighted slope distance between two critical-band energy vectors in dB."""
    clean_db = np.asarray(clean_db, dtype=np.float64)
    processed_db = np.asarray(processed_db, dtype=np.float64)
    weights = []
    slopes = []
    for energy in (clean_db, processed_db):
        slope = np.diff(energy)
        peaks = _local_peaks(energy, slope)
        w_max = WSS_KMAX / (WSS_KMAX + energy.max() - energy[:-1])
        w_loc = WSS_KLOCMAX / (WSS_KLOCMAX + peaks - energy[:-1])
        weights.append(w_max * w_loc)
        slopes.append(slope)
    w = (weights[0] + weights[1]) / 2
    return float(np.sum(w * (slopes[0] - slopes[1]) ** 2) / np.sum(w))


def band_energies_db(frames, sample_rate=SAMPLE_RATE):
    length = frames.shape[-1]
    n_fft = 2 ** int(np.ceil(np.log2(2 * length)))
    bank = _critical_bands(n_fft, sample_rate)
    spectrum = np.abs(np.fft.fft(frames, n_fft, axis=-1)) ** 2
    energy = spectrum[..., :n_fft // 2] @ bank.T
    return 10 * np.log10(np.maximum(energy, 1e-10))


def wss(x, x_hat, sample_rate=SAMPLE_RATE):
    x, x_hat = _pair(x, x_hat, 'wss')
    if not np.any(x):
        raise UndefinedMetric('wss: reference is silent')
    clean = band_energies_db(_analysis_frames(x, sample_rate), sample_rate)
    processed = band_energies_db(_analysis_frames(x_hat, sample_rate), sample_rate)
    values = np.array([wss_frame_distortion(c, p) for c, p in zip(clean, processed)])
    return _trimmed_mean(values)


def stoi(x, x_hat, sample_rate=SAMPLE_RATE):
    x, x_hat = _pair(x, x_hat, 'stoi')
    if x.shape[-1] < STOI_MIN_SAMPLES:
        raise InvalidArgument(f'stoi needs at least {STOI_MIN_SAMPLES} samples (384 ms), got {x.shape[-1]}')
    return float(np.clip(_pystoi(x, x_hat, sample_rate, extended=False), 0.0, 1.0))


def composite(measures, coeffs=None):
    """Affine composite predictors; ``measures`` maps llr/pesq/wss/segsnr to values."""
    coeffs = coeffs or CompositeCoefficients()
    if not isinstance(measures, dict):
        measures = asdict(measures)
    out = {}
    for name in ('csig', 'cbak', 'covl'):
        weights = coeffs.to_dict()[name]
        value = float(weights.get('intercept', 0.0))
        for term, weight in weights.items():
            if term == 'intercept' or weight == 0:
                continue
            if measures.get(term) is None:
                raise InvalidArgument(f'{name} needs a {term} value, none was supplied')
            value += weight * float(measures[term])
        out[name] = value
    return out


def evaluate_pair(x, x_hat, pesq=None, coeffs=None, sample_rate=SAMPLE_RATE):
    values, skipped = llr_frames(x, x_hat, sample_rate)
    report = MetricReport(
        segsnr=segsnr(x, x_hat),
        llr=_trimmed_mean(values),
        wss=wss(x, x_hat, sample_rate),
        stoi=stoi(x, x_hat, sample_rate),
        pesq=pesq,
        llr_skipped=skipped,
    )
    if pesq is not None:
        for name, value in composite(report, coeffs).items():
            setattr(report, name, value)
    return report


def evaluate_pairs(pairs, coeffs=None, jobs=1):
    """``pairs`` yields (clean, processed, pesq); results keep input order."""
    pairs = list(pairs)

    def _one(item):
        clean, processed, pesq = item
        return evaluate_pair(clean, processed, pesq, coeffs)

    if jobs <= 1:
        return [_one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_one, pairs))


def corpus_mean(reports):
    """Column means; optional columns stay None unless every row has them."""
    columns = REPORT_COLUMNS[2:]
    mean = {}
    for column in columns:
        values = [getattr(r, column) for r in reports]
        mean[column] = None if any(v is None for v in values) or not values else float(np.mean(values))
    return MetricReport(**mean, llr_skipped=sum(r.llr_skipped for r in reports))
