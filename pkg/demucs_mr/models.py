"""
DEMUCS U-Net with the optional multi-resolution encoder (MRE) frequency
branches and multi-resolution decoder (MRD) heads.

Layout of one forward pass (L = resample factor, S = stride):

    y -> [normalise] -> pad -> sinc up x L -> encoder x 5 -> LSTM x 2
      -> decoder x 4 -> last decoder layer (or 3 heads) -> sinc down x L -> trim
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np

from .utils import autograd as ag
from .utils import dsp, nn
from .utils.aligners import get_aligner
from .utils.autograd import Tensor
from .utils.dsp import AudioBuffer, StftConfig, resolve_resolutions
from .utils.exceptions import InvalidArgument, ShapeError, UnsupportedFormat, VersionError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
NORM_FLOOR = 1e-3


@dataclass
class ModelConfig:
    depth: int = 5
    base_channels: int = 16
    kernel: int = 8
    stride: int = 4
    lstm_hidden: Optional[int] = None
    lstm_layers: int = 2
    resample_factor: int = 4
    mre_enabled: bool = False
    mre_resolutions: Tuple[StftConfig, ...] = 'encoder'
    freq_channels: Tuple[int, ...] = (8, 16, 32, 64, 128)
    mrd_enabled: bool = False
    mrd_head_resolutions: Tuple[StftConfig, ...] = 'conventional'
    causal: bool = True
    aligner: str = 'auto'

    def __post_init__(self):
        self.mre_resolutions = resolve_resolutions(self.mre_resolutions)
        self.mrd_head_resolutions = resolve_resolutions(self.mrd_head_resolutions)
        self.freq_channels = tuple(int(c) for c in self.freq_channels)
        if self.lstm_hidden is None:
            self.lstm_hidden = self.channels(self.depth - 1)
        if self.depth != 5:
            raise InvalidArgument(f'depth is fixed at 5 encoder/decoder layers, got {self.depth}')
        if self.resample_factor not in (1, 2, 4):
            raise InvalidArgument(f'resample_factor must be 1, 2 or 4, got {self.resample_factor}')
        if self.kernel < self.stride:
            raise InvalidArgument(f'kernel {self.kernel} shorter than stride {self.stride}')
        if self.mre_enabled and len(self.mre_resolutions) != 3:
            raise InvalidArgument(f'MRE needs exactly 3 resolutions, got {len(self.mre_resolutions)}')
        if self.mrd_enabled and len(self.mrd_head_resolutions) != 3:
            raise InvalidArgument(f'MRD needs exactly 3 head resolutions, got {len(self.mrd_head_resolutions)}')
        if len(self.freq_channels) != self.depth:
            raise InvalidArgument(f'freq_channels needs {self.depth} entries, got {len(self.freq_channels)}')

    def channels(self, index):
        return self.base_channels * 2 ** index

    def frontend_resolutions(self):
        """Encoder-input presets; causal models use non-centred frames."""
        if self.causal:
            return tuple(replace(r, center_pad=False) for r in self.mre_resolutions)
        return self.mre_resolutions

    def to_dict(self):
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data['mre_resolutions'] = [r.to_dict() for r in self.mre_resolutions]
        data['mrd_head_resolutions'] = [r.to_dict() for r in self.mrd_head_resolutions]
        data['freq_channels'] = list(self.freq_channels)
        return data

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f'unknown model config keys {sorted(unknown)}')
        return cls(**data)


@dataclass
class EncoderState:
    time_act: Tensor
    freq_acts: List[Tensor] = field(default_factory=list)
    freq_ie: List[Tensor] = field(default_factory=list)
    skip: Optional[Tensor] = None


@dataclass
class DecoderState:
    act: Tensor
    heads: List[Tensor] = field(default_factory=list)


@dataclass
class ModelOutput:
    """``average`` is the estimate; ``heads`` is empty unless MRD is on."""
    average: Tensor
    heads: List[Tensor] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)


class EncoderLayer(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, out_ch, kernel, stride, causal=True)
        self.conv2 = nn.Conv1d(out_ch, 2 * out_ch, 1, causal=True)

    def forward(self, h):
        return nn.glu(self.conv2(nn.relu(self.conv1(h))), axis=1)


class DecoderLayer(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, stride):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, 2 * in_ch, 1, causal=True)
        self.conv_tr = nn.ConvTranspose1d(in_ch, out_ch, kernel, stride, trim=True)

    def forward(self, d, is_last):
        out = self.conv_tr(nn.glu(self.conv1(d), axis=1))
        return out if is_last else nn.relu(out)


class ConvBlock2d(nn.Module):
    """ELU(BatchNorm2d(Conv2d(x))) with 3x3 kernels."""

    def __init__(self, in_ch, out_ch, stride, causal):
        super().__init__()
        frame_pad = (2, 0) if causal else (1, 1)
        self.conv = nn.Conv2d(in_ch, out_ch, (3, 3), stride, ((1, 1), frame_pad))
        self.norm = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        return nn.elu(self.norm(self.conv(x)))


class FreqLayer(nn.Module):
    def __init__(self, in_ch, out_ch, causal):
        super().__init__()
        self.block = ConvBlock2d(in_ch, out_ch, (2, 1), causal)
        self.extract1 = ConvBlock2d(out_ch, out_ch, (1, 1), causal)
        self.extract2 = ConvBlock2d(out_ch, out_ch, (1, 1), causal)

    def forward(self, x):
        out = self.block(x)
        return out, self.extract2(self.extract1(out))


class Fusion(nn.Module):
    def __init__(self, channels, freq_features):
        super().__init__()
        self.time_proj = nn.ModuleList(nn.Linear(channels, channels) for _ in freq_features)
        self.freq_proj = nn.ModuleList(nn.Linear(n, channels, bias=False) for n in freq_features)
        self.hidden = nn.Linear(channels, channels)
        self.out = nn.Linear(channels, channels)


def _conv_out(n, kernel=3, stride=2, pad=2):
    return (n + pad - kernel) // stride + 1


def spectrogram_frontend(y, presets):
    """Magnitude spectrograms of ``y`` as [batch, 1, bins, frames] tensors, one per preset."""
    if isinstance(y, AudioBuffer):
        y = y.require_rate().samples
    y = ag.as_tensor(y)
    if y.size == 0:
        raise InvalidArgument('cannot build spectrograms of empty audio')
    if y.ndim == 1:
        y = y.reshape((1, 1, -1))
    elif y.ndim == 2:
        y = y.reshape((y.shape[0], 1, y.shape[1]))
    return [ag.transpose(ag.stft_magnitude(y, cfg), (0, 1, 3, 2)) for cfg in presets]


class Demucs(nn.Module):
    def __init__(self, cfg: ModelConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        self.seed = seed
        depth, K, S = cfg.depth, cfg.kernel, cfg.stride
        self.encoder = nn.ModuleList(
            EncoderLayer(1 if i == 0 else cfg.channels(i - 1), cfg.channels(i), K, S) for i in range(depth))
        self.lstm = nn.LSTM(cfg.channels(depth - 1), cfg.lstm_hidden, cfg.lstm_layers)
        if cfg.lstm_hidden != cfg.channels(depth - 1):
            raise InvalidArgument(
                f'lstm_hidden {cfg.lstm_hidden} must equal the deepest channel count {cfg.channels(depth - 1)}')
        self.decoder = nn.ModuleList()
        for j in range(depth if not cfg.mrd_enabled else depth - 1):
            i = depth - 1 - j
            self.decoder.append(DecoderLayer(cfg.channels(i), 1 if i == 0 else cfg.channels(i - 1), K, S))
        if cfg.mrd_enabled:
            self.heads = nn.ModuleList(DecoderLayer(cfg.channels(0), 1, K, S) for _ in range(3))
        if cfg.mre_enabled:
            self.aligner = get_aligner(cfg.aligner, cfg.causal)
            ok, msg = self.aligner.check_availability(cfg)
            if not ok:
                raise InvalidArgument(msg)
            self.freq = nn.ModuleList()
            self.fusion = nn.ModuleList()
            bins = [[r.bins] for r in cfg.frontend_resolutions()]
            for per_res in bins:
                for _ in range(depth):
                    per_res.append(_conv_out(per_res[-1]))
            for res_bins in bins:
                self.freq.append(nn.ModuleList(
                    FreqLayer(1 if i == 0 else cfg.freq_channels[i - 1], cfg.freq_channels[i], cfg.causal)
                    for i in range(depth)))
            for i in range(depth):
                self.fusion.append(Fusion(
                    cfg.channels(i), [cfg.freq_channels[i] * res_bins[i + 1] for res_bins in bins]))
        nn.initialize(self, seed)
        self._up_filter = None
        self._down_filter = None
        if cfg.resample_factor > 1:
            L = cfg.resample_factor
            h = dsp.resample_filter(L)
            self._up_filter = Tensor._wrap((L * h)[None, None, :])
            self._down_filter = Tensor._wrap(np.array(h)[None, None, :])

    @property
    def variant(self):
        from .variants import variant_for
        return variant_for(self.cfg.mre_enabled, self.cfg.mrd_enabled).id

    @property
    def lookahead(self):
        """Future input samples each output sample may depend on when causal."""
        return dsp.resample_lookahead(self.cfg.resample_factor)

    def min_length(self):
        if self.cfg.mre_enabled:
            return max(r.win_len for r in self.cfg.frontend_resolutions())
        return 1

    def valid_length(self, length):
        total = self.cfg.stride ** self.cfg.depth
        multiple = total // math.gcd(total, self.cfg.resample_factor)
        return -(-length // multiple) * multiple

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def head_labels(self):
        if not self.cfg.mrd_enabled:
            return []
        return [r.label for r in self.cfg.mrd_head_resolutions]

    def _upsample(self, x):
        L = self.cfg.resample_factor
        batch, ch, length = x.shape
        stuffed = ag.pad(x.reshape((batch, ch, length, 1)), ((0, 0), (0, 0), (0, 0), (0, L - 1)))
        centre = dsp.ZERO_CROSSINGS * L
        return ag.conv1d(stuffed.reshape((batch, ch, length * L)), self._up_filter, None, 1, (centre, centre))

    def _downsample(self, x):
        L = self.cfg.resample_factor
        centre = dsp.ZERO_CROSSINGS * L
        return ag.conv1d(x, self._down_filter, None, L, (centre, centre))

    def encoder_layer_time(self, index, h):
        if h.ndim != 3:
            raise ShapeError(f'encoder layer {index}: expected [batch, ch, time], got {h.shape}')
        return self.encoder[index](h)

    def encoder_layer_freq(self, res_index, index, H):
        if H.ndim != 4:
            raise ShapeError(f'frequency layer {index}: expected [batch, ch, freq, frames], got {H.shape}')
        return self.freq[res_index][index](H)

    def fuse(self, index, h_hat, freq_ie):
        """f_hat = Linear(ReLU(Linear(h_hat + sum_B f_B))), f_B = Linear(Concat(h_hat, align(H_IE_B)))."""
        fusion = self.fusion[index]
        steps = h_hat.shape[-1]
        span = Fraction(self.cfg.stride ** (index + 1), self.cfg.resample_factor)
        time_feat = ag.transpose(h_hat, (0, 2, 1))
        total = time_feat
        for b, (ie, res) in enumerate(zip(freq_ie, self.cfg.frontend_resolutions())):
            batch, ch, bins, frames = ie.shape
            flat = ag.transpose(ie, (0, 3, 1, 2)).reshape((batch, frames, ch * bins))
            try:
                aligned = self.aligner.align(fusion.freq_proj[b](flat), steps, span, res)
            except ShapeError as e:
                raise ShapeError(f'encoder layer {index}, resolution {res.label}: {e.message}') from None
            total = total + fusion.time_proj[b](time_feat) + aligned
        fused = fusion.out(nn.relu(fusion.hidden(total)))
        return ag.transpose(fused, (0, 2, 1))

    def decoder_layer(self, layer, d, skip, is_last):
        if d.shape != skip.shape:
            raise ShapeError(f'decoder input {d.shape} does not match skip {skip.shape}')
        return layer(d + skip, is_last)

    def _as_batch(self, y):
        if isinstance(y, AudioBuffer):
            y = y.require_rate().samples
        x = ag.as_tensor(y)
        if x.ndim == 1:
            x = x.reshape((1, 1, x.shape[0]))
        elif x.ndim == 2:
            x = x.reshape((x.shape[0], 1, x.shape[1]))
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f'expected mono audio shaped [time], [batch, time] or [batch, 1, time], got {x.shape}')
        return x

    def encode(self, x, spectrograms):
        states = []
        freq = spectrograms
        h = x
        for i in range(self.cfg.depth):
            h_hat = self.encoder_layer_time(i, h)
            state = EncoderState(time_act=h_hat, skip=h_hat)
            if self.cfg.mre_enabled:
                outs = [self.encoder_layer_freq(b, i, H) for b, H in enumerate(freq)]
                state.freq_acts = [o[0] for o in outs]
                state.freq_ie = [o[1] for o in outs]
                state.skip = self.fuse(i, h_hat, state.freq_ie)
                freq = state.freq_acts
            states.append(state)
            h = state.skip
        return states

    def decode(self, h, states):
        d = h
        last = len(self.decoder) - 1
        for j, layer in enumerate(self.decoder):
            is_last = j == last and not self.cfg.mrd_enabled
            d = self.decoder_layer(layer, d, states[-1 - j].skip, is_last)
        state = DecoderState(act=d)
        if self.cfg.mrd_enabled:
            state.heads = [self.decoder_layer(head, d, states[0].skip, True) for head in self.heads]
        return state

    def forward(self, y):
        x = self._as_batch(y)
        length = x.shape[-1]
        if length < self.min_length():
            raise InvalidArgument(f'input of {length} samples is shorter than the minimum {self.min_length()}')
        scale = None
        if not self.cfg.causal:
            scale = x.data.std(axis=-1, keepdims=True) + NORM_FLOOR
            x = x / scale
        spectrograms = spectrogram_frontend(x, self.cfg.frontend_resolutions()) if self.cfg.mre_enabled else []
        padded = self.valid_length(length)
        if padded > length:
            x = ag.pad(x, ((0, 0), (0, 0), (0, padded - length)))
        if self.cfg.resample_factor > 1:
            x = self._upsample(x)
        states = self.encode(x, spectrograms)
        h = states[-1].skip
        h = ag.transpose(self.lstm(ag.transpose(h, (2, 0, 1))), (1, 2, 0))
        decoded = self.decode(h, states)
        raw = decoded.heads if self.cfg.mrd_enabled else [decoded.act]
        outs = []
        for wave in raw:
            if self.cfg.resample_factor > 1:
                wave = self._downsample(wave)
            wave = wave[:, :, :length]
            if scale is not None:
                wave = wave * scale
            outs.append(wave)
        if not self.cfg.mrd_enabled:
            return ModelOutput(outs[0])
        average = (outs[0] + outs[1] + outs[2]) / 3.0
        return ModelOutput(average, outs, self.head_labels())

    def enhance(self, y: AudioBuffer):
        """Inference on one buffer; returns (average, {label: head}) as AudioBuffers."""
        out = self(y)
        average = AudioBuffer(out.average.data[0, 0], y.sample_rate)
        heads = {label: AudioBuffer(h.data[0, 0], y.sample_rate) for label, h in zip(out.labels, out.heads)}
        return average, heads


def manifest_path(checkpoint_path):
    return f'{checkpoint_path}.json'


def save_model(model, path, step=0, optimizer=None, extra=None):
    arrays = dict(model.state_dict())
    if optimizer is not None:
        arrays.update(optimizer.state_dict())
    nn.save_checkpoint(path, arrays)
    manifest = {
        'format_version': MANIFEST_VERSION,
        'checkpoint_version': nn.CHECKPOINT_VERSION,
        'variant': model.variant,
        'seed': model.seed,
        'step': step,
        'model': model.cfg.to_dict(),
    }
    manifest.update(extra or {})
    with open(manifest_path(path), 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')


def load_manifest(path):
    try:
        with open(manifest_path(path)) as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise VersionError(f'{path} has no model manifest {manifest_path(path)}') from None
    except json.JSONDecodeError as e:
        raise UnsupportedFormat(f'{manifest_path(path)} is not valid JSON ({e})') from None
    if manifest.get('format_version') != MANIFEST_VERSION:
        raise VersionError(
            f'manifest format {manifest.get("format_version")} is not supported (expected {MANIFEST_VERSION})')
    return manifest


def load_model(path, expect_cfg=None):
    """Rebuild a model from a checkpoint and its manifest; returns (model, manifest, optimizer arrays)."""
    manifest = load_manifest(path)
    cfg = ModelConfig.from_dict(manifest['model'])
    if expect_cfg is not None and expect_cfg.to_dict() != cfg.to_dict():
        raise VersionError(f'{path} was trained with a different model configuration')
    model = Demucs(cfg, seed=manifest.get('seed', 0))
    arrays = nn.load_checkpoint(path)
    optimizer_state = {k: v for k, v in arrays.items() if k.startswith('adam.')}
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith('adam.')})
    log.info('loaded %s (%s, step %s)', path, manifest['variant'], manifest.get('step'))
    return model, manifest, optimizer_state
