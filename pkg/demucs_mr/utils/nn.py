import logging
import math
import os
import struct
import zlib

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .exceptions import ShapeError, UnsupportedFormat, VersionError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'DMRCKPT\0'
CHECKPOINT_VERSION = 1


class Parameter(Tensor):
    """Trainable leaf; ``init`` and ``fan_in`` drive ``initialize``."""

    def __init__(self, shape, fan_in=1, init='uniform'):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.fan_in = fan_in
        self.init = init


class Module:
    def __init__(self):
        object.__setattr__(self, '_parameters', {})
        object.__setattr__(self, '_modules', {})
        object.__setattr__(self, '_buffers', {})
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, value):
        self._buffers[name] = np.array(value, dtype=np.float64)

    def buffer(self, name):
        return self._buffers[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def named_parameters(self, prefix=''):
        for name, p in self._parameters.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(f'{prefix}{name}.')

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=''):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(f'{prefix}{name}.')

    def _set_buffer(self, dotted, value):
        owner, _, leaf = dotted.rpartition('.')
        module = self
        for part in owner.split('.') if owner else ():
            module = module._modules[part]
        module._buffers[leaf] = np.array(value, dtype=np.float64)

    def train(self, flag=True):
        object.__setattr__(self, 'training', flag)
        for m in self._modules.values():
            m.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        missing, unexpected = expected - set(state), set(state) - expected
        if missing or unexpected:
            raise VersionError(
                f'checkpoint does not match model: missing {sorted(missing)[:5]}, '
                f'unexpected {sorted(unexpected)[:5]}')
        for name, value in state.items():
            value = np.asarray(value, dtype=np.float64)
            target = params[name].data if name in params else buffers[name]
            if value.shape != target.shape:
                raise VersionError(f'{name}: checkpoint shape {value.shape} != model shape {target.shape}')
            if name in params:
                params[name].data[...] = value
            else:
                self._set_buffer(name, value)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, module):
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, i):
        return list(self._modules.values())[i]

    def __len__(self):
        return len(self._modules)

    def __iter__(self):
        return iter(list(self._modules.values()))


def initialize(module, seed):
    """Fill every parameter from a generator keyed on (seed, parameter name)."""
    for name, p in module.named_parameters():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode('utf-8'))])
        if p.init == 'uniform':
            bound = 1.0 / math.sqrt(p.fan_in)
            p.data[...] = rng.uniform(-bound, bound, p.shape)
        elif p.init == 'ones':
            p.data[...] = 1.0
        else:
            p.data[...] = 0.0
    return module


def relu(x):
    return ag.relu(x)


def elu(x, alpha=1.0):
    return ag.elu(x, alpha)


def glu(x, axis=1):
    """First half of ``axis`` gated by the sigmoid of the second half."""
    n = x.shape[axis]
    if n % 2:
        raise ShapeError(f'glu: {n} channels along axis {axis} cannot be split in half')
    index = [slice(None)] * x.ndim
    index[axis] = slice(0, n // 2)
    a = x[tuple(index)]
    index[axis] = slice(n // 2, n)
    return a * ag.sigmoid(x[tuple(index)])


class Conv1d(Module):
    def __init__(self, in_ch, out_ch, kernel, stride=1, causal=True, padding=0):
        super().__init__()
        self.in_ch, self.out_ch, self.kernel, self.stride = in_ch, out_ch, kernel, stride
        self.causal = causal
        self.padding = padding
        self.weight = Parameter((out_ch, in_ch, kernel), fan_in=in_ch * kernel)
        self.bias = Parameter((out_ch,), fan_in=in_ch * kernel)

    def forward(self, x):
        pad = (self.kernel - 1, 0) if self.causal else (self.padding, self.padding)
        return ag.conv1d(x, self.weight, self.bias, self.stride, pad)


class ConvTranspose1d(Module):
    """Transposed convolution; ``trim`` drops the kernel-minus-stride tail so T in gives T * stride out."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, trim=True):
        super().__init__()
        self.kernel, self.stride, self.trim = kernel, stride, trim
        self.weight = Parameter((in_ch, out_ch, kernel), fan_in=out_ch * kernel)
        self.bias = Parameter((out_ch,), fan_in=out_ch * kernel)

    def forward(self, x):
        out = ag.conv_transpose1d(x, self.weight, self.bias, self.stride)
        if self.trim:
            out = out[:, :, :x.shape[-1] * self.stride]
        return out


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel=(3, 3), stride=(1, 1), padding=((1, 1), (1, 1))):
        super().__init__()
        self.stride, self.padding = tuple(stride), tuple(tuple(p) for p in padding)
        kh, kw = kernel
        self.weight = Parameter((out_ch, in_ch, kh, kw), fan_in=in_ch * kh * kw)
        self.bias = Parameter((out_ch,), fan_in=in_ch * kh * kw)

    def forward(self, x):
        return ag.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.weight = Parameter((channels,), init='ones')
        self.bias = Parameter((channels,), init='zeros')
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f'batchnorm2d: expected [batch, {self.weight.shape[0]}, H, W], got {x.shape}')
        axes = (0, 2, 3)
        if self.training:
            mean = ag.mean(x, axes, keepdims=True)
            centred = x - mean
            var = ag.mean(centred * centred, axes, keepdims=True)
            count = x.size // x.shape[1]
            unbiased = var.data.reshape(-1) * (count / (count - 1) if count > 1 else 1.0)
            m = self.momentum
            self._buffers['running_mean'] = (1 - m) * self._buffers['running_mean'] + m * mean.data.reshape(-1)
            self._buffers['running_var'] = (1 - m) * self._buffers['running_var'] + m * unbiased
            normed = centred / ag.sqrt(var + self.eps)
        else:
            mean = self._buffers['running_mean'][None, :, None, None]
            std = np.sqrt(self._buffers['running_var'] + self.eps)[None, :, None, None]
            normed = (x - mean) / std
        shape = (1, -1, 1, 1)
        return normed * self.weight.reshape(shape) + self.bias.reshape(shape)


class Linear(Module):
    """Acts on the last axis."""

    def __init__(self, in_features, out_features, bias=True):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = Parameter((out_features, in_features), fan_in=in_features)
        self.bias = Parameter((out_features,), fan_in=in_features) if bias else None

    def forward(self, x):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f'linear: expected {self.in_features} input features, got {x.shape[-1]}')
        lead = x.shape[:-1]
        flat = x.reshape((-1, self.in_features)) if x.ndim != 2 else x
        out = flat @ ag.transpose(self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out.reshape(lead + (self.out_features,)) if x.ndim != 2 else out


class LSTMLayer(Module):
    def __init__(self, input_size, hidden):
        super().__init__()
        self.hidden = hidden
        self.weight_ih = Parameter((4 * hidden, input_size), fan_in=hidden)
        self.weight_hh = Parameter((4 * hidden, hidden), fan_in=hidden)
        self.bias = Parameter((4 * hidden,), fan_in=hidden)


class LSTM(Module):
    def __init__(self, input_size, hidden, layers=2):
        super().__init__()
        self.layers = ModuleList(
            LSTMLayer(input_size if i == 0 else hidden, hidden) for i in range(layers))

    def forward(self, x):
        return lstm_forward(x, self.layers)


def lstm_forward(x, layers):
    """Unidirectional LSTM over x [time, batch, feat], zero initial state, gates ordered i, f, g, o."""
    if x.ndim != 3:
        raise ShapeError(f'lstm: expected [time, batch, feat], got {x.shape}')
    for p in layers:
        steps, batch, feat = x.shape
        if feat != p.weight_ih.shape[1]:
            raise ShapeError(f'lstm: expected {p.weight_ih.shape[1]} features, got {feat}')
        H = p.hidden
        projected = x.reshape((steps * batch, feat)) @ ag.transpose(p.weight_ih) + p.bias
        projected = projected.reshape((steps, batch, 4 * H))
        w_hh = ag.transpose(p.weight_hh)
        h = Tensor._wrap(np.zeros((batch, H)))
        c = Tensor._wrap(np.zeros((batch, H)))
        outputs = []
        for t in range(steps):
            gates = projected[t] + h @ w_hh
            i = ag.sigmoid(gates[:, 0:H])
            f = ag.sigmoid(gates[:, H:2 * H])
            g = ag.tanh(gates[:, 2 * H:3 * H])
            o = ag.sigmoid(gates[:, 3 * H:4 * H])
            c = f * c + i * g
            h = o * ag.tanh(c)
            outputs.append(h)
        x = ag.stack(outputs, axis=0)
    return x


def save_checkpoint(path, arrays):
    """Write named float64 arrays; the file is replaced atomically."""
    tmp = f'{path}.tmp'
    with open(tmp, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<II', CHECKPOINT_VERSION, len(arrays)))
        for name, value in arrays.items():
            value = np.asarray(value, dtype='<f8', order='C')
            encoded = name.encode('utf-8')
            f.write(struct.pack('<H', len(encoded)))
            f.write(encoded)
            f.write(struct.pack('<B', value.ndim))
            f.write(struct.pack(f'<{value.ndim}I', *value.shape))
            f.write(value.tobytes())
    os.replace(tmp, path)
    log.debug('wrote %d arrays to %s', len(arrays), path)


def load_checkpoint(path):
    with open(path, 'rb') as f:
        blob = f.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise UnsupportedFormat(f'{path} is not a checkpoint (bad magic {blob[:8]!r})')
    arrays = {}
    try:
        version, count = struct.unpack_from('<II', blob, 8)
        if version != CHECKPOINT_VERSION:
            raise VersionError(f'{path} has checkpoint format {version}, expected {CHECKPOINT_VERSION}')
        offset = 16
        for _ in range(count):
            (name_len,) = struct.unpack_from('<H', blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode('utf-8')
            offset += name_len
            (ndim,) = struct.unpack_from('<B', blob, offset)
            offset += 1
            shape = struct.unpack_from(f'<{ndim}I', blob, offset)
            offset += 4 * ndim
            n = int(np.prod(shape, dtype=np.int64))
            arrays[name] = np.frombuffer(blob, dtype='<f8', count=n, offset=offset).reshape(shape).copy()
            offset += 8 * n
    except (struct.error, ValueError) as e:
        raise UnsupportedFormat(f'{path} is truncated or corrupt ({e})') from None
    return arrays
