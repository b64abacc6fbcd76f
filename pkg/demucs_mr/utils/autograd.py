"""
Reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a ``Graph`` is active are appended to its tape in
execution order; ``Graph.backward`` walks the tape in exact reverse order.
Operations executed with no active graph record nothing, which is how
inference and finite-difference evaluations run.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from . import dsp
from .exceptions import GraphStateError, InvalidArgument, ShapeError

log = logging.getLogger(__name__)

_tape = threading.local()


def _active_graph():
    stack = getattr(_tape, 'stack', None)
    return stack[-1] if stack else None


class Tensor:
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._node = None

    @classmethod
    def _wrap(cls, data):
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.grad = None
        out.requires_grad = False
        out.name = None
        out._node = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        label = f' {self.name}' if self.name else ''
        return f'<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>'

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor._wrap(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log_(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return tabs(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)


@dataclass(eq=False)
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor._wrap(np.asarray(value, dtype=np.float64))


def _where(op):
    """``op`` qualified by the graph and the tape index it would be recorded at."""
    graph = _active_graph()
    if graph is None:
        return op
    return f'{graph.name} node {len(graph.nodes)} ({op})'


def _record(op, data, inputs, backward):
    out = Tensor._wrap(data)
    graph = _active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, out, backward)
        graph.nodes.append(out._node)
    return out


def _accumulate(tensor, grad):
    if grad.shape != tensor.shape:
        raise ShapeError(f'gradient shape {grad.shape} does not match leaf {tensor.shape}')
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad += grad


class Graph:
    """Tape of operation records.

    Either wrap a builder, ``Graph(fn).forward(*inputs)``, or record ad hoc
    with ``with graph: ...`` and pass ``output=`` to ``backward``.
    """

    def __init__(self, builder=None, name='graph'):
        self.builder = builder
        self.name = name
        self.nodes = []
        self.outputs = None

    def __enter__(self):
        if not hasattr(_tape, 'stack'):
            _tape.stack = []
        _tape.stack.append(self)
        self.nodes = []
        self.outputs = None
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape.stack.pop()
        return False

    def forward(self, *inputs, **kwargs):
        if self.builder is None:
            raise GraphStateError(f'{self.name} has no builder to run')
        with self:
            outputs = self.builder(*inputs, **kwargs)
        self.outputs = outputs
        return outputs

    def backward(self, output_grad=None, output=None):
        target = output if output is not None else self.outputs
        if target is None and not self.nodes:
            raise GraphStateError(f'backward called on {self.name} before forward')
        if not isinstance(target, Tensor):
            raise InvalidArgument('backward needs a single tensor output; pass output=')
        if output_grad is None:
            if target.size != 1:
                raise InvalidArgument(f'output of shape {target.shape} needs an explicit output_grad')
            seed = np.ones_like(target.data)
        else:
            seed = np.asarray(output_grad.data if isinstance(output_grad, Tensor) else output_grad,
                              dtype=np.float64)
            if seed.shape != target.shape:
                raise ShapeError(f'output_grad shape {seed.shape} does not match output {target.shape}')
        if target._node is None:
            if target.requires_grad:
                _accumulate(target, seed)
            return
        grads = {id(target): seed}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(node.inputs, node.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._node is None:
                    _accumulate(tensor, input_grad)
                elif id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + input_grad
                else:
                    grads[id(tensor)] = input_grad


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(op, a, b, fn):
    a, b = as_tensor(a), as_tensor(b)
    try:
        return a, b, fn(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f'{_where(op)}: cannot combine shapes {a.shape} and {b.shape} ({e})') from None


def add(a, b):
    a, b, out = _binary('add', a, b, np.add)
    return _record('add', out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b, out = _binary('sub', a, b, np.subtract)
    return _record('sub', out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b, out = _binary('mul', a, b, np.multiply)
    return _record('mul', out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b, out = _binary('div', a, b, np.divide)
    return _record('div', out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a):
    a = as_tensor(a)
    return _record('neg', -a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    return _record('pow', a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'{_where("matmul")}: operands must be at least 2-D, got {a.shape} and {b.shape}')
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f'{_where("matmul")}: cannot multiply {a.shape} by {b.shape}') from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _record('matmul', out, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record('sum', out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) / float(count)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f'{_where("reshape")}: cannot view {a.shape} as {shape}') from None
    return _record('reshape', out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record('transpose', a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def getitem(a, index):
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record('getitem', out, (a,), backward)


def concat(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f'{_where("concat")}: shapes {shapes} do not agree off axis {axis}') from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record('concat', out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f'{_where("stack")}: shapes {[t.shape for t in tensors]} differ') from None
    return _record('stack', out, tensors,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def pad(a, widths):
    """Zero padding; ``widths`` as for numpy.pad."""
    a = as_tensor(a)
    out = np.pad(a.data, widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return _record('pad', out, (a,), lambda g: (g[index],))


def take(a, indices, axis):
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _record('take', out, (a,), backward)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record('exp', out, (a,), lambda g: (g * out,))


def log_(a):
    a = as_tensor(a)
    return _record('log', np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record('sqrt', out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a):
    a = as_tensor(a)
    return _record('abs', np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a, floor):
    a = as_tensor(a)
    return _record('clamp_min', np.maximum(a.data, floor), (a,), lambda g: (g * (a.data > floor),))


def relu(a):
    a = as_tensor(a)
    return _record('relu', np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    positive = a.data > 0
    out = np.where(positive, a.data, alpha * np.expm1(np.minimum(a.data, 0.0)))
    return _record('elu', out, (a,), lambda g: (g * np.where(positive, 1.0, out + alpha),))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return _record('sigmoid', out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record('tanh', out, (a,), lambda g: (g * (1.0 - out * out),))


def frobenius(a):
    a = as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data))

    def backward(g):
        if norm == 0:
            return (np.zeros_like(a.data),)
        return (g * a.data / norm,)

    return _record('frobenius', np.asarray(norm), (a,), backward)


def _with_bias(inputs, bias):
    return inputs + ((bias,) if bias is not None else ())


def conv1d(x, weight, bias=None, stride=1, padding=(0, 0)):
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(
            f'{_where("conv1d")}: expected [batch, ch, time] and [out, in, k], got {x.shape}, {weight.shape}')
    _, channels, length = x.shape
    out_ch, in_ch, kernel = weight.shape
    if channels != in_ch:
        raise ShapeError(f'{_where("conv1d")}: input has {channels} channels, weight expects {in_ch}')
    left, right = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    if xp.shape[-1] < kernel:
        raise ShapeError(
            f'{_where("conv1d")}: {length} samples with padding {left}+{right} shorter than kernel {kernel}')
    windows = sliding_window_view(xp, kernel, axis=2)[:, :, ::stride, :]
    out = np.einsum('bclk,ock->bol', windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]
    frames = windows.shape[2]

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            span = stride * (frames - 1) + 1
            for k in range(kernel):
                gxp[:, :, k:k + span:stride] += np.einsum('bol,oc->bcl', g, weight.data[:, :, k])
            gx = gxp[:, :, left:left + length]
        if weight.requires_grad:
            gw = np.einsum('bol,bclk->ock', g, windows, optimize=True)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    return _record('conv1d', out, _with_bias((x, weight), bias), backward)


def conv_transpose1d(x, weight, bias=None, stride=1):
    """Full transposed convolution, output length (T - 1) * stride + kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f'{_where("conv_transpose1d")}: expected 3-D operands, got {x.shape}, {weight.shape}')
    batch, channels, length = x.shape
    in_ch, out_ch, kernel = weight.shape
    if channels != in_ch:
        raise ShapeError(f'{_where("conv_transpose1d")}: input has {channels} channels, weight expects {in_ch}')
    taps = np.einsum('bci,cok->boik', x.data, weight.data, optimize=True)
    span = stride * (length - 1) + 1
    out = np.zeros((batch, out_ch, span - 1 + kernel))
    for k in range(kernel):
        out[:, :, k:k + span:stride] += taps[:, :, :, k]
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gx = gw = gb = None
        gtaps = np.stack([g[:, :, k:k + span:stride] for k in range(kernel)], axis=-1)
        if x.requires_grad:
            gx = np.einsum('boik,cok->bci', gtaps, weight.data, optimize=True)
        if weight.requires_grad:
            gw = np.einsum('bci,boik->cok', x.data, gtaps, optimize=True)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        return gx, gw, gb

    return _record('conv_transpose1d', out, _with_bias((x, weight), bias), backward)


def conv2d(x, weight, bias=None, stride=(1, 1), padding=((0, 0), (0, 0))):
    x, weight = as_tensor(x), as_tensor(weight)
    bias = as_tensor(bias) if bias is not None else None
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f'{_where("conv2d")}: expected 4-D operands, got {x.shape}, {weight.shape}')
    _, channels, height, width = x.shape
    out_ch, in_ch, kh, kw = weight.shape
    if channels != in_ch:
        raise ShapeError(f'{_where("conv2d")}: input has {channels} channels, weight expects {in_ch}')
    sh, sw = stride
    xp = np.pad(x.data, ((0, 0), (0, 0)) + tuple(padding))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeError(
            f'{_where("conv2d")}: input {x.shape[2:]} with padding {padding} smaller than kernel {(kh, kw)}')
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    out = np.einsum('bchwij,ocij->bohw', windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    rows, cols = windows.shape[2], windows.shape[3]
    (top, _), (left, _) = padding

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            rspan, cspan = sh * (rows - 1) + 1, sw * (cols - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + rspan:sh, j:j + cspan:sw] += np.einsum(
                        'bohw,oc->bchw', g, weight.data[:, :, i, j])
            gx = gxp[:, :, top:top + height, left:left + width]
        if weight.requires_grad:
            gw = np.einsum('bohw,bchwij->ocij', g, windows, optimize=True)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _record('conv2d', out, _with_bias((x, weight), bias), backward)


def stft_magnitude(x, cfg):
    """|STFT| of the last axis as [..., frames, bins]; subgradient 0 at zero magnitude."""
    x = as_tensor(x)
    length = x.shape[-1]
    spectrum = dsp.stft_array(x.data, cfg)
    mag = np.abs(spectrum)
    window = dsp.hann_window(cfg.win_len, cfg.periodic)
    hop, win, n_fft = cfg.hop_len, cfg.win_len, cfg.fft_len

    def backward(g):
        with np.errstate(invalid='ignore', divide='ignore'):
            phase = np.where(mag > 0, spectrum / mag, 0.0)
        full = np.zeros(spectrum.shape[:-1] + (n_fft,), dtype=np.complex128)
        full[..., :cfg.bins] = g * phase
        frames_grad = np.real(np.fft.ifft(full, axis=-1))[..., :win] * (n_fft * window)
        padded = np.zeros(x.shape[:-1] + (dsp.pad_signal(x.data, cfg).shape[-1],))
        for f in range(frames_grad.shape[-2]):
            padded[..., f * hop:f * hop + win] += frames_grad[..., f, :]
        return (dsp.unpad_signal_grad(padded, length, cfg),)

    return _record('stft_magnitude', mag, (x,), backward)


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    index: Optional[tuple]
    checked: int


def grad_check(f, x0, eps=1e-4, tol=1e-3, samples=None, seed=0, floor=1e-6):
    """Compare reverse-mode gradients of scalar ``f`` at ``x0`` with central differences."""
    saved_grad, saved_flag = x0.grad, x0.requires_grad
    x0.grad, x0.requires_grad = None, True
    try:
        graph = Graph(f, name='grad_check')
        out = graph.forward(x0)
        if not isinstance(out, Tensor) or out.size != 1:
            raise InvalidArgument('grad_check needs a scalar-valued function')
        graph.backward()
        analytic = np.zeros_like(x0.data) if x0.grad is None else x0.grad.copy()
    finally:
        x0.grad, x0.requires_grad = saved_grad, saved_flag

    flat = x0.data.reshape(-1)
    if samples is None or samples >= flat.size:
        indices = np.arange(flat.size)
    else:
        indices = np.sort(np.random.default_rng(seed).choice(flat.size, samples, replace=False))
    worst, worst_index = 0.0, None
    for i in indices:
        original = flat[i]
        flat[i] = original + eps
        plus = f(x0).item()
        flat[i] = original - eps
        minus = f(x0).item()
        flat[i] = original
        numeric = (plus - minus) / (2 * eps)
        exact = analytic.reshape(-1)[i]
        error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
        if error > worst or worst_index is None:
            worst, worst_index = error, np.unravel_index(i, x0.shape)
    log.debug('grad_check over %d elements: max relative error %.3e', len(indices), worst)
    return GradCheckReport(worst <= tol, float(worst), worst_index, len(indices))
