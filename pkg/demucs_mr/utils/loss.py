"""
Training objective: waveform L1 plus multi-resolution spectral convergence
and log-magnitude terms, with per-head resolution assignment for MRD models.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .dsp import LOG_FLOOR, AudioBuffer, StftConfig, resolve_resolutions
from .exceptions import InvalidArgument

log = logging.getLogger(__name__)

MAE_TARGETS = ('average', 'per_head')


@dataclass
class LossConfig:
    alpha: float = 0.5
    resolutions: Tuple[StftConfig, ...] = 'conventional'
    per_head_assignment: Optional[Tuple[int, ...]] = None
    mae_target: str = 'average'

    def __post_init__(self):
        self.resolutions = resolve_resolutions(self.resolutions)
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgument(f'alpha must lie in [0, 1], got {self.alpha}')
        if self.mae_target not in MAE_TARGETS:
            raise InvalidArgument(f'mae_target must be one of {MAE_TARGETS}, got {self.mae_target!r}')
        if self.per_head_assignment is not None:
            self.per_head_assignment = tuple(int(i) for i in self.per_head_assignment)

    def assignment(self, heads):
        """Resolution index used by each head; must be a bijection."""
        n = len(self.resolutions)
        if heads != n:
            raise InvalidArgument(f'{heads} heads cannot be paired with {n} loss resolutions')
        order = self.per_head_assignment or tuple(range(n))
        if sorted(order) != list(range(n)):
            raise InvalidArgument(f'per_head_assignment {order} is not a permutation of {n} resolutions')
        return order

    def to_dict(self):
        return {
            'alpha': self.alpha,
            'resolutions': [r.to_dict() for r in self.resolutions],
            'per_head_assignment': list(self.per_head_assignment) if self.per_head_assignment else None,
            'mae_target': self.mae_target,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class LossReport:
    mae: float
    sc: Dict[str, float]
    mag: Dict[str, float]
    total: float
    loss: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def record(self, step):
        return {'step': step, 'mae': self.mae, 'sc': dict(self.sc), 'mag': dict(self.mag),
                'total': self.total}


def _signal(value):
    if isinstance(value, AudioBuffer):
        return ag.as_tensor(value.samples)
    return ag.as_tensor(value)


def _check_lengths(a, b, op):
    if a.shape != b.shape:
        raise InvalidArgument(f'{op}: estimate shape {a.shape} does not match reference {b.shape}')


def l_mae(estimate, reference):
    estimate, reference = _signal(estimate), _signal(reference)
    _check_lengths(estimate, reference, 'l_mae')
    return ag.mean(ag.tabs(estimate - reference))


def l_sc(estimate, reference, cfg):
    """Frobenius spectral convergence over the whole batch."""
    estimate, reference = _signal(estimate), _signal(reference)
    _check_lengths(estimate, reference, 'l_sc')
    est_mag = ag.stft_magnitude(estimate, cfg)
    ref_mag = ag.stft_magnitude(reference.detach(), cfg)
    denom = max(float(np.sqrt(np.sum(ref_mag.data ** 2))), LOG_FLOOR)
    return ag.frobenius(est_mag - ref_mag) / denom


def l_mag(estimate, reference, cfg):
    estimate, reference = _signal(estimate), _signal(reference)
    _check_lengths(estimate, reference, 'l_mag')
    est_log = ag.log_(ag.clamp_min(ag.stft_magnitude(estimate, cfg), LOG_FLOOR))
    ref_log = np.log(np.maximum(ag.stft_magnitude(reference.detach(), cfg).data, LOG_FLOOR))
    return ag.mean(ag.tabs(est_log - ref_log))


def _sum(terms):
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total


def _split_outputs(outputs):
    if isinstance(outputs, (Tensor, AudioBuffer, np.ndarray)):
        return _signal(outputs), None
    if hasattr(outputs, 'heads'):
        heads = [_signal(h) for h in outputs.heads]
        return _signal(outputs.average), heads or None
    heads = [_signal(h) for h in outputs]
    if len(heads) == 1:
        return heads[0], None
    return _sum(heads) / float(len(heads)), heads


def l_demucs(outputs, reference, cfg):
    """Total objective; ``outputs`` is one estimate or an object/sequence carrying three heads."""
    average, heads = _split_outputs(outputs)
    reference = _signal(reference)
    sc, mag = {}, {}
    spectral = []
    if heads is None:
        mae = l_mae(average, reference)
        for res in cfg.resolutions:
            sc_term, mag_term = l_sc(average, reference, res), l_mag(average, reference, res)
            sc[res.label], mag[res.label] = sc_term.item(), mag_term.item()
            spectral += [sc_term, mag_term]
    else:
        order = cfg.assignment(len(heads))
        if cfg.mae_target == 'average':
            if average is None:
                raise InvalidArgument('mae_target "average" needs three heads to average')
            mae = l_mae(average, reference)
        else:
            mae = _sum([l_mae(h, reference) for h in heads]) / float(len(heads))
        for head, index in zip(heads, order):
            res = cfg.resolutions[index]
            sc_term, mag_term = l_sc(head, reference, res), l_mag(head, reference, res)
            sc[res.label], mag[res.label] = sc_term.item(), mag_term.item()
            spectral += [sc_term, mag_term]

    loss = cfg.alpha * mae + (1.0 - cfg.alpha) * _sum(spectral)
    spectral_total = sum(sc[k] + mag[k] for k in sc)
    total = cfg.alpha * mae.item() + (1.0 - cfg.alpha) * spectral_total
    return LossReport(mae=mae.item(), sc=sc, mag=mag, total=total, loss=loss)
