import typing

import numpy as np

from .. import autograd as ag
from ..exceptions import ShapeError


class BaseAligner:
    """Maps spectrogram frames onto the time-branch frame axis of one encoder layer.

    ``span`` is the number of original-rate samples covered by one time step
    of the layer (a Fraction, stride ** layer / resample factor).
    """
    name = None
    causal = False

    def plan(self, steps, frames, span, cfg) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def align(self, x, steps, span, cfg):
        """x is [batch, frames, ch]; returns [batch, steps, ch]."""
        frames = x.shape[1]
        if frames == 0:
            raise ShapeError(f'{cfg.label}: no spectrogram frames to align with {steps} time steps')
        first, second, w_first, w_second = self.plan(steps, frames, span, cfg)
        out = ag.take(x, first, axis=1) * w_first[None, :, None]
        if np.any(w_second):
            out = out + ag.take(x, second, axis=1) * w_second[None, :, None]
        return out

    def check_availability(self, model_cfg) -> typing.Tuple[bool, str]:
        return True, 'Available'
