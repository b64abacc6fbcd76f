import numpy as np

from .base import BaseAligner


class InterpAligner(BaseAligner):
    """Linear interpolation of centred frames at each time step's centre."""
    name = 'interp'

    def plan(self, steps, frames, span, cfg):
        centre = (np.arange(steps) + 0.5) * float(span) - 0.5
        position = np.clip(centre / cfg.hop_len, 0.0, frames - 1)
        first = np.floor(position).astype(np.intp)
        second = np.minimum(first + 1, frames - 1)
        w_second = position - first
        return first, second, 1.0 - w_second, w_second

    def check_availability(self, model_cfg):
        if model_cfg.causal:
            return False, 'interp alignment looks ahead of the time step; use hold for causal models'
        return True, 'Available'
