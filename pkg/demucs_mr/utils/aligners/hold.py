import numpy as np

from .base import BaseAligner


class HoldAligner(BaseAligner):
    """Latest complete (non-centred) frame ending at or before the time step's last sample.

    Time steps that precede the first complete frame receive a zero frame.
    """
    name = 'hold'
    causal = True

    def plan(self, steps, frames, span, cfg):
        tau = np.arange(steps)
        last_sample = (tau * span.numerator) // span.denominator
        index = (last_sample - cfg.win_len + 1) // cfg.hop_len
        mask = (index >= 0).astype(np.float64)
        index = np.clip(index, 0, frames - 1)
        return index, index, mask, np.zeros(steps)

    def check_availability(self, model_cfg):
        padded = [r.label for r in model_cfg.frontend_resolutions() if r.center_pad]
        if padded:
            return False, f'hold alignment needs non-centred frames, got centred {padded}'
        return True, 'Available'
