import numpy as np

from .exceptions import InvalidArgument, VersionError


class Adam:
    """Adam with bias-corrected moments, eps added outside the square root."""

    def __init__(self, named_params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise InvalidArgument(f'learning rate must be positive, got {lr}')
        b1, b2 = betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise InvalidArgument(f'betas must lie in [0, 1), got {betas}')
        self.params = dict(named_params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        correction1 = 1 - self.b1 ** self.t
        correction2 = 1 - self.b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            denom = np.sqrt(self.v[name] / correction2) + self.eps
            p.data -= self.lr * (self.m[name] / correction1) / denom

    def state_dict(self):
        state = {f'adam.m.{name}': m for name, m in self.m.items()}
        state.update({f'adam.v.{name}': v for name, v in self.v.items()})
        state['adam.t'] = np.array([float(self.t)])
        return state

    def load_state_dict(self, state):
        for name in self.params:
            for slot, store in (('m', self.m), ('v', self.v)):
                key = f'adam.{slot}.{name}'
                if key not in state or state[key].shape != store[name].shape:
                    raise VersionError(f'optimizer state {key} missing or mis-shaped in checkpoint')
                store[name] = np.array(state[key], dtype=np.float64)
        self.t = int(state['adam.t'][0])
