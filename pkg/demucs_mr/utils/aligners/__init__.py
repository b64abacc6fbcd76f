from ..exceptions import InvalidArgument
from .hold import HoldAligner
from .interp import InterpAligner

_aligners = {
    'hold': HoldAligner,
    'interp': InterpAligner,
}


def get_aligner(name, causal=False):
    if name == 'auto':
        name = 'hold' if causal else 'interp'
    if name not in _aligners:
        raise InvalidArgument(f'unknown aligner {name!r}, expected one of {sorted(_aligners)} or "auto"')
    return _aligners[name]()


__all__ = ["get_aligner", "_aligners"]
