import functools
import logging
import sys
import time

from .utils.exceptions import DemucsError

log = logging.getLogger(__name__)


def exit_codes(func):
    """Turn a command into an exit status; failures print one ``error: <code>: <message>`` line."""
    @functools.wraps(func)
    def _exit_codes(*args, **kwargs):
        try:
            result = func(*args, **kwargs)
        except DemucsError as e:
            print(e.line(), file=sys.stderr)
            return e.exit_code
        except OSError as e:
            print(f'error: io-error: {e}', file=sys.stderr)
            return 2
        except Exception as e:
            log.debug('unexpected failure', exc_info=True)
            print(f'error: runtime-error: {type(e).__name__}: ' + ' '.join(str(e).split()), file=sys.stderr)
            return 2
        return 0 if result is None else result

    return _exit_codes


def timed(func):
    @functools.wraps(func)
    def _timed(*args, **kwargs):
        start = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            log.info('%s finished in %.2f s', func.__name__, time.perf_counter() - start)

    return _timed
