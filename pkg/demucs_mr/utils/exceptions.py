class DemucsError(Exception):
    code = 'runtime-error'
    exit_code = 2

    def __init__(self, msg):
        super().__init__(msg)
        self.message = msg

    def line(self):
        return f'error: {self.code}: ' + ' '.join(str(self.message).split())


class InvalidArgument(DemucsError):
    code = 'invalid-argument'
    exit_code = 1


class ShapeError(DemucsError):
    code = 'shape-error'


class GraphStateError(DemucsError):
    code = 'state-error'


class UnsupportedFormat(DemucsError):
    code = 'unsupported-format'


class VersionError(DemucsError):
    code = 'version-error'


class StorageError(DemucsError):
    code = 'io-error'


class UndefinedMetric(DemucsError):
    code = 'undefined-metric'


class NumericFailure(DemucsError):
    code = 'numeric-failure'
    exit_code = 3


class DemucsWarning(Warning):
    pass
