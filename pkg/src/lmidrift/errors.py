"""Exception hierarchy shared by all lmidrift modules."""


class LmiDriftError(Exception):
    """Base class for every error raised by this package."""


class CorpusFormatError(LmiDriftError, ValueError):
    """A dataset line could not be parsed or carries an unknown label."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CapabilityError(LmiDriftError, TypeError):
    """The predictor lacks the capability (gradients, attention) an operation needs."""


class ProtocolError(LmiDriftError):
    """An external predictor violated the wire protocol."""


class ConnectionFailed(ProtocolError):
    pass


class MalformedResponse(ProtocolError):
    pass


class IdMismatch(ProtocolError):
    def __init__(self, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"response id {got!r} does not match request id {expected!r}")


class NonSimplexProbabilities(ProtocolError):
    pass


class RemoteError(ProtocolError):
    pass


class ConfigError(LmiDriftError, ValueError):
    pass


class MetricError(LmiDriftError, ValueError):
    pass
