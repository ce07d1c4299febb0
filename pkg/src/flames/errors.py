"""Exception types shared across the package."""


class FlamesError(Exception):
    pass


class PrefixTerminal(FlamesError, ValueError):
    """The prefix already ends in a terminal token."""


class UnknownToken(FlamesError, ValueError):
    pass


class BadK(FlamesError, ValueError):
    pass


class TransportError(FlamesError):
    """Remote model could not be reached after all retries."""


class ProtocolError(FlamesError):
    """Remote model answered with a malformed payload."""


class SimulatedOOM(FlamesError):
    """The memory meter exceeded its configured cap."""

    def __init__(self, reading, cap):
        self.reading = reading
        self.cap = cap
        super().__init__(f"simulated OOM: peak {reading.peak} > cap {cap}")


class ParseError(FlamesError, ValueError):
    pass


class GenerationExhausted(FlamesError):
    pass


class PairingError(FlamesError, ValueError):
    pass


class ConfigError(FlamesError, ValueError):
    pass
