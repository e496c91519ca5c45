"""Exception hierarchy shared across the scanner."""


class ScanError(Exception):
    """Base class for all scanner errors."""


class ConfigError(ScanError):
    """Invalid configuration: bad descriptor, unresolvable action URL, bad flags."""


class ScriptError(ScanError):
    """An action script failed to parse or validate."""


class TransportError(ScanError):
    """An HTTP request could not be completed. Carries the workflow step if known."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ReplayError(ScanError):
    """Replay could not proceed (locator missing, page structure changed)."""

    def __init__(self, message, step=None, locator=None):
        super().__init__(message)
        self.step = step
        self.locator = locator


class CaptureError(ScanError):
    """The capture phase could not produce a usable analysis."""
