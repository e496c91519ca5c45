"""Workflow-aware blackbox parameter-tampering scanner.

The scanner works in two phases. The capture phase replays an analyst-provided
action script twice to learn one-time tokens, cross-request parameter
dependencies, and the response features that evidence a server acceptance.
The fuzz phase then mutates parameters one at a time while keeping tokens and
dependencies intact, force-submits only client-side rejected values, and
reports every mutation the server accepted anyway.

A test bed of deliberately flawed multi-step transfer applications ships with
the package (``tamperscan.testbed``) and backs the self-test suite.
"""

__version__ = "0.1.0"

from .errors import (
    CaptureError,
    ConfigError,
    ReplayError,
    ScanError,
    ScriptError,
    TransportError,
)

__all__ = [
    "CaptureError",
    "ConfigError",
    "ReplayError",
    "ScanError",
    "ScriptError",
    "TransportError",
    "__version__",
]
