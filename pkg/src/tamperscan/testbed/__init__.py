"""Embedded test bed: deliberately flawed multi-step reference applications.

Four scenarios model the workflow controls real transfer applications use
(one-time tokens, session tokens, cross-request dependency checks, client-side
pre-processing) with one planted server-side validation gap each, except the
true-negative scenario which validates everything:

* ``hsbc-like``   - three-step transfer; the server format-checks the payee
                    account but never checks it is authorized.
* ``bea-like``    - three-step transfer with a client-computed MAC hidden
                    field; the server never checks the payee is registered.
* ``boc-like``    - payee chosen by server-side index; tampering cannot
                    escape the authorized mapping (true negative).
* ``ajax-date``   - single-page JSON endpoint; the advertised 10-day query
                    window is not enforced server-side.

Everything is synthetic and in-memory; nothing persists across restarts.
"""

from .scenarios import SCENARIO_NAMES, ScenarioConfig, expected_findings
from .server import TestbedHandle, serve

__all__ = [
    "SCENARIO_NAMES",
    "ScenarioConfig",
    "TestbedHandle",
    "expected_findings",
    "serve",
]
