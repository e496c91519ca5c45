"""Scenario configuration and ground truth for the test bed."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ConfigError

SCENARIO_NAMES = ("hsbc-like", "bea-like", "boc-like", "ajax-date")

# The planted server-side gap per scenario; remove a flaw from a config to get
# a hardened variant that should produce no findings.
DEFAULT_FLAWS = {
    "hsbc-like": frozenset({"skip-payee-authorization"}),
    "bea-like": frozenset({"skip-payee-registration"}),
    "boc-like": frozenset(),
    "ajax-date": frozenset({"skip-date-window"}),
}

# Ground truth: (step index, parameter name) of every tampering the scanner
# is expected to report with the bundled scripts.
EXPECTED_FINDINGS = {
    "hsbc-like": {(0, "TO")},
    "bea-like": {(0, "TO")},
    "boc-like": set(),
    "ajax-date": {(0, "date")},
}

REJECTION_CAUSES = (
    "token-missing",
    "token-spent",
    "dependency-mismatch",
    "workflow-order",
    "validation-fail",
)


@dataclass
class ScenarioConfig:
    scenario: str
    port: int = 0  # 0 binds an ephemeral port
    seed: int = 0
    today: str = "2026-08-09"  # fixed clock for the ajax-date window
    user_accounts: tuple = ("acct-001", "acct-002")
    authorized_payees: tuple = ("FUND RECEIPIENT~~290 123456882",)
    registered_payees: tuple = ("012-345678",)
    account_index_map: dict = field(default_factory=lambda: {
        "1": "REGPAYEE-ALPHA", "2": "REGPAYEE-BETA"})
    known_flights: tuple = ("JQ123", "JQ456")
    amount_min: float = 1.0
    amount_max: float = 10000.0
    flaws: frozenset = None

    def __post_init__(self):
        if self.scenario not in SCENARIO_NAMES:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; choose one of "
                f"{', '.join(SCENARIO_NAMES)}")
        if self.flaws is None:
            self.flaws = DEFAULT_FLAWS[self.scenario]

    @property
    def expected_findings(self) -> set:
        if self.flaws != DEFAULT_FLAWS[self.scenario]:
            return set()  # ground truth only holds for the stock flaw set
        return set(EXPECTED_FINDINGS[self.scenario])


def expected_findings(scenario: str) -> set:
    return set(EXPECTED_FINDINGS[scenario])
