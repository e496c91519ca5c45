"""Scan report serialization for humans and CI.

The JSON schema is stable and versioned; see docs/report-schema.md. Exit
codes follow the report: 0 clean, 2 findings present, 1 operational error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

from .capture import CaptureResult
from .fuzz import Counters, Finding, ScanOutcome

SCHEMA_VERSION = 1

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2
EXIT_USAGE = 64


@dataclass
class ScanReport:
    target: str
    scenario: str
    capture_summary: dict
    findings: list[dict]
    inconclusive: list[dict]
    counters: dict
    config: dict
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "target": self.target,
            "scenario": self.scenario,
            "capture": self.capture_summary,
            "findings": self.findings,
            "inconclusive": self.inconclusive,
            "counters": self.counters,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScanReport":
        return cls(
            target=data["target"],
            scenario=data["scenario"],
            capture_summary=data["capture"],
            findings=data["findings"],
            inconclusive=data["inconclusive"],
            counters=data["counters"],
            config=data["config"],
            schema_version=data["schema_version"],
        )

    @property
    def exit_code(self) -> int:
        return EXIT_FINDINGS if self.findings else EXIT_CLEAN


def summarize_capture(capture: CaptureResult) -> dict:
    tokens = capture.tokens
    return {
        "steps": len(capture.trace1.steps),
        "one_time_tokens": sorted(
            [{"step": s, "name": n} for s, n in tokens.one_time],
            key=lambda t: (t["step"], t["name"])),
        "session_tokens": sorted(tokens.session_tokens),
        "unconfirmed_token_candidates": sorted(
            [{"step": s, "name": n} for s, n in tokens.unconfirmed],
            key=lambda t: (t["step"], t["name"])),
        "dependency_candidates": [
            {"step": c.step, "name": c.name, "matched": c.matched}
            for c in capture.dependency_candidates],
        "features": [
            {"step": f.step,
             "buttons": f.buttons,
             "reflections": [{"param": r.param, "mode": r.mode}
                             for r in f.reflections],
             "keyword": f.keyword,
             "analyst_regex": f.analyst_regex}
            for f in capture.features.steps],
    }


def build_report(target: str, scenario: str, capture: CaptureResult,
                 outcome: ScanOutcome, config: dict) -> ScanReport:
    capture_summary = summarize_capture(capture)
    capture_summary["confirmed_dependencies"] = sorted(
        [{"step": s, "name": n} for (s, n) in outcome.dependency_map],
        key=lambda d: (d["step"], d["name"]))
    capture_summary["param_dispositions"] = [
        {"step": d.step, "name": d.name, "source": d.source,
         "status": d.status, "findings": d.findings, "detail": d.detail}
        for d in outcome.dispositions]
    counters = outcome.counters
    return ScanReport(
        target=target,
        scenario=scenario,
        capture_summary=capture_summary,
        findings=[asdict(f) for f in outcome.findings],
        inconclusive=list(outcome.inconclusive),
        counters={
            "requests_sent": counters.requests_sent,
            "forced_attempts": counters.forced_attempts,
            "accepted": counters.accepted,
            "rejected": counters.rejected,
            "inconclusive": counters.inconclusive,
            "rejection_causes": dict(sorted(counters.rejection_causes.items())),
        },
        config=config,
    )


def emit_json(report: ScanReport) -> bytes:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True).encode("utf-8")


def parse_json(data: bytes) -> ScanReport:
    return ScanReport.from_dict(json.loads(data.decode("utf-8")))


def confusion_line(findings: list[dict], expected: set[tuple[int, str]]) -> str:
    """One-line confusion summary against ground-truth (step, param) labels."""
    found = {(f["step"], f["param"]) for f in findings}
    tp = sorted(found & expected)
    fp = sorted(found - expected)
    fn = sorted(expected - found)
    tn = not expected and not found
    def fmt(items):
        return ",".join(f"{s}:{p}" for s, p in items) or "-"
    return (f"confusion: TP[{fmt(tp)}] FP[{fmt(fp)}] FN[{fmt(fn)}]"
            f" TN[{'yes' if tn else '-'}]")


def emit_text(report: ScanReport,
              expected: Optional[set[tuple[int, str]]] = None) -> str:
    lines = []
    lines.append(f"target: {report.target}")
    if report.scenario:
        lines.append(f"scenario: {report.scenario}")
    cap = report.capture_summary
    lines.append(f"steps: {cap['steps']}")
    lines.append("one-time tokens: " + (", ".join(
        f"step {t['step']} {t['name']}" for t in cap["one_time_tokens"]) or "none"))
    lines.append("session tokens: " + (", ".join(cap["session_tokens"]) or "none"))
    lines.append("confirmed dependencies: " + (", ".join(
        f"step {d['step']} {d['name']}"
        for d in cap.get("confirmed_dependencies", [])) or "none"))
    counters = report.counters
    lines.append(
        f"forced attempts: {counters['forced_attempts']} "
        f"(accepted {counters['accepted']}, rejected {counters['rejected']}, "
        f"inconclusive {counters['inconclusive']}); "
        f"requests sent: {counters['requests_sent']}")
    if report.findings:
        lines.append(f"findings: {len(report.findings)}")
        for f in report.findings:
            lines.append(
                f"  [step {f['step']}] {f['param']} ({f['source']}) "
                f"rule={f['rule']} value={f['mutated_value']!r}")
    else:
        lines.append("findings: none")
    if report.inconclusive:
        lines.append(f"inconclusive attempts: {len(report.inconclusive)}")
    if expected is not None:
        lines.append(confusion_line(report.findings, expected))
    return "\n".join(lines) + "\n"
