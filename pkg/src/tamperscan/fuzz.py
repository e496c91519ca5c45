"""Fuzz phase: confirm dependencies, force client-rejected mutations, report.

The fuzzer walks every step of the workflow and every fuzzable parameter.
Confirmed one-time tokens, session tokens, and confirmed dependent parameters
are never mutated; everything else is mutated one candidate at a time and
placed back into the form. Candidates the client-side gate accepts are
discarded without sending. The first rejected candidate is force-submitted
(transforms still applied) and the response is classified against the
captured acceptance features; a located acceptance becomes a Finding.

Every forced attempt restarts the workflow from the navigate action with a
fresh session, so tokens are harvested live and step order is preserved.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace as dc_replace
from datetime import datetime, timezone
from typing import Callable, Iterator, Optional

from .actionscript import (
    PositionedStep,
    SubmissionTrace,
    TraceStep,
    WorkflowCursor,
    replay,
)
from .capture import (
    CaptureResult,
    Classification,
    classify_response,
    user_value_map,
)
from .errors import ReplayError, ScanError, TransportError
from .htmlmodel import SOURCE_QUERY
from .mutate import MutationCandidate, infer_type, mutate, next_differing
from .session import Session

logger = logging.getLogger(__name__)

EXCERPT_LIMIT = 512  # bytes per evidence field


@dataclass
class FuzzConfig:
    seed: int = 0
    budget: int = 8  # forced attempts per parameter
    delay_ms: int = 0
    occurrence_limit: int = 3
    violate_restrictions: bool = False
    accept_regex: Optional[str] = None


@dataclass
class FuzzPlan:
    capture: CaptureResult
    config: FuzzConfig


@dataclass
class Finding:
    step: int
    param: str
    source: str
    base_value: str
    mutated_value: str
    rule: str
    evidence: dict
    timestamp: str


@dataclass
class DependencyRecord:
    step: int
    name: str
    probe_value: str
    evidence: dict


@dataclass
class Counters:
    requests_sent: int = 0
    forced_attempts: int = 0
    accepted: int = 0
    rejected: int = 0
    inconclusive: int = 0
    rejection_causes: dict = field(default_factory=dict)

    def record(self, outcome: str, cause: Optional[str] = None) -> None:
        self.forced_attempts += 1
        if outcome == "accepted":
            self.accepted += 1
        elif outcome == "rejected":
            self.rejected += 1
            if cause:
                self.rejection_causes[cause] = self.rejection_causes.get(cause, 0) + 1
        else:
            self.inconclusive += 1


@dataclass
class ParamDisposition:
    step: int
    name: str
    source: str
    status: str  # exempt-* | fuzzed | no-client-rejected | unresolved-dependency
    findings: int = 0
    detail: str = ""


@dataclass
class ScanOutcome:
    findings: list[Finding]
    inconclusive: list[dict]
    counters: Counters
    dependency_map: dict[tuple[int, str], DependencyRecord]
    dispositions: list[ParamDisposition]


@dataclass
class _QueueEntry:
    step: int
    name: str
    source: str
    base: str
    context: dict  # overrides that make the parameter appear (revealed fields)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Fuzzer:
    """Runs the fuzzing phase for one captured workflow."""

    def __init__(self, plan: FuzzPlan, make_session: Callable[[], Session],
                 counters: Optional[Counters] = None):
        self.plan = plan
        self.capture = plan.capture
        self.config = plan.config
        self.make_session = make_session
        self.counters = counters or Counters()
        self.dependency_map: dict[tuple[int, str], DependencyRecord] = {}
        self.dispositions: list[ParamDisposition] = []
        self.inconclusive: list[dict] = []
        self._queued: set[tuple[int, str]] = set()

    # -- dependency confirmation ------------------------------------------

    def confirm_dependencies(self) -> dict[tuple[int, str], DependencyRecord]:
        """Probe every dependency candidate once with a differing value.

        Confirmed dependent (and from then on exempt) when the server rejects
        the probe; anything else stays fuzzable.
        """
        tokens = self.capture.tokens
        probed: set[tuple[int, str]] = set()
        for cand in self.capture.dependency_candidates:
            key = (cand.step, cand.name)
            if key in probed or tokens.is_exempt(cand.step, cand.name):
                continue
            probed.add(key)
            control = self.capture.trace1.steps[cand.step].form.control_named(cand.name)
            hint = infer_type(control, cand.value)
            candidate = next_differing(control, cand.value, hint,
                                       avoid=cand.value, seed=self.config.seed)
            if candidate is None:
                self.dispositions.append(ParamDisposition(
                    step=cand.step, name=cand.name, source="",
                    status="unresolved-dependency",
                    detail="no differing probe value available"))
                continue
            outcome = self._probe_dependency(cand.step, cand.name, candidate)
            if outcome is None:
                self.dispositions.append(ParamDisposition(
                    step=cand.step, name=cand.name, source="",
                    status="unresolved-dependency", detail="probe failed"))
            elif not outcome.accepted:
                self.dependency_map[key] = DependencyRecord(
                    step=cand.step, name=cand.name,
                    probe_value=candidate.value,
                    evidence={"missing": outcome.missing})
                logger.info("confirmed dependency (%d, %s)", cand.step, cand.name)
        return self.dependency_map

    def _probe_dependency(self, step: int, name: str,
                          candidate: MutationCandidate) -> Optional[Classification]:
        session = self.make_session()
        try:
            trace = replay(self.capture.script, session,
                           overrides={step: {name: candidate.value}},
                           force=frozenset({step}), target=self.capture.target,
                           stop_after=step)
        except (ReplayError, TransportError) as exc:
            logger.warning("dependency probe (%d, %s) failed: %s", step, name, exc)
            return None
        finally:
            session.close()
        if not trace.steps or trace.steps[-1].index != step:
            return None
        probe_step = trace.steps[-1]
        values = user_value_map(trace.steps, step)
        values[name] = candidate.value
        outcome = classify_response(self.capture.features.for_step(step),
                                    probe_step.document, probe_step.response,
                                    values)
        cause = outcome.missing[0]["kind"] if outcome.missing else None
        self.counters.record("accepted" if outcome.accepted else "rejected",
                             cause=cause)
        return outcome

    # -- the main loop ------------------------------------------------------

    def scan(self) -> ScanOutcome:
        self.confirm_dependencies()
        findings: list[Finding] = []
        seen_rules: set[tuple[int, str, str]] = set()

        queue: list[_QueueEntry] = []
        for step in self.capture.trace1.steps:
            for param in step.params:
                key = (step.index, param.name)
                if key in self._queued:
                    continue
                self._queued.add(key)
                queue.append(_QueueEntry(step=step.index, name=param.name,
                                         source=param.source,
                                         base=param.value, context={}))

        i = 0
        while i < len(queue):
            entry = queue[i]
            i += 1
            tokens = self.capture.tokens
            if (entry.step, entry.name) in tokens.one_time:
                self.dispositions.append(ParamDisposition(
                    entry.step, entry.name, entry.source, "exempt-one-time"))
                continue
            if entry.name in tokens.session_tokens:
                self.dispositions.append(ParamDisposition(
                    entry.step, entry.name, entry.source, "exempt-session-token"))
                continue
            if (entry.step, entry.name) in self.dependency_map:
                self.dispositions.append(ParamDisposition(
                    entry.step, entry.name, entry.source, "exempt-dependent"))
                continue
            self._fuzz_param(entry, queue, findings, seen_rules)

        findings.sort(key=lambda f: (f.step, f.param, f.rule))
        return ScanOutcome(findings=findings, inconclusive=self.inconclusive,
                           counters=self.counters,
                           dependency_map=self.dependency_map,
                           dispositions=self.dispositions)

    # -- per-parameter fuzzing ---------------------------------------------

    def _advance_to(self, cursor: WorkflowCursor, step: int) -> list[TraceStep]:
        """Run steps 0..step-1 with the script's own values."""
        steps: list[TraceStep] = []
        for _ in range(step):
            positioned = cursor.position()
            evaluation = positioned.evaluate()
            if not evaluation.accepted:
                raise ScanError(
                    "valid replay now fails client-side; the capture is stale, "
                    "re-run capture")
            steps.append(cursor.submit(positioned, evaluation=evaluation))
        return steps

    def _fuzz_param(self, entry: _QueueEntry, queue: list[_QueueEntry],
                    findings: list[Finding],
                    seen_rules: set[tuple[int, str, str]]) -> None:
        control = None
        form = self.capture.trace1.steps[entry.step].form
        if entry.source != SOURCE_QUERY:
            control = form.control_named(entry.name)
        hint = infer_type(control, entry.base)
        generator = mutate(control, entry.base, hint, seed=self.config.seed,
                           violate_restrictions=self.config.violate_restrictions)

        forced = 0
        found = 0
        exhausted = False
        while forced < self.config.budget and not exhausted:
            session = self.make_session()
            try:
                cursor = WorkflowCursor(self.capture.script, session,
                                        target=self.capture.target)
                prior_steps = self._advance_to(cursor, entry.step)
                positioned = cursor.position(overrides=entry.context)
            except (ReplayError, TransportError) as exc:
                session.close()
                raise ScanError(
                    f"replay to step {entry.step} failed ({exc}); "
                    f"re-run capture") from exc

            rejected: Optional[MutationCandidate] = None
            evaluation = None
            while True:
                candidate = next(generator, None)
                if candidate is None:
                    exhausted = True
                    break
                evaluation = positioned.evaluate({entry.name: candidate.value})
                self._enqueue_revealed(entry, candidate, evaluation, queue)
                if evaluation.accepted:
                    continue  # client-side accepted: cancel without sending
                rejected = candidate
                break

            if rejected is None:
                session.close()
                break

            outcome = self._force_and_classify(cursor, positioned, prior_steps,
                                               entry, rejected, evaluation)
            forced += 1
            session.close()
            if outcome is None:
                continue  # inconclusive, already recorded
            if outcome[0]:
                finding = outcome[1]
                rule_key = (finding.step, finding.param, finding.rule)
                if rule_key not in seen_rules:
                    seen_rules.add(rule_key)
                    findings.append(finding)
                    found += 1

        if forced == 0:
            self.dispositions.append(ParamDisposition(
                entry.step, entry.name, entry.source, "no-client-rejected",
                detail="no mutation failed the client-side gate"))
        else:
            self.dispositions.append(ParamDisposition(
                entry.step, entry.name, entry.source, "fuzzed",
                findings=found, detail=f"{forced} forced attempts"))

    def _enqueue_revealed(self, entry: _QueueEntry, candidate: MutationCandidate,
                          evaluation, queue: list[_QueueEntry]) -> None:
        for control in evaluation.revealed:
            key = (entry.step, control.name)
            if not control.name or key in self._queued:
                continue
            self._queued.add(key)
            context = dict(entry.context)
            context[entry.name] = candidate.value
            queue.append(_QueueEntry(step=entry.step, name=control.name,
                                     source=control.source, base=control.value,
                                     context=context))
            logger.info("newly appeared field %r enqueued at step %d",
                        control.name, entry.step)

    def _force_and_classify(self, cursor: WorkflowCursor,
                            positioned: PositionedStep,
                            prior_steps: list[TraceStep], entry: _QueueEntry,
                            candidate: MutationCandidate, evaluation):
        """Submit the client-rejected candidate and classify the response.

        Returns (accepted, Finding|None), or None when the attempt stayed
        inconclusive after one retry.
        """
        forced_pos = positioned
        if entry.source == SOURCE_QUERY:
            forced_pos = dc_replace(positioned, query_values=[
                (n, candidate.value if n == entry.name else v)
                for n, v in positioned.query_values])

        try:
            trace_step = cursor.submit(forced_pos, evaluation=evaluation)
        except TransportError:
            retry = self._retry_force(entry, candidate)
            if retry is None:
                self.counters.record("inconclusive")
                self.inconclusive.append({
                    "step": entry.step, "param": entry.name,
                    "value": candidate.value, "rule": candidate.rule,
                    "reason": "transport failure (after retry)"})
                return None
            prior_steps, trace_step = retry

        values = user_value_map(prior_steps + [trace_step], entry.step)
        values[entry.name] = candidate.value
        outcome = classify_response(self.capture.features.for_step(entry.step),
                                    trace_step.document, trace_step.response,
                                    values)
        cause = outcome.missing[0]["kind"] if outcome.missing else None
        self.counters.record("accepted" if outcome.accepted else "rejected",
                             cause=cause)
        if not outcome.accepted:
            return (False, None)

        finding = Finding(
            step=entry.step,
            param=entry.name,
            source=entry.source,
            base_value=entry.base,
            mutated_value=candidate.value,
            rule=candidate.rule,
            evidence={
                "features": outcome.matched,
                "request": trace_step.request.describe()[:EXCERPT_LIMIT],
                "response_status": trace_step.response.status,
                "response_excerpt": trace_step.response.text()[:EXCERPT_LIMIT],
            },
            timestamp=_now(),
        )
        return (True, finding)

    def _retry_force(self, entry: _QueueEntry, candidate: MutationCandidate):
        """One full fresh retry of a forced attempt after a transport flap."""
        session = self.make_session()
        try:
            cursor = WorkflowCursor(self.capture.script, session,
                                    target=self.capture.target)
            prior_steps = self._advance_to(cursor, entry.step)
            positioned = cursor.position(overrides=entry.context)
            evaluation = positioned.evaluate({entry.name: candidate.value})
            forced_pos = positioned
            if entry.source == SOURCE_QUERY:
                forced_pos = dc_replace(positioned, query_values=[
                    (n, candidate.value if n == entry.name else v)
                    for n, v in positioned.query_values])
            trace_step = cursor.submit(forced_pos, evaluation=evaluation)
            return prior_steps, trace_step
        except (ReplayError, TransportError) as exc:
            logger.warning("retry of forced attempt failed: %s", exc)
            return None
        finally:
            session.close()


def run_scan(capture_result: CaptureResult, config: FuzzConfig,
             make_session: Callable[[], Session],
             counters: Optional[Counters] = None) -> ScanOutcome:
    plan = FuzzPlan(capture=capture_result, config=config)
    return Fuzzer(plan, make_session, counters=counters).scan()
