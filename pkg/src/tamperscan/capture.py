"""Capture phase: two valid runs, then token, dependency, and feature analysis.

The capturer replays the analyst's script twice against fresh sessions and
cross-examines the traces:

* server-generated parameters (hidden fields, query pairs) whose values differ
  between the runs are one-time token candidates; names recurring across steps
  with a stable per-run value are session tokens;
* a parameter whose normalized value equals any parameter of the immediately
  preceding request is a dependency candidate;
* submit-button locations, reflected user values, and acceptance keywords that
  reproduce in both runs become the evidence used to classify later responses.

One-time candidates are then confirmed by re-submitting the step with the
already-spent value pinned while everything else stays fresh: a genuine
one-time token provokes a rejection, a decorative field does not.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .actionscript import ActionScript, SubmissionTrace, TraceStep, replay
from .errors import CaptureError, ReplayError, TransportError
from .htmlmodel import Locator, SOURCE_HIDDEN, SOURCE_QUERY, SOURCE_USER
from .mutate import normalize_value
from .session import Session

logger = logging.getLogger(__name__)

SERVER_SOURCES = (SOURCE_HIDDEN, SOURCE_QUERY)

# Acceptance keyword heuristics: a text counts as acceptance evidence when the
# positive list matches and the negative list does not.
KEYWORD_POSITIVE = re.compile(
    r"\b(?:success(?:ful)?|done|completed?|executed?|ok(?:ay)?|updated?)\b",
    re.IGNORECASE)
KEYWORD_NEGATIVE = re.compile(
    r"\b(?:not|sorry|fail(?:ed)?|err(?:or)?)\b|(?:[a-z]n\'t\b)",
    re.IGNORECASE)

MIN_REFLECTION_LENGTH = 2  # single characters occur everywhere
DEFAULT_OCCURRENCE_LIMIT = 3

MODE_NUMERIC = "numeric"
MODE_STRING = "string"

NUMERIC_TEXT_RE = re.compile(r"[\d,]+(?:\.\d+)?")


def is_acceptance_text(text: str) -> bool:
    return bool(KEYWORD_POSITIVE.search(text)) and not KEYWORD_NEGATIVE.search(text)


def numeric_reflection_pattern(value: str) -> Optional[re.Pattern]:
    """Separator-tolerant pattern for a numeric value: up to one non-digit is
    allowed between consecutive digits, so ``12345`` finds ``$12,345.00``."""
    digits = re.sub(r"\D", "", value)
    if not digits:
        return None
    return re.compile("[^\\d]?".join(re.escape(d) for d in digits))


def reflection_mode(value: str) -> str:
    return MODE_NUMERIC if NUMERIC_TEXT_RE.fullmatch(value) else MODE_STRING


def count_occurrences(document, value: str, mode: str) -> int:
    """Total occurrences of ``value`` across the document's text leaves."""
    total = 0
    if mode == MODE_NUMERIC:
        pattern = numeric_reflection_pattern(value)
        if pattern is None:
            return 0
        for _, text in document.leaf_texts():
            total += sum(1 for _ in pattern.finditer(text))
    else:
        needle = value.strip()
        if not needle:
            return 0
        for _, text in document.leaf_texts():
            total += text.count(needle)
    return total


def find_reflection(document, value: str, mode: str):
    """First leaf containing ``value``; returns (locator, excerpt) or None."""
    if mode == MODE_NUMERIC:
        pattern = numeric_reflection_pattern(value)
        if pattern is None:
            # mutated value lost its digits; fall back to substring search
            return find_reflection(document, value, MODE_STRING)
        for locator, text in document.leaf_texts():
            if pattern.search(text):
                return locator, text
        return None
    needle = value.strip()
    if not needle:
        return None
    for locator, text in document.leaf_texts():
        if needle in text:
            return locator, text
    return None


# ---------------------------------------------------------------------------
# analysis results

@dataclass
class ReflectionFeature:
    param: str
    mode: str  # numeric | string


@dataclass
class StepFeatures:
    step: int
    buttons: list[str] = field(default_factory=list)  # locator strings
    reflections: list[ReflectionFeature] = field(default_factory=list)
    keyword: bool = False
    analyst_regex: Optional[str] = None

    def empty(self) -> bool:
        return not (self.buttons or self.reflections or self.keyword
                    or self.analyst_regex)


@dataclass
class FeatureSet:
    steps: list[StepFeatures]

    def for_step(self, index: int) -> StepFeatures:
        return self.steps[index]


@dataclass
class TokenRegistry:
    one_time: set[tuple[int, str]] = field(default_factory=set)
    session_tokens: set[str] = field(default_factory=set)
    unconfirmed: set[tuple[int, str]] = field(default_factory=set)

    def is_exempt(self, step: int, name: str) -> bool:
        return (step, name) in self.one_time or name in self.session_tokens


@dataclass
class DepCandidate:
    step: int
    name: str
    value: str
    matched: list[str]  # parameter names of the preceding request


# ---------------------------------------------------------------------------
# detectors

def detect_token_candidates(trace1: SubmissionTrace, trace2: SubmissionTrace):
    """One-time candidates and session tokens from two step-aligned traces.

    Only server-generated parameters (hidden fields, query-string pairs) are
    considered; cookies never enter the parameter lists at all.
    """
    if len(trace1.steps) != len(trace2.steps):
        raise CaptureError(
            f"capture runs disagree on step count "
            f"({len(trace1.steps)} vs {len(trace2.steps)})")

    def server_values(trace: SubmissionTrace) -> dict[str, list[tuple[int, str]]]:
        by_name: dict[str, list[tuple[int, str]]] = {}
        for step in trace.steps:
            for p in step.params:
                if p.source in SERVER_SOURCES:
                    by_name.setdefault(p.name, []).append((step.index, p.value))
        return by_name

    values1 = server_values(trace1)
    values2 = server_values(trace2)

    session_tokens: set[str] = set()
    for name, occurrences in values1.items():
        if len(occurrences) < 2 or name not in values2:
            continue
        run1 = {v for _, v in occurrences}
        run2 = {v for _, v in values2[name]}
        if len(run1) == 1 and len(run2) == 1 and run1 != run2:
            session_tokens.add(name)

    one_time: list[tuple[int, str]] = []
    for step1, step2 in zip(trace1.steps, trace2.steps):
        params2 = {p.name: p.value for p in step2.params
                   if p.source in SERVER_SOURCES}
        for p in step1.params:
            if p.source not in SERVER_SOURCES or p.name in session_tokens:
                continue
            other = params2.get(p.name)
            if other is not None and other != p.value:
                one_time.append((step1.index, p.name))
    return one_time, session_tokens


def detect_dependency_candidates(trace: SubmissionTrace) -> list[DepCandidate]:
    """Parameters whose normalized value equals any parameter value of the
    immediately preceding request. Names are ignored; values are compared
    after numeric normalization (separators stripped) or trimming."""
    candidates: list[DepCandidate] = []
    for k in range(1, len(trace.steps)):
        previous = [(p.name, normalize_value(p.value))
                    for p in trace.steps[k - 1].params]
        for p in trace.steps[k].params:
            normalized = normalize_value(p.value)
            matched = [name for name, nv in previous if nv == normalized]
            if matched:
                candidates.append(DepCandidate(step=k, name=p.name,
                                               value=p.value, matched=matched))
    return candidates


def user_value_map(steps: list[TraceStep], upto: int) -> dict[str, str]:
    """User-supplied values submitted up to and including step ``upto``,
    keyed by name; the first submission of a name wins."""
    values: dict[str, str] = {}
    for step in steps[:upto + 1]:
        for p in step.params:
            if p.source == SOURCE_USER:
                values.setdefault(p.name, p.value)
    return values


def detect_valid_features(script: ActionScript, trace1: SubmissionTrace,
                          trace2: SubmissionTrace,
                          occurrence_limit: int = DEFAULT_OCCURRENCE_LIMIT,
                          analyst_regex: Optional[str] = None) -> FeatureSet:
    """Derive the per-step acceptance features reproducible in both runs.

    Per step: (a) the next step's submit button located in this step's
    response; (b) user-supplied values reflected in the response leaves,
    numeric values matched separator-tolerantly, disqualified above the
    occurrence limit; (c) the acceptance keyword when no reflections exist;
    (d) the analyst regex when a step would otherwise have no features.
    """
    steps: list[StepFeatures] = []
    for index, (step1, step2) in enumerate(zip(trace1.steps, trace2.steps)):
        features = StepFeatures(step=index)

        if index + 1 < len(script.steps):
            button = script.steps[index + 1].click
            doc1, doc2 = step1.document, step2.document
            ok1 = getattr(doc1, "resolve", lambda loc: None)(button) is not None
            ok2 = getattr(doc2, "resolve", lambda loc: None)(button) is not None
            if ok1 and ok2:
                features.buttons.append(str(button))
            else:
                logger.warning("step %d: next submit button %s not reproducible",
                               index, button)

        for name, value in user_value_map(trace1.steps, index).items():
            if len(value) < MIN_REFLECTION_LENGTH:
                continue
            mode = reflection_mode(value)
            n1 = count_occurrences(step1.document, value, mode)
            n2 = count_occurrences(step2.document, value, mode)
            if n1 == 0 or n2 == 0:
                continue
            if n1 > occurrence_limit or n2 > occurrence_limit:
                logger.debug("step %d: %s reflected %d/%d times, over limit %d",
                             index, name, n1, n2, occurrence_limit)
                continue
            features.reflections.append(ReflectionFeature(param=name, mode=mode))

        if not features.reflections:
            kw1 = any(is_acceptance_text(t) for _, t in step1.document.leaf_texts())
            kw2 = any(is_acceptance_text(t) for _, t in step2.document.leaf_texts())
            features.keyword = kw1 and kw2

        if features.empty():
            if analyst_regex:
                features.analyst_regex = analyst_regex
            else:
                raise CaptureError(
                    f"step {index}: no reproducible acceptance features; "
                    f"supply an acceptance regex (--accept-regex)")
        steps.append(features)
    return FeatureSet(steps=steps)


# ---------------------------------------------------------------------------
# response classification (shared with the fuzzer)

@dataclass
class Classification:
    accepted: bool
    matched: list[dict] = field(default_factory=list)
    missing: list[dict] = field(default_factory=list)


def classify_response(features: StepFeatures, document, response,
                      current_values: Mapping[str, str]) -> Classification:
    """Locate every applicable key feature in a step response.

    Accepted only when all of them are present. Reflection features are
    instantiated with the value actually submitted this attempt (mutated or
    not), so a server that quietly discards a mutation does not count as
    accepting it. An empty body falls back to the HTTP status code.
    """
    if not response.body.strip():
        ok = 200 <= response.status < 300
        detail = {"kind": "status", "detail": str(response.status)}
        return Classification(accepted=ok,
                              matched=[detail] if ok else [],
                              missing=[] if ok else [detail])

    matched: list[dict] = []
    missing: list[dict] = []

    for button in features.buttons:
        node = None
        resolve = getattr(document, "resolve", None)
        if resolve is not None:
            node = resolve(Locator.parse(button))
        if node is not None:
            matched.append({"kind": "button", "locator": button})
        else:
            missing.append({"kind": "button", "locator": button})

    for feature in features.reflections:
        value = current_values.get(feature.param)
        hit = find_reflection(document, value, feature.mode) if value else None
        if hit:
            locator, text = hit
            matched.append({"kind": "reflection", "param": feature.param,
                            "mode": feature.mode, "at": str(locator),
                            "excerpt": text[:120]})
        else:
            missing.append({"kind": "reflection", "param": feature.param,
                            "mode": feature.mode})

    if features.keyword:
        hit = next(((loc, t) for loc, t in document.leaf_texts()
                    if is_acceptance_text(t)), None)
        if hit:
            matched.append({"kind": "keyword", "at": str(hit[0]),
                            "excerpt": hit[1][:120]})
        else:
            missing.append({"kind": "keyword"})

    if features.analyst_regex:
        text = response.text()
        if re.search(features.analyst_regex, text):
            matched.append({"kind": "analyst-regex"})
        else:
            missing.append({"kind": "analyst-regex"})

    return Classification(accepted=not missing and bool(matched),
                          matched=matched, missing=missing)


# ---------------------------------------------------------------------------
# the capturer

@dataclass
class CaptureResult:
    script: ActionScript
    target: str
    trace1: SubmissionTrace
    trace2: SubmissionTrace
    tokens: TokenRegistry
    dependency_candidates: list[DepCandidate]
    features: FeatureSet


class Capturer:
    """Runs the capture phase end to end."""

    def __init__(self, target: str, make_session: Callable[[], Session],
                 occurrence_limit: int = DEFAULT_OCCURRENCE_LIMIT,
                 accept_regex: Optional[str] = None):
        self.target = target
        self.make_session = make_session
        self.occurrence_limit = occurrence_limit
        self.accept_regex = accept_regex

    def run(self, script: ActionScript) -> CaptureResult:
        trace1 = self._valid_run(script, which="first")
        session2 = self.make_session()
        trace2 = self._valid_run(script, which="second", session=session2)

        dependency_candidates = detect_dependency_candidates(trace1)
        one_time_candidates, session_tokens = detect_token_candidates(trace1, trace2)
        features = detect_valid_features(script, trace1, trace2,
                                         occurrence_limit=self.occurrence_limit,
                                         analyst_regex=self.accept_regex)

        registry = TokenRegistry(session_tokens=session_tokens)
        for step, name in one_time_candidates:
            if self._confirm_one_time(script, trace2, session2, features,
                                      step, name):
                registry.one_time.add((step, name))
            else:
                registry.unconfirmed.add((step, name))
        session2.close()

        return CaptureResult(script=script, target=self.target,
                             trace1=trace1, trace2=trace2, tokens=registry,
                             dependency_candidates=dependency_candidates,
                             features=features)

    def _valid_run(self, script: ActionScript, which: str,
                   session: Optional[Session] = None) -> SubmissionTrace:
        own = session is None
        if own:
            session = self.make_session()
        try:
            trace = replay(script, session, target=self.target)
        except ReplayError as exc:
            raise CaptureError(
                f"{which} valid run failed at step {exc.step}: {exc}. "
                f"If the server rejects repeated submissions, vary the "
                f"script inputs and retry.") from exc
        finally:
            if own:
                session.close()
        if not trace.completed:
            raise CaptureError(
                f"{which} valid run was rejected client-side at step "
                f"{trace.halted_step}: {trace.halt_violations}")
        return trace

    def _confirm_one_time(self, script: ActionScript, trace2: SubmissionTrace,
                          session2: Session, features: FeatureSet,
                          step: int, name: str) -> bool:
        """Re-submit the step with the just-spent value for ``name`` pinned
        while every other parameter is fresh. Confirmed one-time when the
        response lacks the step's key features."""
        spent = trace2.steps[step].param_named(name)
        if spent is None:
            return False
        try:
            probe = replay(script, session2,
                           overrides={step: {name: spent.value}},
                           force=frozenset({step}), target=self.target,
                           stop_after=step)
        except (ReplayError, TransportError) as exc:
            logger.warning("one-time confirmation of (%d, %s) failed: %s",
                           step, name, exc)
            return False
        if not probe.steps or probe.steps[-1].index != step:
            return False
        probe_step = probe.steps[-1]
        values = user_value_map(probe.steps, step)
        outcome = classify_response(features.for_step(step), probe_step.document,
                                    probe_step.response, values)
        if not outcome.accepted:
            logger.info("confirmed one-time token (%d, %s)", step, name)
            return True
        logger.info("candidate (%d, %s) resent without rejection; left fuzzable",
                    step, name)
        return False
