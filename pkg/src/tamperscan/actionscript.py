"""Action scripts and the replay engine.

A script is the analyst's recording of one valid walk through the workflow:
navigate, fill some fields, click submit, possibly fill and click again. Each
click ends one workflow step. Replaying a script always starts from the
navigate action and re-reads server-generated values (hidden fields, query
pairs) from the live responses, so fresh tokens are picked up on every run
and nothing is ever rebuilt from a previously recorded response.

Script file format (JSON, UTF-8)::

    {"base_url": "http://host:port",
     "actions": [{"navigate": "/stepA"},
                 {"fill": {"at": "#amt", "value": "1"}},
                 {"choose": {"at": "#from", "value": "acct-001"}},
                 {"click": "#go"}]}

Locators are ``#id``, ``form[i]/name=NAME``, or ``path:0/2/1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional
from urllib.parse import parse_qsl, urljoin, urlsplit

from .errors import ReplayError, ScriptError, TransportError
from .htmlmodel import (
    Document,
    Form,
    FormEvaluation,
    InputControl,
    Locator,
    Param,
    SOURCE_QUERY,
    evaluate_form,
    extract_params,
    parse,
    parse_form,
    submission_values,
)
from .session import HttpRequest, HttpResponse, Session, build_submission

logger = logging.getLogger(__name__)


@dataclass
class Action:
    kind: str  # navigate | fill | choose | click
    url: str = ""
    locator: Optional[Locator] = None
    value: str = ""


@dataclass
class ScriptStep:
    """All fill/choose actions leading up to one submit click."""
    fills: list[Action]
    click: Locator


@dataclass
class ActionScript:
    base_url: str
    actions: list[Action]
    steps: list[ScriptStep]

    @property
    def step_count(self) -> int:
        return len(self.steps)


def parse_script(text: str) -> ActionScript:
    """Parse and validate a script document."""
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise ScriptError(f"script is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("actions"), list):
        raise ScriptError("script must be an object with an 'actions' list")
    raw_actions = data["actions"]
    if not raw_actions:
        raise ScriptError("script has no actions")

    actions: list[Action] = []
    for i, item in enumerate(raw_actions):
        if not isinstance(item, dict) or len(item) != 1:
            raise ScriptError(f"action {i}: expected exactly one action key")
        kind, payload = next(iter(item.items()))
        if kind == "navigate":
            if i != 0:
                raise ScriptError(f"action {i}: navigate is only allowed first")
            if not isinstance(payload, str) or not payload:
                raise ScriptError(f"action {i}: navigate needs a URL string")
            actions.append(Action(kind="navigate", url=payload))
        elif kind in ("fill", "choose"):
            if not isinstance(payload, dict) or "at" not in payload or "value" not in payload:
                raise ScriptError(f"action {i}: {kind} needs 'at' and 'value'")
            try:
                locator = Locator.parse(payload["at"])
            except ValueError as exc:
                raise ScriptError(f"action {i}: {exc}") from exc
            actions.append(Action(kind=kind, locator=locator,
                                  value=str(payload["value"])))
        elif kind == "click":
            if not isinstance(payload, str):
                raise ScriptError(f"action {i}: click needs a locator string")
            try:
                locator = Locator.parse(payload)
            except ValueError as exc:
                raise ScriptError(f"action {i}: {exc}") from exc
            actions.append(Action(kind="click", locator=locator))
        else:
            raise ScriptError(f"action {i}: unknown action kind {kind!r}")

    if actions[0].kind != "navigate":
        raise ScriptError("script must start with a navigate action")

    steps: list[ScriptStep] = []
    pending: list[Action] = []
    for action in actions[1:]:
        if action.kind == "click":
            steps.append(ScriptStep(fills=list(pending), click=action.locator))
            pending.clear()
        else:
            pending.append(action)
    if not steps:
        raise ScriptError("script contains no submit click")
    if pending:
        raise ScriptError("trailing fill/choose actions after the last click")

    return ActionScript(base_url=str(data.get("base_url", "")),
                        actions=actions, steps=steps)


def load_script(path: str) -> ActionScript:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_script(fh.read())


# ---------------------------------------------------------------------------
# traces

@dataclass
class TraceStep:
    index: int
    page_url: str
    form: Form
    params: list[Param]  # as submitted: query pairs first, then controls
    clicked: Locator
    request: HttpRequest
    response: HttpResponse
    document: object  # Document | JsonDocument | RawDocument
    revealed: list[InputControl] = field(default_factory=list)

    def user_params(self) -> list[Param]:
        return [p for p in self.params if p.source == "UserInput"]

    def param_named(self, name: str) -> Optional[Param]:
        for p in self.params:
            if p.name == name:
                return p
        return None


@dataclass
class SubmissionTrace:
    steps: list[TraceStep]
    completed: bool
    halted_step: Optional[int] = None
    halt_violations: list = field(default_factory=list)


@dataclass
class PositionedStep:
    """A workflow step ready to submit: the live form with script fills and
    overrides applied but nothing sent yet."""
    index: int
    page_url: str
    form: Form
    values: dict[str, str]
    query_values: list[tuple[str, str]]
    clicked_control: Optional[InputControl]
    click_locator: Locator

    def evaluate(self, extra: Optional[Mapping[str, str]] = None) -> FormEvaluation:
        values = dict(self.values)
        if extra:
            values.update(extra)
        return evaluate_form(self.form, values)


class WorkflowCursor:
    """Drives one workflow run step by step over a single session.

    ``position()`` resolves the next step's form on the current page and
    applies the script's fills; ``submit()`` evaluates the client-side gate
    and sends the submission, advancing the cursor to the response.
    """

    def __init__(self, script: ActionScript, session: Session,
                 target: Optional[str] = None):
        self.script = script
        self.session = session
        base = target or script.base_url
        if not base:
            raise ReplayError("no target base URL for replay")
        self.base_url = base
        nav = urljoin(base, script.actions[0].url)
        parts = urlsplit(nav)
        request = HttpRequest(
            method="GET",
            url=nav.split("?")[0],
            query_params=parse_qsl(parts.query, keep_blank_values=True))
        try:
            self.response = session.send(request)
        except TransportError as exc:
            exc.step = 0
            raise
        self.document = parse(self.response.body, self.response.content_type)
        self.next_index = 0

    def position(self, overrides: Optional[Mapping[str, str]] = None) -> PositionedStep:
        index = self.next_index
        if index >= len(self.script.steps):
            raise ReplayError(f"no step {index} in script")
        if not isinstance(self.document, Document):
            raise ReplayError(f"step {index}: previous response is not an HTML page",
                              step=index)
        step = self.script.steps[index]
        doc = self.document
        click_node = doc.resolve(step.click)
        if click_node is None:
            raise ReplayError(f"step {index}: submit locator {step.click} not found",
                              step=index, locator=str(step.click))
        located = None
        for i, form_node in enumerate(doc.form_nodes()):
            for candidate in form_node.walk():
                if candidate is click_node:
                    located = (i, form_node)
                    break
            if located:
                break
        if located is None:
            raise ReplayError(
                f"step {index}: submit locator {step.click} is outside any form",
                step=index, locator=str(step.click))
        form_index, form_node = located
        form = parse_form(doc, form_node, index=form_index)
        clicked_control = None
        click_name = click_node.attrs.get("name", "")
        if click_name:
            clicked_control = form.control_named(click_name)

        page_url = self.response.url
        live_params = extract_params(form, page_url)
        # query pairs also enter the value map so CLV rules can see them;
        # submission pairs are still derived from controls only
        values = {p.name: p.value for p in live_params}
        query_values = [(p.name, p.value) for p in live_params
                        if p.source == SOURCE_QUERY]

        for action in step.fills:
            node = doc.resolve(action.locator)
            if node is None:
                raise ReplayError(f"step {index}: locator {action.locator} not found",
                                  step=index, locator=str(action.locator))
            name = node.attrs.get("name", "")
            control = form.control_named(name) if name else None
            if control is None:
                raise ReplayError(
                    f"step {index}: locator {action.locator} is not a control "
                    f"of the step form", step=index, locator=str(action.locator))
            if control.kind == "checkbox" and not action.value:
                values.pop(control.name, None)
            else:
                values[control.name] = action.value

        query_names = {name for name, _ in query_values}
        if overrides:
            for name, value in overrides.items():
                if name in query_names:
                    query_values = [(n, value if n == name else v)
                                    for n, v in query_values]
                values[name] = value

        return PositionedStep(index=index, page_url=page_url, form=form,
                              values=values, query_values=query_values,
                              clicked_control=clicked_control,
                              click_locator=step.click)

    def submit(self, positioned: PositionedStep,
               evaluation: Optional[FormEvaluation] = None,
               extra: Optional[Mapping[str, str]] = None) -> TraceStep:
        """Send the positioned step and advance to its response."""
        if evaluation is None:
            evaluation = positioned.evaluate(extra)
        pairs = submission_values(positioned.form, evaluation,
                                  positioned.clicked_control)
        request = build_submission(positioned.form, pairs, positioned.page_url,
                                   query_values=positioned.query_values or None)
        try:
            response = self.session.send(request)
        except TransportError as exc:
            exc.step = positioned.index
            raise
        document = parse(response.body, response.content_type)

        control_source = {}
        for control in evaluation.controls:
            if control.name and control.name not in control_source:
                control_source[control.name] = (control.source, control.locator)
        params = [Param(name=n, value=v, source=SOURCE_QUERY,
                        locator=positioned.form.locator)
                  for n, v in positioned.query_values]
        for name, value in pairs:
            source, locator = control_source.get(name, ("UserInput", None))
            params.append(Param(name=name, value=value, source=source,
                                locator=locator))

        trace_step = TraceStep(index=positioned.index,
                               page_url=positioned.page_url,
                               form=positioned.form, params=params,
                               clicked=positioned.click_locator,
                               request=request, response=response,
                               document=document,
                               revealed=evaluation.revealed)
        self.response = response
        self.document = document
        self.next_index = positioned.index + 1
        return trace_step


def replay(script: ActionScript, session: Session,
           overrides: Optional[Mapping[int, Mapping[str, str]]] = None,
           force: frozenset = frozenset(),
           target: Optional[str] = None,
           stop_after: Optional[int] = None) -> SubmissionTrace:
    """Replay the script, submitting one step at a time.

    ``overrides`` maps step index to name/value replacements applied after the
    script's own fills; ``force`` lists steps submitted even when the client
    side rejects the values; ``stop_after`` truncates the run after that step.
    Replay halts with a partial trace when an unforced step fails the
    client-side gate.
    """
    overrides = overrides or {}
    cursor = WorkflowCursor(script, session, target=target)
    steps: list[TraceStep] = []
    last = len(script.steps) - 1 if stop_after is None else stop_after
    for index in range(last + 1):
        step_overrides = overrides.get(index, {})
        positioned = cursor.position(overrides=step_overrides)

        known = ({c.name for c in positioned.form.controls if c.name}
                 | {name for name, _ in positioned.query_values})
        evaluation = positioned.evaluate()
        known |= {c.name for c in evaluation.controls if c.name}
        unknown = [n for n in step_overrides if n not in known]
        if unknown:
            raise ReplayError(
                f"step {index}: overrides for unknown parameters {unknown}",
                step=index)

        if not evaluation.accepted and index not in force:
            return SubmissionTrace(steps=steps, completed=False,
                                   halted_step=index,
                                   halt_violations=evaluation.violations)
        steps.append(cursor.submit(positioned, evaluation=evaluation))

    return SubmissionTrace(steps=steps,
                           completed=(last == len(script.steps) - 1))
