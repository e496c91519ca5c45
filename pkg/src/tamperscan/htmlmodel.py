"""Document model: tolerant HTML parsing, forms, and declarative client logic.

Responses are parsed into a small node tree with stable locators so that
features learned in one run can be located again in another. Client-side
behavior that real applications implement in JavaScript (validations, hidden
field pre-processing, conditionally revealed inputs) is declared in a
``data-clv`` form attribute holding a JSON descriptor, which keeps the scanner
generic and the test bed honest about what it enforces.

CLV descriptor grammar::

    {"validate": [{"field": str, "pattern": str}
                  | {"field": str, "min": num, "max": num}
                  | {"field": str, "required": true}],
     "transform": [{"target": str, "fn": "concat"|"base64concat",
                    "inputs": [str, ...], "sep": str}],
     "reveal": [{"when": {"field": str, "equals": str},
                 "add": [control-spec, ...]}],
     "ajax": bool}

A control-spec is ``{"name": str, "kind": str, "value": str, "required": bool,
"pattern": str, "min": num, "max": num, "maxlength": int}`` with everything
but ``name`` optional. Base64 is the standard alphabet with padding over
UTF-8 input.
"""

from __future__ import annotations

import base64
import json
import logging
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Iterator, Optional
from urllib.parse import parse_qsl, urlsplit

from .errors import ConfigError

logger = logging.getLogger(__name__)

VOID_ELEMENTS = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}

# Parameter source classifications. Every request parameter is exactly one.
SOURCE_USER = "UserInput"
SOURCE_HIDDEN = "HiddenField"
SOURCE_QUERY = "QueryString"
SOURCE_COOKIE = "Cookie"

CONTROL_TAGS = {"input", "select", "textarea", "button"}
SUBMIT_KINDS = {"submit", "image", "button"}


# ---------------------------------------------------------------------------
# node tree

@dataclass
class Node:
    tag: str  # element name, or "#text"
    attrs: dict[str, str] = field(default_factory=dict)
    children: list["Node"] = field(default_factory=list)
    text: str = ""
    path: tuple[int, ...] = ()

    def is_text(self) -> bool:
        return self.tag == "#text"

    def walk(self) -> Iterator["Node"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def text_content(self) -> str:
        if self.is_text():
            return self.text
        return "".join(c.text_content() for c in self.children)


class _TreeBuilder(HTMLParser):
    """Error-recovering tree construction: unclosed tags are implicitly
    closed, stray end tags ignored."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = Node(tag="#document")
        self._stack = [self.root]

    def _append(self, node: Node, push: bool) -> None:
        self._stack[-1].children.append(node)
        if push:
            self._stack.append(node)

    def handle_starttag(self, tag, attrs):
        attr_map = {}
        for name, value in attrs:
            attr_map.setdefault(name, value if value is not None else "")
        node = Node(tag=tag, attrs=attr_map)
        self._append(node, push=tag not in VOID_ELEMENTS)

    def handle_startendtag(self, tag, attrs):
        attr_map = {}
        for name, value in attrs:
            attr_map.setdefault(name, value if value is not None else "")
        self._append(Node(tag=tag, attrs=attr_map), push=False)

    def handle_endtag(self, tag):
        for i in range(len(self._stack) - 1, 0, -1):
            if self._stack[i].tag == tag:
                del self._stack[i:]
                return
        # no matching open tag: ignore

    def handle_data(self, data):
        if data:
            self._append(Node(tag="#text", text=data), push=False)

    def finish(self) -> Node:
        self.close()
        _assign_paths(self.root, ())
        return self.root


def _assign_paths(node: Node, path: tuple[int, ...]) -> None:
    node.path = path
    for i, child in enumerate(node.children):
        _assign_paths(child, path + (i,))


# ---------------------------------------------------------------------------
# locators

@dataclass(frozen=True)
class Locator:
    """Reference to a node: by element id, by form ordinal plus control name,
    or by child-index path from the document root."""

    kind: str  # "id" | "form" | "path"
    ident: str = ""
    form_index: int = 0
    indices: tuple[int, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "Locator":
        if text.startswith("#") and len(text) > 1:
            return cls(kind="id", ident=text[1:])
        m = re.fullmatch(r"form\[(\d+)\]/name=(.+)", text)
        if m:
            return cls(kind="form", form_index=int(m.group(1)), ident=m.group(2))
        m = re.fullmatch(r"path:(\d+(?:/\d+)*)", text)
        if m:
            return cls(kind="path",
                       indices=tuple(int(p) for p in m.group(1).split("/")))
        raise ValueError(f"unknown locator syntax: {text!r}")

    def __str__(self) -> str:
        if self.kind == "id":
            return f"#{self.ident}"
        if self.kind == "form":
            return f"form[{self.form_index}]/name={self.ident}"
        return "path:" + "/".join(str(i) for i in self.indices)


def locator_for(node: Node) -> Locator:
    node_id = node.attrs.get("id") if not node.is_text() else None
    if node_id:
        return Locator(kind="id", ident=node_id)
    return Locator(kind="path", indices=node.path)


# ---------------------------------------------------------------------------
# documents

class Document:
    """Parsed HTML response."""

    kind = "html"

    def __init__(self, root: Node):
        self.root = root

    def resolve(self, locator: Locator) -> Optional[Node]:
        if locator.kind == "id":
            for node in self.root.walk():
                if not node.is_text() and node.attrs.get("id") == locator.ident:
                    return node
            return None
        if locator.kind == "form":
            forms = self.form_nodes()
            if locator.form_index >= len(forms):
                return None
            for node in forms[locator.form_index].walk():
                if not node.is_text() and node.attrs.get("name") == locator.ident:
                    return node
            return None
        node = self.root
        for i in locator.indices:
            if i >= len(node.children):
                return None
            node = node.children[i]
        return node

    def form_nodes(self) -> list[Node]:
        return [n for n in self.root.walk() if n.tag == "form"]

    def forms(self) -> list["Form"]:
        return [parse_form(self, node, index=i)
                for i, node in enumerate(self.form_nodes())]

    def leaf_texts(self) -> Iterator[tuple[Locator, str]]:
        """Every text node and every control ``value`` attribute, once each."""
        for node in self.root.walk():
            if node.is_text():
                if node.text:
                    yield locator_for(node), node.text
            elif node.tag in CONTROL_TAGS and "value" in node.attrs:
                yield locator_for(node), node.attrs["value"]


class JsonDocument:
    """Parsed JSON response with $.a.b[0]-style path locators."""

    kind = "json"

    def __init__(self, value):
        self.value = value

    def leaf_texts(self) -> Iterator[tuple[str, str]]:
        yield from _json_leaves(self.value, "$")

    def resolve(self, locator) -> None:
        return None

    def forms(self) -> list:
        return []


def _json_leaves(value, path: str) -> Iterator[tuple[str, str]]:
    if isinstance(value, dict):
        for key, item in value.items():
            yield from _json_leaves(item, f"{path}.{key}")
    elif isinstance(value, list):
        for i, item in enumerate(value):
            yield from _json_leaves(item, f"{path}[{i}]")
    elif isinstance(value, str):
        yield path, value
    elif isinstance(value, bool):
        pass  # booleans and nulls carry no searchable text
    elif isinstance(value, (int, float)):
        yield path, json.dumps(value)


class RawDocument:
    """Fallback for bodies that are neither HTML nor parseable JSON: the whole
    body is exposed as a single text leaf so keyword search still works."""

    kind = "raw"

    def __init__(self, text: str):
        self.text = text

    def leaf_texts(self) -> Iterator[tuple[str, str]]:
        if self.text:
            yield "$raw", self.text

    def resolve(self, locator) -> None:
        return None

    def forms(self) -> list:
        return []


def parse(body: bytes, content_type: str):
    """Parse a response body per its media type.

    JSON that fails to parse degrades to a RawDocument so classification can
    fall back to raw-body keyword search.
    """
    text = body.decode("utf-8", errors="replace")
    ctype = (content_type or "").lower()
    if "json" in ctype:
        try:
            return JsonDocument(json.loads(text))
        except ValueError:
            logger.warning("unparseable JSON body; falling back to raw text")
            return RawDocument(text)
    if "html" in ctype or ctype in ("", "text/plain") and text.lstrip().startswith("<"):
        builder = _TreeBuilder()
        builder.feed(text)
        return Document(builder.finish())
    return RawDocument(text)


# ---------------------------------------------------------------------------
# forms and controls

@dataclass
class InputControl:
    name: str
    kind: str  # text, hidden, radio, checkbox, select, password, submit, ...
    value: str = ""
    checked: bool = False
    options: list[str] = field(default_factory=list)
    required: bool = False
    pattern: Optional[str] = None
    min: Optional[float] = None
    max: Optional[float] = None
    maxlength: Optional[int] = None
    type_attr: str = ""
    class_attr: str = ""
    label: str = ""
    locator: Optional[Locator] = None

    @property
    def source(self) -> str:
        return SOURCE_HIDDEN if self.kind == "hidden" else SOURCE_USER

    def is_submit(self) -> bool:
        return self.kind in SUBMIT_KINDS


@dataclass
class CLVDescriptor:
    validate: list[dict] = field(default_factory=list)
    transform: list[dict] = field(default_factory=list)
    reveal: list[dict] = field(default_factory=list)
    ajax: bool = False


@dataclass
class Form:
    action: str
    method: str
    controls: list[InputControl]
    clv: CLVDescriptor
    index: int = 0
    locator: Optional[Locator] = None

    @property
    def ajax(self) -> bool:
        return self.clv.ajax

    def control_named(self, name: str) -> Optional[InputControl]:
        for control in self.controls:
            if control.name == name:
                return control
        return None

    def radio_options(self, name: str) -> list[str]:
        return [c.value for c in self.controls
                if c.name == name and c.kind == "radio"]


def _control_from_node(node: Node, label: str) -> Optional[InputControl]:
    name = node.attrs.get("name", "")
    if node.tag == "input":
        kind = node.attrs.get("type", "text").lower()
        value = node.attrs.get("value", "")
        if kind not in ("text", "hidden", "radio", "checkbox", "password",
                        "submit", "image", "button", "number", "date", "time",
                        "email", "tel"):
            kind = "text"
        if kind in ("number", "date", "time", "email", "tel"):
            type_attr, kind = kind, "text"
        else:
            type_attr = node.attrs.get("type", "").lower()
        if kind == "checkbox" and not value:
            value = "on"
        control = InputControl(
            name=name, kind=kind, value=value,
            checked="checked" in node.attrs,
            type_attr=type_attr or node.attrs.get("type", "").lower(),
        )
    elif node.tag == "select":
        options = []
        selected = None
        for opt in node.walk():
            if opt.tag == "option":
                value = opt.attrs.get("value", opt.text_content().strip())
                options.append(value)
                if "selected" in opt.attrs and selected is None:
                    selected = value
        control = InputControl(name=name, kind="select",
                               value=selected if selected is not None
                               else (options[0] if options else ""),
                               options=options)
    elif node.tag == "textarea":
        control = InputControl(name=name, kind="text",
                               value=node.text_content())
    elif node.tag == "button":
        control = InputControl(name=name,
                               kind=node.attrs.get("type", "submit").lower(),
                               value=node.attrs.get("value", ""))
    else:
        return None

    control.required = "required" in node.attrs
    control.pattern = node.attrs.get("pattern")
    for bound in ("min", "max"):
        raw = node.attrs.get(bound)
        if raw is not None:
            try:
                setattr(control, bound, float(raw))
            except ValueError:
                pass
    raw = node.attrs.get("maxlength")
    if raw is not None:
        try:
            control.maxlength = int(raw)
        except ValueError:
            pass
    control.class_attr = node.attrs.get("class", "")
    control.label = label
    control.locator = locator_for(node)
    return control


def parse_form(doc: Document, form_node: Node, index: int = 0) -> Form:
    clv = CLVDescriptor()
    raw = form_node.attrs.get("data-clv")
    if raw:
        try:
            data = json.loads(raw)
            clv = CLVDescriptor(
                validate=list(data.get("validate", [])),
                transform=list(data.get("transform", [])),
                reveal=list(data.get("reveal", [])),
                ajax=bool(data.get("ajax", False)),
            )
        except ValueError:
            logger.warning("malformed data-clv descriptor ignored")

    # label association: for-attribute first, else nearest preceding text
    labels_by_id: dict[str, str] = {}
    for node in form_node.walk():
        if node.tag == "label" and "for" in node.attrs:
            labels_by_id[node.attrs["for"]] = node.text_content().strip()

    controls: list[InputControl] = []
    last_text = ""
    for node in form_node.walk():
        if node.is_text():
            if node.text.strip():
                last_text = node.text.strip()
            continue
        if node.tag in CONTROL_TAGS:
            node_id = node.attrs.get("id", "")
            label = labels_by_id.get(node_id, "") or last_text
            control = _control_from_node(node, label)
            if control is not None:
                controls.append(control)
            last_text = ""

    return Form(
        action=form_node.attrs.get("action", ""),
        method=form_node.attrs.get("method", "GET").upper(),
        controls=controls,
        clv=clv,
        index=index,
        locator=locator_for(form_node),
    )


# ---------------------------------------------------------------------------
# parameters

@dataclass
class Param:
    name: str
    value: str
    source: str
    locator: Optional[Locator] = None


def extract_params(form: Form, page_url: str) -> list[Param]:
    """Parameters this form would submit right now, plus query pairs hardcoded
    in the action URL. Values are percent-decoded."""
    params: list[Param] = []
    target = form.action or ""
    query = urlsplit(target).query
    for name, value in parse_qsl(query, keep_blank_values=True):
        params.append(Param(name=name, value=value, source=SOURCE_QUERY,
                            locator=form.locator))
    seen_radio: set[str] = set()
    for control in form.controls:
        if not control.name or control.is_submit():
            continue
        if control.kind == "radio":
            if control.name in seen_radio:
                continue
            seen_radio.add(control.name)
            selected = next((c for c in form.controls
                             if c.name == control.name and c.kind == "radio"
                             and c.checked), None)
            if selected is None:
                continue
            params.append(Param(name=control.name, value=selected.value,
                                source=selected.source,
                                locator=selected.locator))
            continue
        if control.kind == "checkbox" and not control.checked:
            continue
        params.append(Param(name=control.name, value=control.value,
                            source=control.source, locator=control.locator))
    return params


# ---------------------------------------------------------------------------
# client-side evaluation: reveal -> transform -> validate

@dataclass
class Violation:
    kind: str  # pattern | range | required | maxlength | option
    field: str
    detail: str = ""


@dataclass
class FormEvaluation:
    values: dict[str, str]  # post-reveal, post-transform
    controls: list[InputControl]  # effective controls including revealed ones
    revealed: list[InputControl]
    violations: list[Violation]

    @property
    def accepted(self) -> bool:
        return not self.violations


def _control_from_spec(spec: dict) -> InputControl:
    control = InputControl(
        name=spec["name"],
        kind=spec.get("kind", "text"),
        value=str(spec.get("value", "")),
        required=bool(spec.get("required", False)),
        pattern=spec.get("pattern"),
        maxlength=spec.get("maxlength"),
    )
    for bound in ("min", "max"):
        if bound in spec:
            setattr(control, bound, float(spec[bound]))
    return control


def _apply_transforms(clv: CLVDescriptor, values: dict[str, str],
                      control_names: set[str]) -> None:
    for rule in clv.transform:
        target = rule.get("target", "")
        inputs = rule.get("inputs", [])
        missing = [i for i in inputs if i not in values]
        if missing or target not in control_names:
            raise ConfigError(
                f"transform for {target!r} references missing fields {missing}")
        sep = rule.get("sep", "")
        joined = sep.join(values[i] for i in inputs)
        fn = rule.get("fn", "concat")
        if fn == "base64concat":
            values[target] = base64.b64encode(joined.encode("utf-8")).decode("ascii")
        elif fn == "concat":
            values[target] = joined
        else:
            raise ConfigError(f"unknown transform function {fn!r}")


def _pattern_violation(pattern: str, value: str, field_name: str) -> Optional[Violation]:
    try:
        compiled = re.compile(pattern)
    except re.error:
        logger.warning("malformed pattern %r on %s treated as always-accepting",
                       pattern, field_name)
        return None
    if compiled.fullmatch(value) is None:
        return Violation("pattern", field_name, pattern)
    return None


def _range_violation(lo, hi, value, field_name) -> Optional[Violation]:
    try:
        number = float(value.replace(",", "")) if value else None
    except ValueError:
        number = None
    if number is None:
        return Violation("range", field_name, "not a number")
    if lo is not None and number < lo:
        return Violation("range", field_name, f"< {lo}")
    if hi is not None and number > hi:
        return Violation("range", field_name, f"> {hi}")
    return None


def evaluate_form(form: Form, values: dict[str, str]) -> FormEvaluation:
    """Run the client-side gate: reveal rules, then transforms, then every
    validation (markup attributes and CLV rules).

    ``values`` maps parameter name to current value; names missing from it are
    treated as empty strings. The returned evaluation carries the final values
    that would actually be submitted.
    """
    working = dict(values)
    controls = list(form.controls)
    names = {c.name for c in controls if c.name}

    revealed: list[InputControl] = []
    for rule in form.clv.reveal:
        when = rule.get("when", {})
        if working.get(when.get("field", ""), "") == str(when.get("equals", "")):
            for spec in rule.get("add", []):
                if spec.get("name") in names:
                    continue
                control = _control_from_spec(spec)
                controls.append(control)
                revealed.append(control)
                names.add(control.name)
                working.setdefault(control.name, control.value)

    _apply_transforms(form.clv, working, names)

    violations: list[Violation] = []
    seen_radio: set[str] = set()
    for control in controls:
        if not control.name or control.is_submit():
            continue
        value = working.get(control.name, "")
        if control.kind == "radio":
            if control.name in seen_radio:
                continue
            seen_radio.add(control.name)
            options = [c.value for c in controls
                       if c.name == control.name and c.kind == "radio"]
            if control.name in working and value not in options:
                violations.append(Violation("option", control.name, value))
            continue
        if control.kind == "select":
            if value not in control.options:
                violations.append(Violation("option", control.name, value))
            continue
        if control.kind == "hidden":
            continue  # hidden inputs are barred from markup validation
        if control.required and value == "":
            violations.append(Violation("required", control.name))
        if control.pattern is not None and value != "":
            v = _pattern_violation(control.pattern, value, control.name)
            if v:
                violations.append(v)
        if control.maxlength is not None and len(value) > control.maxlength:
            violations.append(Violation("maxlength", control.name))
        if control.min is not None or control.max is not None:
            v = _range_violation(control.min, control.max, value, control.name)
            if v:
                violations.append(v)

    for rule in form.clv.validate:
        field_name = rule.get("field", "")
        value = working.get(field_name, "")
        if rule.get("required"):
            if value == "":
                violations.append(Violation("required", field_name))
        if "pattern" in rule and value != "":
            v = _pattern_violation(rule["pattern"], value, field_name)
            if v:
                violations.append(v)
        if "min" in rule or "max" in rule:
            v = _range_violation(rule.get("min"), rule.get("max"), value,
                                 field_name)
            if v:
                violations.append(v)

    return FormEvaluation(values=working, controls=controls,
                          revealed=revealed, violations=violations)


def validate_client_side(form: Form, values: dict[str, str]) -> FormEvaluation:
    """Accepted/Rejected verdict for ``values`` against the form's client-side
    gate. Alias of :func:`evaluate_form`; check ``.accepted``/``.violations``."""
    return evaluate_form(form, values)


def apply_preprocessing(form: Form, values: dict[str, str]) -> dict[str, str]:
    """Overwrite transform targets from their input fields, leaving everything
    else untouched. Idempotent while the non-target inputs are unchanged."""
    working = dict(values)
    names = {c.name for c in form.controls if c.name}
    _apply_transforms(form.clv, working, names)
    return working


def submission_values(form: Form, evaluation: FormEvaluation,
                      clicked: Optional[InputControl] = None) -> list[tuple[str, str]]:
    """Ordered submission pairs for the evaluated form: controls in document
    order, one entry per radio group, unchecked boxes skipped, plus the
    clicked submit control when it is named."""
    pairs: list[tuple[str, str]] = []
    seen_radio: set[str] = set()
    for control in evaluation.controls:
        if not control.name:
            continue
        if control.is_submit():
            continue
        if control.kind == "radio":
            if control.name in seen_radio:
                continue
            seen_radio.add(control.name)
            if control.name in evaluation.values:
                pairs.append((control.name, evaluation.values[control.name]))
            continue
        if control.kind == "checkbox" and control.name not in evaluation.values:
            continue
        pairs.append((control.name, evaluation.values.get(control.name, "")))
    if clicked is not None and clicked.name:
        pairs.append((clicked.name, clicked.value))
    return pairs
