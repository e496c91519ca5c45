"""Parameter mutation: deterministic tampered-value generation.

Candidates are derived from the parameter's base (default or analyst) value.
Values with a numeric portion get arithmetic derivations applied to the
longest digit run; boolean-looking values get negated; date/time/percentage
inputs get known-bad hardcoded values; and every parameter gets a fixed
static tamper list. With a fixed seed the whole sequence is a pure function
of (base value, hint, seed), which is what makes scans reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from random import Random
from typing import Iterator, Optional

from .htmlmodel import InputControl

NUMBER_VALUE_RE = re.compile(r"[\d,\.]+")
DIGIT_RUN_RE = re.compile(r"\d+")

HINT_NUMBER = "Number"
HINT_BOOLEAN = "Boolean"
HINT_DATE = "Date"
HINT_TIME = "Time"
HINT_PERCENTAGE = "Percentage"
HINT_ALPHANUMERIC = "AlphaNumeric"
HINT_FREETEXT = "FreeText"

BOOLEAN_NEGATION = {
    "1": "0", "0": "1",
    "y": "n", "n": "y",
    "t": "f", "f": "t",
    "true": "false", "false": "true",
}

HARDCODED_BY_HINT = {
    HINT_DATE: ("2013-9-22", "hardcoded-date"),
    HINT_TIME: ("23:59", "hardcoded-time"),
    HINT_PERCENTAGE: ("111%", "hardcoded-percent"),
}

# Fixed tamper table; see docs/mutation-values.md.
STATIC_TAMPER_LIST = (
    "",
    "0",
    "-1",
    "1",
    "0.0",
    "9999999999999999999999999",
    "-99999999999",
    "'",
    "\"",
    "''",
    "`",
    "%00",
)

_CLASS_HINTS = (
    ("datepicker", HINT_DATE),
    ("timepicker", HINT_TIME),
    ("percent", HINT_PERCENTAGE),
    ("alphanumeric", HINT_ALPHANUMERIC),
    ("bool", HINT_BOOLEAN),
    ("numeric", HINT_NUMBER),
)

_NAME_HINTS = (
    ("date", HINT_DATE),
    ("time", HINT_TIME),
    ("percent", HINT_PERCENTAGE),
    ("pct", HINT_PERCENTAGE),
    ("amount", HINT_NUMBER),
    ("amt", HINT_NUMBER),
    ("qty", HINT_NUMBER),
    ("num", HINT_NUMBER),
    ("flag", HINT_BOOLEAN),
    ("bool", HINT_BOOLEAN),
)

_TYPE_HINTS = {
    "date": HINT_DATE,
    "time": HINT_TIME,
    "number": HINT_NUMBER,
}


@dataclass(frozen=True)
class InputTypeHint:
    hint: str
    provenance: str  # value-regex | type-attr | class-attr | name-attr | label | default


@dataclass(frozen=True)
class MutationCandidate:
    value: str
    rule: str
    base: str


def infer_type(control: Optional[InputControl], value: str) -> InputTypeHint:
    """Infer the input type. Order: whole-value regex, then the type
    attribute, class attribute, name attribute, and finally the label text.
    Pure digit strings count as numbers; the boolean alphabet is caught in
    the same value stage."""
    if value:
        lowered = value.lower()
        if lowered in BOOLEAN_NEGATION and not lowered.isdigit():
            return InputTypeHint(HINT_BOOLEAN, "value-regex")
        if NUMBER_VALUE_RE.fullmatch(value):
            return InputTypeHint(HINT_NUMBER, "value-regex")
    if control is not None:
        type_hint = _TYPE_HINTS.get(control.type_attr)
        if type_hint:
            return InputTypeHint(type_hint, "type-attr")
        classes = control.class_attr.lower()
        for token, hint in _CLASS_HINTS:
            if token in classes:
                return InputTypeHint(hint, "class-attr")
        name = control.name.lower()
        for token, hint in _NAME_HINTS:
            if token in name:
                return InputTypeHint(hint, "name-attr")
        label = control.label.lower()
        for token, hint in _NAME_HINTS:
            if token in label:
                return InputTypeHint(hint, "label")
        if value and value.isalnum():
            return InputTypeHint(HINT_ALPHANUMERIC, "default")
    return InputTypeHint(HINT_FREETEXT, "default")


def _format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return str(x)


def _negate_boolean(value: str) -> Optional[str]:
    negated = BOOLEAN_NEGATION.get(value.lower())
    if negated is None:
        return None
    if value.isupper():
        return negated.upper()
    if value[:1].isupper():
        return negated.capitalize()
    return negated


def _longest_digit_run(value: str):
    runs = list(DIGIT_RUN_RE.finditer(value))
    if not runs:
        return None
    return max(runs, key=lambda m: len(m.group()))


def _numeric_derivations(base: str, rng_ints: tuple[int, int]) -> Iterator[tuple[str, str]]:
    """Arithmetic variants spliced over the longest digit run (or computed on
    the full value when the whole value is numeric)."""
    whole = NUMBER_VALUE_RE.fullmatch(base) is not None
    if whole:
        try:
            number = float(base.replace(",", ""))
        except ValueError:
            return
        def emit(x: float) -> str:
            return _format_number(x)
    else:
        run = _longest_digit_run(base)
        if run is None:
            return
        number = float(run.group())
        prefix, suffix = base[:run.start()], base[run.end():]
        def emit(x: float) -> str:
            return prefix + _format_number(x) + suffix

    n1, n2 = rng_ints
    yield emit(float(int(number))), "truncate-integer"
    yield emit(number / 1000.0), "divide-1000"
    yield emit(number * -1), "negate"
    yield emit(number + 1), "increment"
    yield emit(number - 1), "decrement"
    for n, tag in ((7, "7"), (100, "100"), (n1, "rand1"), (n2, "rand2")):
        yield emit(number + n), f"add-{tag}"
        yield emit(number * n), f"multiply-{tag}"


def mutate(control: Optional[InputControl], base: str, hint: InputTypeHint,
           seed: int = 0, violate_restrictions: bool = False) -> Iterator[MutationCandidate]:
    """Yield tampered values in a fixed order, deduplicated, never equal to
    the base value."""
    rng = Random(seed)
    rng_ints = (rng.randint(2, 999), rng.randint(2, 999))

    seen: set[str] = set()

    def unique(value: str, rule: str) -> Optional[MutationCandidate]:
        if value == base or value in seen:
            return None
        seen.add(value)
        return MutationCandidate(value=value, rule=rule, base=base)

    for value, rule in _numeric_derivations(base, rng_ints):
        candidate = unique(value, rule)
        if candidate:
            yield candidate

    if hint.hint == HINT_BOOLEAN:
        negated = _negate_boolean(base)
        if negated is not None:
            candidate = unique(negated, "negate-bool")
            if candidate:
                yield candidate

    hardcoded = HARDCODED_BY_HINT.get(hint.hint)
    if hardcoded:
        candidate = unique(hardcoded[0], hardcoded[1])
        if candidate:
            yield candidate

    for value in STATIC_TAMPER_LIST:
        candidate = unique(value, "static-list")
        if candidate:
            yield candidate

    if violate_restrictions and control is not None:
        if control.required and base:
            candidate = unique("", "violate-required")
            if candidate:
                yield candidate
        if control.maxlength and base:
            repeats = control.maxlength // len(base) + 2
            candidate = unique(base * repeats, "violate-maxlength")
            if candidate:
                yield candidate


NUMERIC_NORMALIZE_RE = re.compile(r"[\d,]+(?:\.\d+)?")


def normalize_value(value: str):
    """Normalization used for cross-request value comparison: numeric-looking
    values are parsed with separators stripped, everything else is trimmed."""
    if NUMERIC_NORMALIZE_RE.fullmatch(value):
        try:
            return ("num", float(value.replace(",", "")))
        except ValueError:
            pass
    return ("str", value.strip())


def next_differing(control: Optional[InputControl], base: str,
                   hint: InputTypeHint, avoid: str,
                   seed: int = 0) -> Optional[MutationCandidate]:
    """First candidate whose normalized value differs from ``avoid``; None
    when the generator exhausts without one."""
    target = normalize_value(avoid)
    for candidate in mutate(control, base, hint, seed=seed):
        if normalize_value(candidate.value) != target:
            return candidate
    return None
