"""HTML templates for the test-bed scenarios.

Client-side behavior is declared inline in each form's ``data-clv``
attribute: validations, hidden-field pre-processing, and conditionally
revealed controls. Rejection pages deliberately carry none of the acceptance
evidence (no forms, no reflected values, no acceptance keywords).
"""

from __future__ import annotations

import json
from html import escape

HSBC_TO_PATTERN = r"^[a-zA-Z ]{1,20}~~\d{1,3} ?\d{1,12}$"
BEA_TO_PATTERN = r"^\d{3}-\d{6}$"
AJAX_DATE_PATTERN = r"^\d{4}-\d{2}-\d{2}$"
AJAX_FLIGHT_PATTERN = r"^[A-Z]{2}\d{1,4}$"
OTP_PATTERN = r"^\d{6}$"


def _clv(descriptor: dict) -> str:
    return escape(json.dumps(descriptor), quote=True)


def _page(title: str, body: str) -> str:
    return (f"<!DOCTYPE html>\n<html><head><title>{escape(title)}</title></head>\n"
            f"<body>\n{body}\n</body></html>\n")


def error_page(message: str) -> str:
    # keep this free of acceptance keywords and reflected parameters
    return _page("Request rejected",
                 f"<p>We are unable to process this request.</p>"
                 f"<p>{escape(message)}</p>")


def _account_options(accounts, selected: str) -> str:
    out = []
    for acct in accounts:
        sel = " selected" if acct == selected else ""
        out.append(f'<option value="{escape(acct, quote=True)}"{sel}>'
                   f"{escape(acct)}</option>")
    return "".join(out)


def hsbc_step_a(csrf1: str, sesstok: str, trace: str, accounts,
                amount_min: float, amount_max: float) -> str:
    clv = _clv({
        "validate": [
            {"field": "TO", "required": True},
            {"field": "TO", "pattern": HSBC_TO_PATTERN},
            {"field": "AMT", "min": amount_min, "max": amount_max},
        ],
        "reveal": [
            {"when": {"field": "TO_TYPE", "equals": "0"},
             "add": [{"name": "OTP", "kind": "text", "required": True,
                      "pattern": OTP_PATTERN}]},
        ],
    })
    body = f"""<h1>Interbank Transfer</h1>
<form id="transfer" method="POST" action="/stepA" data-clv='{clv}'>
<input type="hidden" name="CSRF1" id="csrf1" value="{csrf1}">
<input type="hidden" name="SESSTOK" value="{sesstok}">
<input type="hidden" name="TRACE" value="{trace}">
<input type="hidden" name="LOCALE" value="en">
<p>Transfer from
<select name="FROM" id="from">{_account_options(accounts, accounts[0])}</select></p>
<p><input type="radio" name="TO_TYPE" id="totype1" value="1" checked>
<label for="totype1">Registered payee</label>
<input type="radio" name="TO_TYPE" id="totype0" value="0">
<label for="totype0">New payee with one-time password</label></p>
<p><label for="to">Payee account</label>
<input type="text" name="TO" id="to" value=""></p>
<p><label for="amt">Amount</label>
<input type="text" name="AMT" id="amt" value=""></p>
<input type="submit" id="go" value="Go">
</form>"""
    return _page("Transfer", body)


def hsbc_review(csrf2: str, sesstok: str, from_acct: str, to: str,
                amt: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    body = f"""<h1>Review transfer</h1>
<p>From <span>{escape(from_acct)}</span> to <span>{escape(to)}</span>
amount $<span>{amount}</span>.</p>
<form id="confirmation" method="POST" action="/stepB">
<input type="hidden" name="CSRF2" value="{csrf2}">
<input type="hidden" name="SESSTOK" value="{sesstok}">
<input type="hidden" name="LOCALE" value="en">
<input type="hidden" name="TO" value="{escape(to, quote=True)}">
<input type="hidden" name="AMT" value="{escape(amt, quote=True)}">
<input type="submit" id="confirm" value="Confirm">
</form>"""
    return _page("Review", body)


def hsbc_ack(txn: str, from_acct: str, to: str, amt: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    body = (f"<h1>Instruction received</h1>"
            f"<p>Transaction <span>TXN-{txn}</span>: "
            f"$<span>{amount}</span> to <span>{escape(to)}</span> "
            f"from <span>{escape(from_acct)}</span>.</p>")
    return _page("Acknowledgment", body)


def bea_step_a(csrf1: str, accounts, amount_min: float,
               amount_max: float) -> str:
    clv = _clv({
        "validate": [
            {"field": "TO", "required": True},
            {"field": "TO", "pattern": BEA_TO_PATTERN},
            {"field": "AMT", "min": amount_min, "max": amount_max},
        ],
        "transform": [
            {"target": "MACcode", "fn": "base64concat",
             "inputs": ["FROM", "TO", "AMT"], "sep": "|"},
        ],
    })
    body = f"""<h1>Transfer to registered payee</h1>
<form id="transfer" method="POST" action="/stepA" data-clv='{clv}'>
<input type="hidden" name="CSRF1" id="csrf1" value="{csrf1}">
<input type="hidden" name="MACcode" value="">
<p>Transfer from
<select name="FROM" id="from">{_account_options(accounts, accounts[0])}</select></p>
<p><label for="to">Registered payee account</label>
<input type="text" name="TO" id="to" value=""></p>
<p><label for="amt">Amount</label>
<input type="text" name="AMT" id="amt" value=""></p>
<input type="submit" id="go" value="Go">
</form>"""
    return _page("Transfer", body)


def bea_review(csrf2: str, from_acct: str, to: str, amt: str,
               maccode: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    clv = _clv({
        "transform": [
            {"target": "MACcode", "fn": "base64concat",
             "inputs": ["FROM", "TO", "AMT"], "sep": "|"},
        ],
    })
    body = f"""<h1>Review transfer</h1>
<p>From <span>{escape(from_acct)}</span> to <span>{escape(to)}</span>
amount $<span>{amount}</span>.</p>
<form id="confirmation" method="POST" action="/stepB" data-clv='{clv}'>
<input type="hidden" name="CSRF2" value="{csrf2}">
<input type="hidden" name="FROM" value="{escape(from_acct, quote=True)}">
<input type="hidden" name="TO" value="{escape(to, quote=True)}">
<input type="hidden" name="AMT" value="{escape(amt, quote=True)}">
<input type="hidden" name="MACcode" value="{escape(maccode, quote=True)}">
<input type="submit" id="confirm" value="Confirm">
</form>"""
    return _page("Review", body)


def bea_ack(txn: str, from_acct: str, to: str, amt: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    body = (f"<h1>Instruction received</h1>"
            f"<p>Transaction <span>TXN-{txn}</span>: "
            f"$<span>{amount}</span> to <span>{escape(to)}</span> "
            f"from <span>{escape(from_acct)}</span>.</p>")
    return _page("Acknowledgment", body)


def boc_step_a(csrf1: str, accounts, index_map: dict, amount_min: float,
               amount_max: float) -> str:
    clv = _clv({
        "validate": [
            {"field": "AMT", "min": amount_min, "max": amount_max},
        ],
    })
    options = "".join(
        f'<option value="{escape(idx, quote=True)}">payee {escape(idx)}</option>'
        for idx in index_map)
    body = f"""<h1>Transfer to authorized payee</h1>
<form id="transfer" method="POST" action="/stepA" data-clv='{clv}'>
<input type="hidden" name="CSRF1" id="csrf1" value="{csrf1}">
<p>Transfer from
<select name="FROM" id="from">{_account_options(accounts, accounts[0])}</select></p>
<p><label for="toidx">Authorized payee</label>
<select name="TO_IDX" id="toidx">{options}</select></p>
<p><label for="amt">Amount</label>
<input type="text" name="AMT" id="amt" value=""></p>
<input type="submit" id="go" value="Go">
</form>"""
    return _page("Transfer", body)


def boc_review(csrf2: str, from_acct: str, payee: str, to_idx: str,
               amt: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    body = f"""<h1>Review transfer</h1>
<p>From <span>{escape(from_acct)}</span> to <span>{escape(payee)}</span>
amount $<span>{amount}</span>.</p>
<form id="confirmation" method="POST" action="/stepB">
<input type="hidden" name="CSRF2" value="{csrf2}">
<input type="hidden" name="TO_IDX" value="{escape(to_idx, quote=True)}">
<input type="submit" id="confirm" value="Confirm">
</form>"""
    return _page("Review", body)


def boc_ack(txn: str, from_acct: str, payee: str, amt: str) -> str:
    amount = f"{float(amt.replace(',', '')):.2f}"
    body = (f"<h1>Instruction received</h1>"
            f"<p>Transaction <span>TXN-{txn}</span>: "
            f"$<span>{amount}</span> to <span>{escape(payee)}</span> "
            f"from <span>{escape(from_acct)}</span>.</p>")
    return _page("Acknowledgment", body)


def ajax_track(csrf1: str, today: str) -> str:
    clv = _clv({
        "ajax": True,
        "validate": [
            {"field": "flightno", "required": True},
            {"field": "flightno", "pattern": AJAX_FLIGHT_PATTERN},
            {"field": "date", "pattern": AJAX_DATE_PATTERN},
        ],
    })
    body = f"""<h1>On-time performance</h1>
<p>Queries are limited to the last 10 days.</p>
<form id="track" method="POST" action="/track" data-clv='{clv}'>
<input type="hidden" name="CSRF1" id="csrf1" value="{csrf1}">
<p><label for="flightno">Flight number</label>
<input type="text" name="flightno" id="flightno" value=""></p>
<p><label for="date">Date</label>
<input type="date" name="date" id="date" value="{today}"></p>
<input type="submit" id="search" value="Search">
</form>"""
    return _page("Flight tracking", body)
