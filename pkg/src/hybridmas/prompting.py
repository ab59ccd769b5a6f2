"""Prompt template rendering and parsing of structured model outputs.

Templates are packaged verbatim as text assets, one file per prompt, using
``{{ name }}`` placeholder syntax. Rendering substitutes placeholder spans
and touches nothing else, so prompt bytes stay auditable.

All parsers are pure functions. Verdict tokens (CONTINUE / INTERVENE) are
matched case-sensitively: a lax grammar would corrupt audit statistics.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

from .core import (
    CONTINUE,
    INTERVENE,
    AdviceHandoff,
    Plan,
    ReplanHandoff,
    ToolCall,
    TurnRecord,
    VerifierDecision,
)

TEMPLATE_IDS = (
    "plan",
    "direct_exec",
    "plan_exec",
    "advice_resume",
    "replan_resume",
    "verify_replan",
    "verify_advice",
)

_PLACEHOLDER_RE = re.compile(r"\{\{\s*([a-z_]+)\s*\}\}")


class PromptError(Exception):
    pass


class UnknownTemplateError(PromptError):
    pass


class MissingBindingError(PromptError):
    def __init__(self, name: str):
        super().__init__(f"missing binding for placeholder {name!r}")
        self.name = name


class UnexpectedBindingError(PromptError):
    def __init__(self, name: str):
        super().__init__(f"binding {name!r} matches no placeholder in the template")
        self.name = name


class MalformedPlanError(PromptError):
    pass


class MalformedVerdictError(PromptError):
    pass


class NoToolCallError(PromptError):
    pass


@lru_cache(maxsize=None)
def load_asset(name: str) -> str:
    """Return a packaged text asset byte-for-byte."""
    path = resources.files(__package__).joinpath("templates", f"{name}.txt")
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UnknownTemplateError(f"no template asset named {name!r}")


def template_text(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplateError(f"unknown template {template_id!r}")
    return load_asset(template_id)


@lru_cache(maxsize=None)
def template_placeholders(template_id: str) -> frozenset[str]:
    return frozenset(_PLACEHOLDER_RE.findall(template_text(template_id)))


def render(template_id: str, bindings: Mapping[str, str]) -> str:
    """Substitute ``{{ name }}`` spans with bindings, leaving all other
    template bytes untouched.

    Bindings must cover exactly the template's placeholders.
    """
    body = template_text(template_id)
    placeholders = template_placeholders(template_id)
    for name in bindings:
        if name not in placeholders:
            raise UnexpectedBindingError(name)
    for name in placeholders:
        if name not in bindings:
            raise MissingBindingError(name)
    return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], body)


def _extract_block(text: str, tag: str) -> str | None:
    """Content between the first <tag> and the matching </tag>, or None."""
    opening, closing = f"<{tag}>", f"</{tag}>"
    start = text.find(opening)
    if start < 0:
        return None
    end = text.find(closing, start + len(opening))
    if end < 0:
        return None
    return text[start + len(opening):end]


def parse_plan(text: str) -> Plan:
    """Extract the plan between <PLAN> tags, trimmed of surrounding
    whitespace."""
    block = _extract_block(text, "PLAN")
    if block is None:
        raise MalformedPlanError("no <PLAN> block found")
    body = block.strip()
    if not body:
        raise MalformedPlanError("empty <PLAN> block")
    return Plan(body)


def _first_token(text: str) -> str | None:
    tokens = text.split()
    return tokens[0] if tokens else None


def parse_pevr_verdict(text: str) -> VerifierDecision:
    """Parse a plan-based verification output: CONTINUE, or INTERVENE with
    a <REPLAN> block.

    Block content is returned byte-exact (no trimming); the replan memory
    log is attached later by the orchestrator.
    """
    token = _first_token(text)
    if token == "CONTINUE":
        return VerifierDecision(CONTINUE, None, text)
    if token == "INTERVENE":
        replan = _extract_block(text, "REPLAN")
        if not replan:
            raise MalformedVerdictError("INTERVENE without a <REPLAN> block")
        return VerifierDecision(
            INTERVENE, ReplanHandoff(Plan(replan, origin="replan")), text
        )
    raise MalformedVerdictError(f"first token is neither CONTINUE nor INTERVENE: {token!r}")


def parse_eva_verdict(text: str) -> VerifierDecision:
    """Parse a query-based verification output: CONTINUE, or INTERVENE with
    both <SUMMARY> and <ADVICE> blocks (byte-exact content)."""
    token = _first_token(text)
    if token == "CONTINUE":
        return VerifierDecision(CONTINUE, None, text)
    if token == "INTERVENE":
        summary = _extract_block(text, "SUMMARY")
        advice = _extract_block(text, "ADVICE")
        if not summary or not advice:
            raise MalformedVerdictError("INTERVENE requires <SUMMARY> and <ADVICE> blocks")
        return VerifierDecision(INTERVENE, AdviceHandoff(summary, advice), text)
    raise MalformedVerdictError(f"first token is neither CONTINUE nor INTERVENE: {token!r}")


_TOOL_CALL_LABEL_RE = re.compile(r"tool\s*call\s*:?\s*$", re.IGNORECASE)


def parse_tool_call(text: str, tool_names: Sequence[str]) -> tuple[ToolCall, str]:
    """Extract the last ``name[argument]`` call for a declared tool.

    The argument runs from the opening bracket to the final ``]`` in the
    text, so inner brackets are allowed. Returns (call, reasoning) where
    reasoning is the text preceding the call with any trailing
    "Tool call:" label removed.
    """
    if not tool_names:
        raise NoToolCallError("no declared tools")
    pattern = re.compile(
        r"\b(" + "|".join(re.escape(n) for n in sorted(tool_names, key=len, reverse=True)) + r")\["
    )
    last_close = text.rfind("]")
    chosen = None
    for match in pattern.finditer(text):
        if last_close >= match.end():
            chosen = match
    if chosen is None:
        raise NoToolCallError("no declared tool name followed by brackets")
    argument = text[chosen.end():last_close]
    reasoning = _TOOL_CALL_LABEL_RE.sub("", text[: chosen.start()].rstrip()).strip()
    return ToolCall(chosen.group(1), argument), reasoning


def format_memory(turns: Sequence[TurnRecord]) -> str:
    """Render the tool-call log: one block per acted turn, in order, with
    the call and its observed output. Reasoning traces are excluded."""
    blocks = []
    for turn in turns:
        if turn.action is None:
            continue
        observation = turn.observation if turn.observation is not None else ""
        blocks.append(f"Tool call: {turn.action.render()}\nOutput: {observation}")
    return "\n\n".join(blocks)
