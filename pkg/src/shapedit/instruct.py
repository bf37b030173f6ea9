"""Instruction rewriting: user instruction + detailed source caption ->
detailed target caption.

The grammar parser is the default, deterministic path. An optional
chat-completion LLM client implements the same contract; its output is
validated against the vocabulary and falls back to the grammar on failure.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import httpx

from .config import LlmConfig
from .text import VocabularyError, default_vocab
from .world import ATTRIBUTES, DETAILED_TEMPLATE, parse_caption

API_KEY_ENV = "SHAPEDIT_LLM_API_KEY"


class InstructionParseError(ValueError):
    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class InstructionSemanticError(ValueError):
    pass


class LlmTransportError(RuntimeError):
    pass


class LlmDisabledError(RuntimeError):
    pass


class LlmProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Instruction:
    verb: str  # change | make | add | remove
    attribute: str
    value: str | None  # absent for remove

    def __post_init__(self) -> None:
        if self.attribute not in ATTRIBUTES:
            raise VocabularyError(f"unknown attribute {self.attribute!r}")
        if self.value is not None and self.value not in ATTRIBUTES[self.attribute]:
            raise VocabularyError(f"unknown {self.attribute} value {self.value!r}")


_VALUE_TO_ATTR: dict[str, str] = {}
for _name, _values in ATTRIBUTES.items():
    for _v in _values:
        # "none" belongs to accessory only; vocabularies are otherwise disjoint
        _VALUE_TO_ATTR.setdefault(_v, _name)

_PATTERNS = [
    ("change", re.compile(r"^change the (\S+) to (\S+)$")),
    ("make", re.compile(r"^make the (\S+) (\S+)$")),
    ("add", re.compile(r"^add (\S+)$")),
    ("remove", re.compile(r"^remove the (\S+)$")),
]


def parse_instruction(text: str) -> Instruction:
    """Grammar: "change the <attr|value> to <value>" | "make the <attr> <value>"
    | "add <accessory>" | "remove the <attr>". Case-insensitive."""
    norm = " ".join(text.strip().lower().split())
    for verb, pattern in _PATTERNS:
        m = pattern.match(norm)
        if m is None:
            continue
        if verb == "change":
            subject, value = m.group(1), m.group(2)
            attribute = subject if subject in ATTRIBUTES else _VALUE_TO_ATTR.get(subject)
            if attribute is None:
                raise VocabularyError(f"unknown attribute or value {subject!r}")
            if value not in ATTRIBUTES[attribute]:
                raise VocabularyError(f"unknown {attribute} value {value!r}")
            return Instruction("change", attribute, value)
        if verb == "make":
            attribute, value = m.group(1), m.group(2)
            if attribute not in ATTRIBUTES:
                raise VocabularyError(f"unknown attribute {attribute!r}")
            if value not in ATTRIBUTES[attribute]:
                raise VocabularyError(f"unknown {attribute} value {value!r}")
            return Instruction("make", attribute, value)
        if verb == "add":
            value = m.group(1)
            if value not in ATTRIBUTES["accessory"] or value == "none":
                raise VocabularyError(f"unknown accessory {value!r}")
            return Instruction("add", "accessory", value)
        if verb == "remove":
            attribute = m.group(1)
            if attribute not in ATTRIBUTES:
                raise VocabularyError(f"unknown attribute {attribute!r}")
            return Instruction("remove", attribute, None)
    raise InstructionParseError(f"cannot parse instruction {text!r}", position=0)


def apply(instr: Instruction, source_caption: str) -> str:
    """Single-field substitution on the parsed caption; re-renders the
    detailed template so exactly one attribute mention changes."""
    attrs = parse_caption(source_caption)
    if instr.verb == "remove":
        if instr.attribute != "accessory":
            raise InstructionSemanticError(f"cannot remove {instr.attribute!r}; only the accessory is removable")
        attrs["accessory"] = "none"
    else:
        attrs[instr.attribute] = instr.value
    return DETAILED_TEMPLATE.format(**attrs)


def rewrite(source_caption: str, instruction_text: str) -> str:
    return apply(parse_instruction(instruction_text), source_caption)


@dataclass
class LlmRewriteResult:
    target_caption: str
    used_fallback: bool
    raw_response: str | None = None


@dataclass
class LlmClient:
    """Minimal chat-completion client: one POST per rewrite, JSON body
    {model, messages:[{role, content}]}, answer read from the first choice."""

    config: LlmConfig
    transport: httpx.BaseTransport | None = field(default=None, repr=False)

    def rewrite(self, source_caption: str, user_instruction: str) -> LlmRewriteResult:
        if not self.config.enabled:
            raise LlmDisabledError("disabled")
        prompt = f"{self.config.base_instruction}\ninstruction: {user_instruction}\nsentence: {source_caption}"
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            with httpx.Client(transport=self.transport, timeout=self.config.timeout_s) as client:
                response = client.post(self.config.endpoint, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise LlmTransportError(f"llm request failed: {exc}") from exc
        if response.status_code // 100 != 2:
            raise LlmTransportError(f"llm returned status {response.status_code}")
        try:
            text = response.json()["choices"][0]["message"]["content"].strip()
        except (KeyError, IndexError, ValueError) as exc:
            raise LlmProtocolError(f"malformed llm response: {exc}") from exc
        if not text:
            raise LlmProtocolError("empty llm response")
        return LlmRewriteResult(target_caption=text, used_fallback=False, raw_response=text)


def llm_rewrite(source_caption: str, user_instruction: str, client: LlmClient) -> LlmRewriteResult:
    """LLM path with validation: the model's answer must tokenize against the
    closed vocabulary and parse as a detailed caption, otherwise the grammar
    parser supplies the target. Transport and protocol errors propagate."""
    result = client.rewrite(source_caption, user_instruction)
    try:
        default_vocab().tokenize(result.target_caption)
        parse_caption(result.target_caption)
        return result
    except ValueError:
        fallback = rewrite(source_caption, user_instruction)
        return LlmRewriteResult(target_caption=fallback, used_fallback=True, raw_response=result.raw_response)
