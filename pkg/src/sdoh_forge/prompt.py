"""Three-part prompt rendering (instructions, examples, query) and reply parsing."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum

from .corpus import CategoryConfig, Label
from .errors import InvariantViolation, ParseFailure

MAX_SHOTS = 8


class Strategy(str, Enum):
    ZERO = "ZERO"
    E = "E"
    E_EX = "E_EX"
    H = "H"
    H_EX = "H_EX"
    CUSTOM = "CUSTOM"

    @property
    def with_explanations(self) -> bool:
        return self in (Strategy.E_EX, Strategy.H_EX)

    @property
    def easy(self) -> bool:
        return self in (Strategy.E, Strategy.E_EX)

    @property
    def hard(self) -> bool:
        return self in (Strategy.H, Strategy.H_EX)

    @property
    def source_name(self) -> str:
        """Label-source identifier used in file names and reports."""
        return {
            Strategy.ZERO: "zero_shot",
            Strategy.E: "two_shot_e",
            Strategy.E_EX: "two_shot_e_ex",
            Strategy.H: "two_shot_h",
            Strategy.H_EX: "two_shot_h_ex",
            Strategy.CUSTOM: "custom",
        }[self]

    @property
    def display(self) -> str:
        return {
            Strategy.ZERO: "0-Shot",
            Strategy.E: "2-Shot E",
            Strategy.E_EX: "2-Shot E+Ex",
            Strategy.H: "2-Shot H",
            Strategy.H_EX: "2-Shot H+Ex",
            Strategy.CUSTOM: "Custom",
        }[self]


@dataclass(frozen=True)
class Shot:
    text: str
    label: Label
    explanation: str | None = None
    note_id: str | None = None


@dataclass
class ShotSet:
    strategy: Strategy
    examples: list[Shot] = field(default_factory=list)

    def validate(self) -> None:
        n = len(self.examples)
        if n > MAX_SHOTS:
            raise InvariantViolation(f"{n} shots exceeds the maximum of {MAX_SHOTS}")
        if self.strategy is Strategy.ZERO:
            if n:
                raise InvariantViolation("ZERO strategy must carry no examples")
            return
        if self.strategy is Strategy.CUSTOM:
            for s in self.examples:
                if not isinstance(s.label, Label):
                    raise InvariantViolation("every shot needs a binary label")
            return
        if n != 2:
            raise InvariantViolation(f"{self.strategy.value} needs exactly 2 shots, got {n}")
        if {s.label for s in self.examples} != {Label.POSITIVE, Label.NEGATIVE}:
            raise InvariantViolation(f"{self.strategy.value} needs one POSITIVE and one NEGATIVE shot")
        for s in self.examples:
            has_ex = bool(s.explanation and s.explanation.strip())
            if self.strategy.with_explanations and not has_ex:
                raise InvariantViolation(f"{self.strategy.value} shots need explanations")
            if not self.strategy.with_explanations and s.explanation is not None:
                raise InvariantViolation(f"{self.strategy.value} shots must not carry explanations")

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "examples": [
                {"note_id": s.note_id, "text": s.text, "label": s.label.value, "explanation": s.explanation}
                for s in self.examples
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ShotSet":
        return cls(
            Strategy(obj["strategy"]),
            [Shot(e["text"], Label(e["label"]), e.get("explanation"), e.get("note_id")) for e in obj["examples"]],
        )


ZERO_SHOTS = ShotSet(Strategy.ZERO)


@dataclass
class PromptSpec:
    category: CategoryConfig
    shots: ShotSet
    query_text: str


@dataclass(frozen=True)
class RenderedPrompt:
    messages: tuple[tuple[str, str], ...]
    fingerprint: str

    def as_openai(self) -> list[dict]:
        return [{"role": r, "content": c} for r, c in self.messages]


def fingerprint(messages) -> str:
    h = hashlib.sha256()
    for role, content in messages:
        h.update(role.encode("utf-8"))
        h.update(content.encode("utf-8"))
    return h.hexdigest()


def _answer(label: Label, cfg: CategoryConfig) -> str:
    return cfg.positive_answer if label is Label.POSITIVE else cfg.negative_answer


def render(spec: PromptSpec) -> RenderedPrompt:
    spec.shots.validate()
    cfg = spec.category
    blocks = [cfg.task_text + "\n" + cfg.specific_text]
    for shot in spec.shots.examples:
        block = f"Note: {shot.text}\nAnswer: {_answer(shot.label, cfg)}"
        if shot.explanation is not None:
            block += f"\nExplanation: {shot.explanation}"
        blocks.append(block)
    blocks.append(f"Note: {spec.query_text}\nAnswer:")
    messages = (("system", cfg.role_text), ("user", "\n\n".join(blocks)))
    return RenderedPrompt(messages, fingerprint(messages))


def clarify(prompt: RenderedPrompt, cfg: CategoryConfig) -> RenderedPrompt:
    """Retry prompt after an unparseable reply."""
    line = f"Answer with exactly {cfg.positive_answer} or {cfg.negative_answer}."
    (sys_role, sys_text), (user_role, user_text) = prompt.messages
    messages = ((sys_role, sys_text), (user_role, user_text + "\n" + line))
    return RenderedPrompt(messages, fingerprint(messages))


_PUNCT = re.compile(r"^\W+|\W+$")


def parse_response(reply_text: str, cfg: CategoryConfig) -> Label:
    reply = reply_text.lower()
    pos = cfg.positive_answer.lower()
    neg = cfg.negative_answer.lower()
    tokens = reply.split()
    if tokens:
        first = _PUNCT.sub("", tokens[0])
        if first == pos:
            return Label.POSITIVE
        if first == neg:
            return Label.NEGATIVE
    has_pos = re.search(rf"\b{re.escape(pos)}\b", reply) is not None
    has_neg = re.search(rf"\b{re.escape(neg)}\b", reply) is not None
    if has_pos and not has_neg:
        return Label.POSITIVE
    if has_neg and not has_pos:
        return Label.NEGATIVE
    raise ParseFailure(reply_text)
