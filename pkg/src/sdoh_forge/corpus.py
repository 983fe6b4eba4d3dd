"""Note ingestion, section extraction, sentence segmentation and balanced splits."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    InsufficientClass,
    MissingSection,
    UnknownRawValue,
)


class Label(str, Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"

    def flipped(self) -> "Label":
        return Label.NEGATIVE if self is Label.POSITIVE else Label.POSITIVE

    @property
    def as_int(self) -> int:
        return 1 if self is Label.POSITIVE else 0


class Disposition(str, Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"
    DROP = "DROP"


@dataclass
class NoteRecord:
    id: str
    text: str
    sections: dict[str, str] | None = None
    gold: dict[str, str] | None = None
    source_tag: str = ""
    extraction_suspect: bool = False

    def to_json(self) -> dict:
        out = {"id": self.id, "text": self.text, "source_tag": self.source_tag}
        if self.sections is not None:
            out["sections"] = self.sections
        if self.gold is not None:
            out["gold"] = self.gold
        if self.extraction_suspect:
            out["extraction_suspect"] = True
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "NoteRecord":
        try:
            note_id = str(obj["id"])
            text = obj["text"]
        except KeyError as exc:
            raise DataError(f"note record missing field {exc.args[0]!r}") from None
        if not note_id:
            raise DataError("note record has an empty id")
        return cls(
            id=note_id,
            text=text,
            sections=obj.get("sections"),
            gold=obj.get("gold"),
            source_tag=obj.get("source_tag", ""),
            extraction_suspect=bool(obj.get("extraction_suspect", False)),
        )


@dataclass
class CategoryConfig:
    name: str
    merge_map: dict[str, Disposition]
    role_text: str
    task_text: str
    specific_text: str
    positive_answer: str = "Yes"
    negative_answer: str = "No"
    mock_rules: list[tuple[str, Label]] = field(default_factory=list)
    mock_default: Label = Label.NEGATIVE

    def __post_init__(self):
        self.merge_map = {str(k): Disposition(v) for k, v in self.merge_map.items()}
        self.mock_rules = [(p, Label(l)) for p, l in self.mock_rules]
        self.mock_default = Label(self.mock_default)
        pos = self.positive_answer.strip()
        neg = self.negative_answer.strip()
        if not pos or not neg:
            raise ConfigError(f"category {self.name!r}: canonical answers must be non-empty")
        if pos.lower() == neg.lower():
            raise ConfigError(f"category {self.name!r}: positive and negative answers coincide")
        if not self.merge_map:
            raise ConfigError(f"category {self.name!r}: empty merge_map")

    @classmethod
    def from_dict(cls, name: str, obj: dict) -> "CategoryConfig":
        known = {
            "merge_map", "role_text", "task_text", "specific_text",
            "positive_answer", "negative_answer", "mock_rules", "mock_default",
        }
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"category {name!r}: unknown keys {sorted(extra)}")
        try:
            return cls(name=name, **obj)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"category {name!r}: {exc}") from None


@dataclass
class LabeledExample:
    note_id: str
    text: str
    label: Label
    label_source: str = "HUMAN"
    extraction_suspect: bool = False

    def __post_init__(self):
        if not " ".join(self.text.split()):
            raise DataError(f"example {self.note_id!r} has empty text")
        self.label = Label(self.label)


@dataclass(frozen=True)
class SplitSpec:
    train_pos: int
    train_neg: int
    test_pos: int
    test_neg: int
    seed: int = 0

    def __post_init__(self):
        for name in ("train_pos", "train_neg", "test_pos", "test_neg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"split count {name} must be >= 0")
        if self.seed < 0:
            raise ConfigError("split seed must be unsigned")


# --------------------------------------------------------------------------
# section extraction

DEFAULT_START = r"^[ \t]*social[ \t]+history[ \t]*:"
DEFAULT_TERMINATOR = r"^[ \t]*[A-Z][\w/&'()-]*(?:[ \t]+[A-Z][\w/&'()-]*)*[ \t]*:"


@dataclass
class SectionGrammar:
    """Start header plus terminator headers, both line-anchored regexes.

    The start pattern is matched case-insensitively; terminators are
    case-sensitive so that ``Title Words:`` lines are recognised but prose
    with a colon is not.
    """

    start: str = DEFAULT_START
    terminators: Sequence[str] = (DEFAULT_TERMINATOR,)
    min_chars: int = 10

    def __post_init__(self):
        try:
            self._start = re.compile(self.start, re.IGNORECASE | re.MULTILINE)
            self._terms = [re.compile(t, re.MULTILINE) for t in self.terminators]
        except re.error as exc:
            raise ConfigError(f"malformed section grammar: {exc}") from None
        if not self.terminators:
            raise ConfigError("section grammar needs at least one terminator pattern")
        if self.min_chars < 0:
            raise ConfigError("min_chars must be >= 0")


@dataclass
class Extraction:
    text: str | None
    suspect: bool = False


def _extract(note_text: str, grammar: SectionGrammar) -> Extraction:
    m = grammar._start.search(note_text)
    if m is None:
        return Extraction(None)
    begin = m.end()
    end = len(note_text)
    hit_eof = True
    for pat in grammar._terms:
        t = pat.search(note_text, begin)
        if t is not None and t.start() < end:
            end = t.start()
            hit_eof = False
    body = note_text[begin:end].strip()
    suspect = hit_eof or len(body) < grammar.min_chars
    return Extraction(body, suspect)


def extract_social_history(note_text: str, grammar: SectionGrammar | None = None) -> str | None:
    """Text between the first start header and the next terminator header.

    Returns None when the start header is absent.
    """
    return _extract(note_text, grammar or SectionGrammar()).text


def extract_with_flags(note_text: str, grammar: SectionGrammar | None = None) -> Extraction:
    return _extract(note_text, grammar or SectionGrammar())


# --------------------------------------------------------------------------
# sentences

DEFAULT_ABBREVIATIONS = ("Dr.", "Mr.", "Mrs.", "Ms.", "pt.", "hx.", "St.", "e.g.", "i.e.", "vs.")

_TERMINATOR = re.compile(r"[.!?]+(?=\s+[A-Z]|\s*$)")


def segment_sentences(text: str, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS) -> list[str]:
    abbrevs = {a.lower() for a in abbreviations}
    out = []
    start = 0
    for m in _TERMINATOR.finditer(text):
        end = m.end()
        token_start = max(text.rfind(c, 0, end) for c in (" ", "\t", "\n", "\r")) + 1
        if text[token_start:end].lower() in abbrevs:
            continue
        piece = text[start:end].strip()
        if piece:
            out.append(piece)
        start = end
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def concat_sections(note: NoteRecord, section_names: Sequence[str]) -> str:
    sections = note.sections or {}
    parts = []
    for name in section_names:
        if name not in sections:
            raise MissingSection(name)
        parts.append(sections[name])
    return "\n\n".join(parts)


# --------------------------------------------------------------------------
# labels and splits

def merge_label(raw: str, cfg: CategoryConfig) -> Disposition:
    try:
        return cfg.merge_map[raw]
    except KeyError:
        raise UnknownRawValue(raw, cfg.name) from None


def labeled_pool(notes: Iterable[NoteRecord], cfg: CategoryConfig) -> list[LabeledExample]:
    """Human-labeled examples for one category; DROP and unlabeled notes are skipped."""
    pool = []
    for note in notes:
        raw = (note.gold or {}).get(cfg.name)
        if raw is None:
            continue
        disp = merge_label(raw, cfg)
        if disp is Disposition.DROP:
            continue
        pool.append(LabeledExample(note.id, note.text, Label(disp.value),
                                   extraction_suspect=note.extraction_suspect))
    return pool


def balanced_split(pool: Sequence[LabeledExample], spec: SplitSpec):
    """Seeded class-balanced sampling without replacement into (train, test)."""
    ids = [ex.note_id for ex in pool]
    if len(set(ids)) != len(ids):
        raise DataError("pool contains duplicate note ids")
    pos = [ex for ex in pool if ex.label is Label.POSITIVE]
    neg = [ex for ex in pool if ex.label is Label.NEGATIVE]
    need_pos = spec.train_pos + spec.test_pos
    need_neg = spec.train_neg + spec.test_neg
    if len(pos) < need_pos:
        raise InsufficientClass(Label.POSITIVE.value, len(pos), need_pos)
    if len(neg) < need_neg:
        raise InsufficientClass(Label.NEGATIVE.value, len(neg), need_neg)

    rng = np.random.default_rng(spec.seed)
    pos_idx = rng.permutation(len(pos))[:need_pos]
    neg_idx = rng.permutation(len(neg))[:need_neg]
    train = [pos[i] for i in pos_idx[:spec.train_pos]] + [neg[i] for i in neg_idx[:spec.train_neg]]
    test = [pos[i] for i in pos_idx[spec.train_pos:]] + [neg[i] for i in neg_idx[spec.train_neg:]]
    train = [train[i] for i in rng.permutation(len(train))]
    test = [test[i] for i in rng.permutation(len(test))]
    return train, test


def balanced_prefix(examples: Sequence[LabeledExample], size: int) -> list[LabeledExample]:
    """First size/2 positives and size/2 negatives, keeping input order.

    Nested across sizes, which keeps learning curves from resampling noise.
    """
    half = size // 2
    pos = [ex for ex in examples if ex.label is Label.POSITIVE][:half]
    neg = [ex for ex in examples if ex.label is Label.NEGATIVE][: size - half]
    if len(pos) < half:
        raise InsufficientClass(Label.POSITIVE.value, len(pos), half)
    if len(neg) < size - half:
        raise InsufficientClass(Label.NEGATIVE.value, len(neg), size - half)
    chosen = {id(ex) for ex in pos + neg}
    return [ex for ex in examples if id(ex) in chosen]


# --------------------------------------------------------------------------
# files

def read_notes(path: str | Path, keep: Callable[[NoteRecord], bool] | None = None) -> list[NoteRecord]:
    """Load a JSON Lines corpus. ``keep`` is the per-dataset ingest filter."""
    notes = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            note = NoteRecord.from_json(obj)
            if note.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {note.id!r}")
            seen.add(note.id)
            if keep is None or keep(note):
                notes.append(note)
    return notes


def write_notes(path: str | Path, notes: Iterable[NoteRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for note in notes:
            fh.write(json.dumps(note.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def field_filter(exclude: dict[str, list] | None) -> Callable[[NoteRecord], bool] | None:
    """Ingest predicate dropping notes whose gold field takes an excluded value.

    ``{"age_group": ["neonate"], "tobacco": [None]}`` drops neonates and notes
    with a missing tobacco value.
    """
    if not exclude:
        return None

    def keep(note: NoteRecord) -> bool:
        gold = note.gold or {}
        for key, bad in exclude.items():
            if gold.get(key) in bad:
                return False
        return True

    return keep
