"""Contrastive 2-shot construction from a zero-shot seed pass.

Easy shots come from what the zero-shot annotator got right (TP, TN), hard
shots from what it got wrong (FN supplies the positive, FP the negative).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import CategoryConfig, Label, LabeledExample
from .errors import EmptyPool, InvariantViolation, MissingExplanation, MissingGold
from .llm_client import ABSTAIN, UsageLedger, annotate_batch
from .prompt import ZERO_SHOTS, PromptSpec, Shot, ShotSet, Strategy


@dataclass
class ConfusionPools:
    tp: list[tuple[str, str]] = field(default_factory=list)
    tn: list[tuple[str, str]] = field(default_factory=list)
    fp: list[tuple[str, str]] = field(default_factory=list)
    fn: list[tuple[str, str]] = field(default_factory=list)
    abstained: int = 0

    def sizes(self) -> dict[str, int]:
        return {"tp": len(self.tp), "tn": len(self.tn), "fp": len(self.fp),
                "fn": len(self.fn), "abstain": self.abstained}

    def to_json(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn, "abstained": self.abstained}

    @classmethod
    def from_json(cls, obj) -> "ConfusionPools":
        return cls(*([tuple(x) for x in obj[k]] for k in ("tp", "tn", "fp", "fn")), obj.get("abstained", 0))


def confusion_partition(predictions, golds, texts: Mapping[str, str] | None = None) -> ConfusionPools:
    """Split predictions into TP/TN/FP/FN against gold labels.

    ``predictions`` and ``golds`` are sequences of (id, label); labels may be
    ``Label`` members or 0/1.
    """
    gold = {i: _as_label(l) for i, l in golds}
    texts = texts or {}
    pools = ConfusionPools()
    for note_id, pred in predictions:
        if note_id not in gold:
            raise MissingGold(note_id)
        p = _as_label(pred)
        g = gold[note_id]
        entry = (note_id, texts.get(note_id, ""))
        if p is Label.POSITIVE:
            (pools.tp if g is Label.POSITIVE else pools.fp).append(entry)
        else:
            (pools.tn if g is Label.NEGATIVE else pools.fn).append(entry)
    return pools


def _as_label(value) -> Label:
    if isinstance(value, Label):
        return value
    if value in (1, True, "1"):
        return Label.POSITIVE
    if value in (0, False, "0"):
        return Label.NEGATIVE
    return Label(value)


def _pick(pool, rng):
    return pool[int(rng.integers(len(pool)))]


def build_shots(strategy: Strategy, pools: ConfusionPools, seed: int,
                explanations: Mapping[str, str] | None = None,
                fallback_easy: bool = False) -> ShotSet:
    strategy = Strategy(strategy)
    if strategy is Strategy.ZERO:
        return ShotSet(Strategy.ZERO)
    if strategy is Strategy.CUSTOM:
        raise InvariantViolation("CUSTOM shot sets are supplied directly, not selected")
    if strategy.easy:
        pos_name, neg_name = "TP", "TN"
    else:
        pos_name, neg_name = "FN", "FP"
    pos_pool = getattr(pools, pos_name.lower())
    neg_pool = getattr(pools, neg_name.lower())
    if not pos_pool and fallback_easy and strategy.hard:
        pos_pool = pools.tp
    if not neg_pool and fallback_easy and strategy.hard:
        neg_pool = pools.tn
    if not pos_pool:
        raise EmptyPool(pos_name, strategy.value)
    if not neg_pool:
        raise EmptyPool(neg_name, strategy.value)

    rng = np.random.default_rng(seed)
    pos_id, pos_text = _pick(pos_pool, rng)
    neg_id, neg_text = _pick(neg_pool, rng)
    pos_ex = neg_ex = None
    if strategy.with_explanations:
        explanations = explanations or {}
        for note_id in (pos_id, neg_id):
            if not (explanations.get(note_id) or "").strip():
                raise MissingExplanation(note_id)
        pos_ex, neg_ex = explanations[pos_id], explanations[neg_id]
    return ShotSet(strategy, [
        Shot(pos_text, Label.POSITIVE, pos_ex, pos_id),
        Shot(neg_text, Label.NEGATIVE, neg_ex, neg_id),
    ])


def draw_seed_set(train: Sequence[LabeledExample], size: int, seed: int,
                  stratified: bool = False) -> list[LabeledExample]:
    """Random seed sample from the training set, optionally class-stratified."""
    rng = np.random.default_rng(seed)
    size = min(size, len(train))
    if not stratified:
        idx = np.sort(rng.choice(len(train), size=size, replace=False))
        return [train[i] for i in idx]
    pos = [i for i, ex in enumerate(train) if ex.label is Label.POSITIVE]
    neg = [i for i, ex in enumerate(train) if ex.label is Label.NEGATIVE]
    n_pos = min(len(pos), size // 2)
    n_neg = min(len(neg), size - n_pos)
    chosen = list(rng.choice(pos, size=n_pos, replace=False)) + list(rng.choice(neg, size=n_neg, replace=False))
    return [train[i] for i in sorted(chosen)]


def run_seed_pass(seed_set: Sequence[LabeledExample], category: CategoryConfig, backend,
                  max_in_flight: int = 1, ledger: UsageLedger | None = None,
                  checkpoint_path=None):
    """Zero-shot annotate the seed set and partition against gold.

    Returns (pools, annotations, report dict).
    """
    items = [(ex.note_id, ex.text) for ex in seed_set]
    anns, ledger = annotate_batch(
        items, lambda _i, text: PromptSpec(category, ZERO_SHOTS, text), backend, category,
        Strategy.ZERO.source_name, max_in_flight=max_in_flight, ledger=ledger,
        checkpoint_path=checkpoint_path,
    )
    preds = [(a.note_id, a.binary) for a in anns if a.label != ABSTAIN]
    golds = [(ex.note_id, ex.label) for ex in seed_set]
    pools = confusion_partition(preds, golds, {ex.note_id: ex.text for ex in seed_set})
    pools.abstained = sum(a.label == ABSTAIN for a in anns)
    report = {"category": category.name, "seed_set_size": len(seed_set), **pools.sizes()}
    return pools, anns, report


def read_explanations(path, category: str | None = None) -> dict[str, str]:
    """JSON Lines of ``{"id", "explanation"}``; lines carrying a ``category``
    field are kept only when it matches ``category``."""
    out = {}
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                if category is not None and obj.get("category", category) != category:
                    continue
                out[str(obj["id"])] = obj["explanation"]
    return out
