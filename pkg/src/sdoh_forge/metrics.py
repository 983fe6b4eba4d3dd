"""AUROC, precision/recall/F1, Cohen's kappa and pairwise agreement matrices."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import DataError, LengthMismatch, NoOverlap, SingleClass

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DataError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, predicted: Sequence[int], gold: Sequence[int]) -> "ConfusionMatrix":
        if len(predicted) != len(gold):
            raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold labels")
        p = np.asarray(predicted, dtype=int)
        g = np.asarray(gold, dtype=int)
        return cls(
            tp=int(np.sum((p == 1) & (g == 1))),
            fp=int(np.sum((p == 1) & (g == 0))),
            tn=int(np.sum((p == 0) & (g == 0))),
            fn=int(np.sum((p == 0) & (g == 1))),
        )

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    # mean of positions start+1 .. end, i.e. (start + end + 1) / 2
    group_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC via rank sums; ties count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if len(s) != len(y):
        raise LengthMismatch(f"{len(s)} scores vs {len(y)} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    r = midranks(s)
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_pairwise(scores: Sequence[float], labels: Sequence[int]) -> float:
    """O(P*N) reference definition."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    ps, ns = s[y == 1], s[y != 1]
    if len(ps) == 0 or len(ns) == 0:
        raise SingleClass("AUROC needs both classes")
    wins = 0.0
    for a in ps:
        for b in ns:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(ps) * len(ns))


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement over an arbitrary label alphabet.

    When expected agreement is 1 the raters used one shared label throughout,
    so kappa is 1; a degenerate p_e == 1 with p_o < 1 is logged and yields NaN.
    """
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} labels")
    n = len(a)
    if n == 0:
        raise LengthMismatch("kappa needs at least one rated item")
    p_o = sum(x == y for x, y in zip(a, b)) / n
    count_a: dict = {}
    count_b: dict = {}
    for x in a:
        count_a[x] = count_a.get(x, 0) + 1
    for y in b:
        count_b[y] = count_b.get(y, 0) + 1
    p_e = sum(count_a[c] * count_b.get(c, 0) for c in count_a) / (n * n)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        log.warning("degenerate kappa: expected agreement 1 with observed %.4f", p_o)
        return math.nan
    return (p_o - p_e) / (1.0 - p_e)


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()


def prf1(cm: ConfusionMatrix) -> PRF1:
    """Binary positive-class precision, recall and F1; 0/0 is taken as 0."""
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    if degenerate:
        log.info("0/0 in %s; reported as 0", ", ".join(degenerate))
    return PRF1(precision, recall, f1, tuple(degenerate))


@dataclass
class AgreementMatrix:
    sources: list[str]
    kappa: np.ndarray
    n: np.ndarray

    def cell(self, a: str, b: str) -> float:
        return float(self.kappa[self.sources.index(a), self.sources.index(b)])

    def to_json(self) -> dict:
        return {
            "sources": self.sources,
            "kappa": [[None if math.isnan(v) else float(v) for v in row] for row in self.kappa],
            "n": self.n.astype(int).tolist(),
        }


def agreement_matrix(annotation_sets: Mapping[str, Mapping[str, Hashable]]) -> AgreementMatrix:
    """Pairwise kappa between sources, each cell on the ids both sources labeled."""
    names = list(annotation_sets)
    if len(names) < 2:
        raise DataError("agreement needs at least two sources")
    k = len(names)
    kappa = np.eye(k)
    counts = np.zeros((k, k), dtype=int)
    for i, a in enumerate(names):
        counts[i, i] = len(annotation_sets[a])
        for j in range(i + 1, k):
            b = names[j]
            shared = sorted(set(annotation_sets[a]) & set(annotation_sets[b]))
            if not shared:
                raise NoOverlap(a, b)
            la = [annotation_sets[a][x] for x in shared]
            lb = [annotation_sets[b][x] for x in shared]
            kappa[i, j] = kappa[j, i] = cohen_kappa(la, lb)
            counts[i, j] = counts[j, i] = len(shared)
    return AgreementMatrix(names, kappa, counts)
