"""Gradient-boosted decision trees for binary classification.

Second-order logistic objective, exact greedy split enumeration over sparse
features with a learned default direction for absent (zero) values.

Split search is done one tree level at a time: all (node, feature) segments of
the active entries are scored in a single vectorized pass. Prefix sums are
computed per segment (never as differences of one global cumsum), so two
identical columns produce bit-identical gains and the lowest-index tie-break
is exact.
"""

from __future__ import annotations

import io
import json
import math
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, DegenerateLabels, DimensionMismatch
from .features import SparseVector

MODEL_MAGIC = b"SDFGBDT\x00"
MODEL_FORMAT_VERSION = 1
HESS_FLOOR = 1e-16


@dataclass(frozen=True)
class GbdtParams:
    n_trees: int = 200
    learning_rate: float = 0.1
    max_depth: int = 4
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    gamma: float = 0.0
    subsample: float = 1.0
    seed: int = 0
    base_score: float = 0.0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError("learning_rate must lie in (0, 1]")
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ConfigError("reg_lambda, gamma and min_child_weight must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample must lie in (0, 1]")
        if not math.isfinite(self.base_score):
            raise ConfigError("base_score must be finite")


@dataclass
class Tree:
    """Flat node table; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    default_left: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())


@dataclass
class GbdtModel:
    params: GbdtParams
    trees: list[Tree]
    n_features: int
    feature_fingerprint: str = ""
    train_loss: list[float] = field(default_factory=list, compare=False, repr=False)

    # -- prediction ---------------------------------------------------------

    def _check_dim(self, dim):
        if dim != self.n_features:
            raise DimensionMismatch(f"vector dimension {dim} != model dimension {self.n_features}")

    def margins(self, X: Sequence[SparseVector]) -> np.ndarray:
        for x in X:
            self._check_dim(x.dim)
        n = len(X)
        out = np.full(n, self.params.base_score, dtype=float)
        if n == 0 or not self.trees:
            return out
        lookup = _RowLookup(X, self.n_features)
        eta = self.params.learning_rate
        for tree in self.trees:
            out += eta * tree.value[_route(tree, lookup, n)]
        return out

    def predict_scores(self, X: Sequence[SparseVector]) -> np.ndarray:
        return _sigmoid(self.margins(X))

    # -- inspection ---------------------------------------------------------

    def feature_gain(self) -> dict[int, float]:
        total: dict[int, float] = {}
        for tree in self.trees:
            for f, g in zip(tree.feature, tree.gain):
                if f >= 0:
                    total[int(f)] = total.get(int(f), 0.0) + float(g)
        return total

    def summary(self, feature_names: Sequence[str] | None = None, top: int = 10) -> dict:
        depth_hist = Counter(t.depth() for t in self.trees)
        gains = sorted(self.feature_gain().items(), key=lambda kv: (-kv[1], kv[0]))[:top]
        name = (lambda i: feature_names[i]) if feature_names else (lambda i: f"f{i}")
        return {
            "n_trees": len(self.trees),
            "depth_histogram": {int(k): v for k, v in sorted(depth_hist.items())},
            "top_features": [{"feature": name(i), "index": i, "total_gain": g} for i, g in gains],
        }

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "format_version": MODEL_FORMAT_VERSION,
            "params": asdict(self.params),
            "n_features": self.n_features,
            "feature_fingerprint": self.feature_fingerprint,
            "n_trees": len(self.trees),
        }, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MODEL_MAGIC)
        buf.write(struct.pack("<I", len(header)))
        buf.write(header)
        for t in self.trees:
            buf.write(struct.pack("<I", t.n_nodes))
            buf.write(t.feature.astype("<i4").tobytes())
            buf.write(t.threshold.astype("<f8").tobytes())
            buf.write(t.left.astype("<i4").tobytes())
            buf.write(t.right.astype("<i4").tobytes())
            buf.write(t.default_left.astype("u1").tobytes())
            buf.write(t.value.astype("<f8").tobytes())
            buf.write(t.gain.astype("<f8").tobytes())
            buf.write(t.cover.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GbdtModel":
        if data[:8] != MODEL_MAGIC:
            raise DataError("not a model file")
        (hlen,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12:12 + hlen])
        if header["format_version"] != MODEL_FORMAT_VERSION:
            raise DataError(f"unsupported model format {header['format_version']}")
        pos = 12 + hlen
        trees = []

        def take(dtype, count):
            nonlocal pos
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).copy()
            pos += arr.nbytes
            return arr

        for _ in range(header["n_trees"]):
            (m,) = struct.unpack_from("<I", data, pos)
            pos += 4
            trees.append(Tree(
                feature=take("<i4", m).astype(np.int64),
                threshold=take("<f8", m).astype(float),
                left=take("<i4", m).astype(np.int64),
                right=take("<i4", m).astype(np.int64),
                default_left=take("u1", m).astype(bool),
                value=take("<f8", m).astype(float),
                gain=take("<f8", m).astype(float),
                cover=take("<f8", m).astype(float),
            ))
        return cls(GbdtParams(**header["params"]), trees, header["n_features"], header["feature_fingerprint"])

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GbdtModel":
        return cls.from_bytes(Path(path).read_bytes())


def predict_score(model: GbdtModel, x: SparseVector) -> float:
    return float(model.predict_scores([x])[0])


# --------------------------------------------------------------------------
# objective

def _sigmoid(m):
    m = np.asarray(m, dtype=float)
    e = np.exp(-np.abs(m))
    return np.where(m >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _halves(margin: float) -> tuple[float, float]:
    # sigmoid(m) and sigmoid(-m), each to full relative precision
    e = math.exp(-abs(margin))
    big, small = 1.0 / (1.0 + e), e / (1.0 + e)
    return (big, small) if margin >= 0 else (small, big)


def grad_hess(margin: float, label: int) -> tuple[float, float]:
    p, q = _halves(margin)
    # p - 1 == -q, computed without cancellation
    g = -q if label == 1 else p - label
    return g, max(p * q, HESS_FLOOR)


def _grad_hess_vec(margins: np.ndarray, y: np.ndarray):
    p = _sigmoid(margins)
    q = _sigmoid(-np.asarray(margins, dtype=float))
    g = np.where(y == 1, -q, p - y)
    return g, np.maximum(p * q, HESS_FLOOR)


def log_loss(margins: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^m) - y*m, stable
    m = np.asarray(margins, dtype=float)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def split_gain(GL, HL, GR, HR, reg_lambda, gamma) -> float:
    return 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda)
                  - (GL + GR) ** 2 / (HL + HR + reg_lambda)) - gamma


def leaf_weight(G, H, reg_lambda) -> float:
    return -G / (H + reg_lambda)


# --------------------------------------------------------------------------
# training

class _Columns:
    """Entries sorted by (feature, value, row), plus per-feature slices."""

    def __init__(self, X: Sequence[SparseVector], dim: int):
        rows, feats, vals = [], [], []
        for r, x in enumerate(X):
            if x.dim != dim:
                raise DimensionMismatch(f"row {r} has dimension {x.dim}, expected {dim}")
            rows.extend([r] * len(x.indices))
            feats.extend(x.indices)
            vals.extend(x.weights)
        rows = np.asarray(rows, dtype=np.int64)
        feats = np.asarray(feats, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        order = np.lexsort((rows, vals, feats))
        self.rows = rows[order]
        self.feats = feats[order]
        self.vals = vals[order]
        self.ptr = np.searchsorted(self.feats, np.arange(dim + 1))


def _segment_cumsum(x: np.ndarray, starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Inclusive cumsum restarted at every segment; rows of ``x`` are entries.

    Each segment is accumulated independently (padded into power-of-two
    width buckets), so the result for a segment depends on its content only.
    """
    out = np.empty_like(x)
    if len(starts) == 0:
        return out
    widths = np.ones_like(lengths)
    big = lengths > 1
    widths[big] = 1 << np.ceil(np.log2(lengths[big])).astype(np.int64)
    for w in np.unique(widths):
        sel = np.flatnonzero(widths == w)
        cols = np.arange(w)
        mask = cols[None, :] < lengths[sel][:, None]
        idx = starts[sel][:, None] + cols[None, :]
        mat = np.where(mask[..., None], x[np.where(mask, idx, 0)], 0.0)
        cs = np.cumsum(mat, axis=1)
        out[idx[mask]] = cs[mask]
    return out


class _TreeBuilder:
    def __init__(self, cols: _Columns, params: GbdtParams, n_rows: int):
        self.cols = cols
        self.p = params
        self.n = n_rows

    def build(self, g: np.ndarray, h: np.ndarray, sampled: np.ndarray):
        p = self.p
        cols = self.cols
        nodes = {k: [] for k in ("feature", "threshold", "left", "right", "default_left", "value", "gain", "cover")}

        def new_node():
            for k, v in (("feature", -1), ("threshold", 0.0), ("left", -1), ("right", -1),
                         ("default_left", True), ("value", 0.0), ("gain", 0.0), ("cover", 0.0)):
                nodes[k].append(v)
            return len(nodes["feature"]) - 1

        root = new_node()
        node_of_row = np.zeros(self.n, dtype=np.int64)  # -1 once a row sits in a finished leaf
        leaf_of_row = np.full(self.n, -1, dtype=np.int64)
        gs = np.where(sampled, g, 0.0)
        hs = np.where(sampled, h, 0.0)
        cs = sampled.astype(np.int64)

        active = np.flatnonzero(sampled[cols.rows])  # entry positions, sorted (node, f, v, r)
        frontier = [root]
        for depth in range(p.max_depth + 1):
            if not frontier:
                break
            live = node_of_row >= 0
            size = max(frontier) + 1
            Gn = np.bincount(node_of_row[live], weights=gs[live], minlength=size)
            Hn = np.bincount(node_of_row[live], weights=hs[live], minlength=size)
            Cn = np.bincount(node_of_row[live], weights=cs[live], minlength=size).astype(np.int64)
            for nd in frontier:
                nodes["value"][nd] = leaf_weight(Gn[nd], Hn[nd], p.reg_lambda)
                nodes["cover"][nd] = Hn[nd]

            best = {}
            if depth < p.max_depth and len(active):
                best = self._best_splits(active, node_of_row, g, h, Gn, Hn, Cn)

            next_frontier = []
            for nd in frontier:
                split = best.get(nd)
                in_node = node_of_row == nd
                if split is None:
                    leaf_of_row[in_node] = nd
                    node_of_row[in_node] = -1
                    continue
                f, thr, dleft, gain = split
                lc, rc = new_node(), new_node()
                nodes["feature"][nd] = f
                nodes["threshold"][nd] = thr
                nodes["default_left"][nd] = dleft
                nodes["left"][nd] = lc
                nodes["right"][nd] = rc
                nodes["gain"][nd] = gain
                go_left = np.full(self.n, dleft)
                lo, hi = cols.ptr[f], cols.ptr[f + 1]
                go_left[cols.rows[lo:hi]] = cols.vals[lo:hi] < thr
                node_of_row[in_node & go_left] = lc
                node_of_row[in_node & ~go_left] = rc
                next_frontier += [lc, rc]
            frontier = next_frontier
            if len(active):
                owner = node_of_row[cols.rows[active]]
                active = active[owner >= 0]
                active = active[np.argsort(node_of_row[cols.rows[active]], kind="stable")]

        tree = Tree(
            feature=np.asarray(nodes["feature"], dtype=np.int64),
            threshold=np.asarray(nodes["threshold"], dtype=float),
            left=np.asarray(nodes["left"], dtype=np.int64),
            right=np.asarray(nodes["right"], dtype=np.int64),
            default_left=np.asarray(nodes["default_left"], dtype=bool),
            value=np.asarray(nodes["value"], dtype=float),
            gain=np.asarray(nodes["gain"], dtype=float),
            cover=np.asarray(nodes["cover"], dtype=float),
        )
        return tree, leaf_of_row

    def _best_splits(self, active, node_of_row, g, h, Gn, Hn, Cn):
        p = self.p
        cols = self.cols
        rows = cols.rows[active]
        node = node_of_row[rows]
        feat = cols.feats[active]
        v = cols.vals[active]
        E = len(active)

        new_seg = np.ones(E, dtype=bool)
        new_seg[1:] = (node[1:] != node[:-1]) | (feat[1:] != feat[:-1])
        starts = np.flatnonzero(new_seg)
        ends = np.append(starts[1:], E) - 1
        lengths = ends - starts + 1
        seg_of = np.cumsum(new_seg) - 1

        cum = _segment_cumsum(np.stack([g[rows], h[rows]], axis=1), starts, lengths)
        seg_node = node[starts]
        Gf, Hf = cum[ends, 0], cum[ends, 1]
        Gm = Gn[seg_node] - Gf
        Hm = Hn[seg_node] - Hf
        Cm = Cn[seg_node] - lengths

        # candidates between consecutive distinct present values
        pos = np.arange(E)
        is_last = np.zeros(E, dtype=bool)
        is_last[ends] = True
        nxt = np.minimum(pos + 1, E - 1)
        between = ~is_last & (v < v[nxt])
        ci = np.flatnonzero(between)
        c_seg = seg_of[ci]
        c_thr = 0.5 * (v[ci] + v[nxt[ci]])
        straddle = (v[ci] < 0) & (v[nxt[ci]] > 0) & (Cm[c_seg] > 0)
        c_thr[straddle] = 0.5 * v[ci[straddle]]
        c_PG, c_PH = cum[ci, 0], cum[ci, 1]
        c_cnt = ci - starts[c_seg] + 1

        # zero-boundary candidates when absent rows exist and all present values share a sign
        has_missing = Cm > 0
        all_pos = has_missing & (v[starts] > 0)
        all_neg = has_missing & (v[ends] < 0)
        zp = np.flatnonzero(all_pos)
        zn = np.flatnonzero(all_neg)
        seg_c = np.concatenate([c_seg, zp, zn])
        thr_c = np.concatenate([c_thr, 0.5 * v[starts[zp]], 0.5 * v[ends[zn]]])
        PG = np.concatenate([c_PG, np.zeros(len(zp)), Gf[zn]])
        PH = np.concatenate([c_PH, np.zeros(len(zp)), Hf[zn]])
        PC = np.concatenate([c_cnt, np.zeros(len(zp), dtype=np.int64), lengths[zn]])
        if len(seg_c) == 0:
            return {}

        s_node = seg_node[seg_c]
        s_feat = feat[starts[seg_c]]
        G, H = Gn[s_node], Hn[s_node]
        parent = G * G / (H + p.reg_lambda)
        RG, RH, RC = Gf[seg_c] - PG, Hf[seg_c] - PH, lengths[seg_c] - PC
        mG, mH, mC = Gm[seg_c], Hm[seg_c], Cm[seg_c]

        def score(GL, HL, CL, GR, HR, CR):
            gain = 0.5 * (GL * GL / (HL + p.reg_lambda) + GR * GR / (HR + p.reg_lambda) - parent) - p.gamma
            ok = (CL > 0) & (CR > 0) & (HL >= p.min_child_weight) & (HR >= p.min_child_weight)
            return np.where(ok, gain, -np.inf)

        gain_l = score(PG + mG, PH + mH, PC + mC, RG, RH, RC)
        gain_r = np.where(mC > 0, score(PG, PH, PC, RG + mG, RH + mH, RC + mC), -np.inf)

        all_gain = np.concatenate([gain_l, gain_r])
        all_node = np.concatenate([s_node, s_node])
        top = np.full(len(Gn), -np.inf)
        np.maximum.at(top, all_node, all_gain)
        tied = np.flatnonzero((all_gain == top[all_node]) & (all_gain > 0))
        if len(tied) == 0:
            return {}
        k = len(seg_c)
        t_node = all_node[tied]
        t_feat = s_feat[tied % k]
        t_thr = thr_c[tied % k]
        t_dr = tied >= k
        order = np.lexsort((t_dr, t_thr, t_feat, t_node))
        _, first = np.unique(t_node[order], return_index=True)
        out = {}
        for i in order[first]:
            out[int(t_node[i])] = (int(t_feat[i]), float(t_thr[i]), not bool(t_dr[i]), float(all_gain[tied[i]]))
        return out


def train(X: Sequence[SparseVector], y: Sequence[int], params: GbdtParams | None = None,
          feature_fingerprint: str = "") -> GbdtModel:
    params = params or GbdtParams()
    n = len(X)
    if n != len(y):
        raise DimensionMismatch(f"{n} rows but {len(y)} labels")
    if n < 2:
        raise DataError("need at least two training rows")
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    if y.min() == y.max():
        raise DegenerateLabels("training labels contain a single class")
    dim = X[0].dim
    cols = _Columns(X, dim)
    builder = _TreeBuilder(cols, params, n)
    rng = np.random.default_rng(params.seed)
    margins = np.full(n, params.base_score)
    trees, losses = [], []
    for _ in range(params.n_trees):
        g, h = _grad_hess_vec(margins, y)
        if params.subsample < 1.0:
            sampled = np.zeros(n, dtype=bool)
            k = max(1, int(round(params.subsample * n)))
            sampled[rng.choice(n, size=k, replace=False)] = True
        else:
            sampled = np.ones(n, dtype=bool)
        tree, leaf_of_row = builder.build(g, h, sampled)
        trees.append(tree)
        margins = margins + params.learning_rate * tree.value[leaf_of_row]
        losses.append(log_loss(margins, y))
    return GbdtModel(params, trees, dim, feature_fingerprint, losses)


# --------------------------------------------------------------------------
# prediction helpers

class _RowLookup:
    """Vectorized x[row, feature] over a batch of sparse rows."""

    def __init__(self, X: Sequence[SparseVector], dim: int):
        keys, vals = [], []
        for r, x in enumerate(X):
            keys.extend(r * dim + i for i in x.indices)
            vals.extend(x.weights)
        self.keys = np.asarray(keys, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=float)
        self.dim = dim

    def get(self, rows: np.ndarray, feats: np.ndarray):
        q = rows * self.dim + feats
        pos = np.searchsorted(self.keys, q)
        pos_c = np.minimum(pos, max(len(self.keys) - 1, 0))
        present = (pos < len(self.keys)) & (self.keys[pos_c] == q) if len(self.keys) else np.zeros(len(q), bool)
        vals = np.where(present, self.vals[pos_c] if len(self.keys) else 0.0, 0.0)
        return vals, present


def _route(tree: Tree, lookup: _RowLookup, n: int) -> np.ndarray:
    at = np.zeros(n, dtype=np.int64)
    while True:
        f = tree.feature[at]
        internal = np.flatnonzero(f >= 0)
        if len(internal) == 0:
            return at
        nd = at[internal]
        vals, present = lookup.get(internal, f[internal])
        go_left = np.where(present, vals < tree.threshold[nd], tree.default_left[nd])
        at[internal] = np.where(go_left, tree.left[nd], tree.right[nd])
