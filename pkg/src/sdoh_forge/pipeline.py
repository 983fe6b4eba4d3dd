"""Stage orchestration behind the CLI.

Every stage reads its inputs from the config and the run directory and writes
its outputs back there, so stages can be run one at a time or chained by
``cmd_run``. Files under ``metrics/`` and ``manifest.json`` are deterministic
in mock mode; wall-clock figures live under ``ledgers/`` only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .config import RunConfig
from .corpus import (
    Label,
    LabeledExample,
    NoteRecord,
    SplitSpec,
    balanced_prefix,
    balanced_split,
    concat_sections,
    extract_with_flags,
    field_filter,
    labeled_pool,
    read_notes,
    segment_sentences,
    write_notes,
)
from .errors import ConfigError, DataError, IncompleteRun
from .features import Vocabulary, fit_vocab, vectorize_all
from .gbdt import GbdtModel, train
from .llm_client import (
    ABSTAIN,
    MockBackend,
    RemoteBackend,
    UsageLedger,
    annotate_batch,
    estimate_cost,
    format_dollars,
    read_annotations,
    write_annotations,
)
from .metrics import ConfusionMatrix, agreement_matrix, auroc, cohen_kappa, prf1
from .prompt import ZERO_SHOTS, PromptSpec, ShotSet, Strategy, render
from .shot_selector import (
    ConfusionPools,
    build_shots,
    draw_seed_set,
    read_explanations,
    run_seed_pass,
)

log = logging.getLogger(__name__)

HUMAN = "human"
TRIAGE_TAGS = ("HUMAN_ERROR", "ANNOTATOR_ERROR", "EXTRACTION_ERROR", "AMBIGUITY")


# --------------------------------------------------------------------------
# helpers

def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunDir:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def annotations(self, cat, subset, source):
        return self.path("annotations", f"{cat}__{subset}__{source}.jsonl")

    def checkpoint(self, cat, subset, source):
        return self.path("checkpoints", f"{cat}__{subset}__{source}.jsonl")

    def ledger(self, cat, subset, source):
        return self.path("ledgers", f"{cat}__{subset}__{source}.json")

    def source_ledger(self, cat, source) -> UsageLedger | None:
        """All subsets (seed, pool, test) annotated by one source, summed."""
        paths = sorted(self.path("ledgers").glob(f"{cat}__*__{source}.json"))
        if not paths:
            return None
        total = UsageLedger()
        for p in paths:
            total.merge(UsageLedger.from_json(_load(p)))
        return total

    def save_ledger(self, path: Path, ledger: UsageLedger) -> None:
        # token counts already include anything restored from a checkpoint;
        # only wall time accumulates across invocations
        if path.exists():
            ledger.wall_seconds += float(_load(path).get("wall_seconds", 0.0))
        _dump(path, ledger.to_json())

    def shots(self, cat, source):
        return self.path("shots", f"{cat}__{source}.json")

    def model(self, cat, source, size):
        return self.path("models", f"{cat}__{source}__{size}.bin")

    def vocab(self, cat):
        return self.path("models", f"{cat}__vocab.tsv")

    def metrics(self, cat, name):
        return self.path("metrics", f"{cat}__{name}.json")

    def triage(self, cat):
        return self.path("triage", f"{cat}__disagreements.jsonl")

    # manifest ------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.path("manifest.json")

    def manifest(self) -> dict:
        return _load(self.manifest_path) if self.manifest_path.exists() else {}

    def update_manifest(self, cfg: RunConfig, *keys_and_value) -> None:
        *keys, value = keys_and_value
        m = self.manifest()
        m["config"] = cfg.effective()
        m["config_hash"] = cfg.config_hash()
        m["seed"] = cfg.seed
        inputs = {}
        for key in ("labeled", "unlabeled", "explanations"):
            p = cfg.raw["data"][key]
            if p and Path(p).exists():
                inputs[key] = {"path": p, "sha256": _sha256_file(p)}
        m["inputs"] = inputs
        node = m
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
        _dump(self.manifest_path, m)

    def record_stage_time(self, stage: str, seconds: float) -> None:
        p = self.path("ledgers", "stages.json")
        times = _load(p) if p.exists() else {}
        times[stage] = times.get(stage, 0.0) + seconds
        _dump(p, times)


def source_of(strategy: Strategy) -> str:
    return strategy.source_name


def display_name(source: str) -> str:
    if source == HUMAN:
        return "Human"
    for s in Strategy:
        if s.source_name == source:
            return s.display
    return source


def make_backend(cfg: RunConfig, category: str, transport=None):
    cat = cfg.categories[category]
    if cfg.mock_mode:
        return MockBackend(cfg.mock_config(category), cat)
    return RemoteBackend(cfg.client, transport=transport)


def _timed(stage):
    def deco(fn):
        def wrapper(cfg, *args, **kwargs):
            started = time.perf_counter()
            try:
                return fn(cfg, *args, **kwargs)
            finally:
                RunDir(cfg.out_dir).record_stage_time(stage, time.perf_counter() - started)
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper
    return deco


# --------------------------------------------------------------------------
# data

@dataclass
class CategoryData:
    train: list[LabeledExample]
    test: list[LabeledExample]


def load_split(cfg: RunConfig, category: str) -> CategoryData:
    cfg.require_paths("data.labeled")
    keep = field_filter(cfg.raw["extract"]["exclude"])
    notes = read_notes(cfg.raw["data"]["labeled"], keep)
    pool = labeled_pool(notes, cfg.categories[category])
    train_set, test_set = balanced_split(pool, cfg.split)
    return CategoryData(train_set, test_set)


def load_unlabeled(cfg: RunConfig) -> list[NoteRecord]:
    cfg.require_paths("data.unlabeled")
    keep = field_filter(cfg.raw["extract"]["exclude"])
    notes = read_notes(cfg.raw["data"]["unlabeled"], keep)
    limit = int(cfg.raw["data"]["annotate_limit"])
    return notes[:limit] if limit > 0 else notes


def _load_explanations(cfg: RunConfig, category: str) -> dict[str, str]:
    if not cfg.raw["data"]["explanations"]:
        return {}
    cfg.require_paths("data.explanations")
    return read_explanations(cfg.raw["data"]["explanations"], category)


# --------------------------------------------------------------------------
# extract

def cmd_extract(cfg: RunConfig) -> dict:
    """Turn raw notes into annotation units per the configured dataset mode."""
    ex = cfg.raw["extract"]
    cfg.require_paths("extract.input")
    if not ex["output"]:
        raise ConfigError("config key extract.output is required")
    notes = read_notes(ex["input"], field_filter(ex["exclude"]))
    mode = ex["mode"]
    grammar = cfg.grammar
    out: list[NoteRecord] = []
    report = {"mode": mode, "notes": len(notes), "extracted": 0, "absent": 0, "suspect": 0, "units": 0}
    for note in notes:
        if mode == "section":
            res = extract_with_flags(note.text, grammar)
            if res.text is None:
                report["absent"] += 1
                continue
            report["extracted"] += 1
            report["suspect"] += int(res.suspect)
            out.append(NoteRecord(note.id, res.text, gold=note.gold, source_tag=note.source_tag,
                                  extraction_suspect=res.suspect))
        elif mode == "sentence":
            sentences = segment_sentences(note.text)
            report["extracted"] += 1
            for k, sent in enumerate(sentences):
                out.append(NoteRecord(f"{note.id}#{k}", sent, source_tag=note.source_tag))
        else:
            text = concat_sections(note, ex["sections"])
            report["extracted"] += 1
            out.append(NoteRecord(note.id, text, gold=note.gold, source_tag=note.source_tag))
    report["units"] = len(out)
    write_notes(ex["output"], out)
    _dump(Path(ex["output"] + ".report.json"), report)
    return report


# --------------------------------------------------------------------------
# seed pass and shot selection

@_timed("seed")
def cmd_seed(cfg: RunConfig, transport=None) -> dict:
    run = RunDir(cfg.out_dir)
    reports = {}
    for cat_name in cfg.selected_categories:
        cat = cfg.categories[cat_name]
        data = load_split(cfg, cat_name)
        seed_set = draw_seed_set(data.train, int(cfg.raw["seed_set_size"]), cfg.seed,
                                 bool(cfg.raw["seed_stratified"]))
        ledger = UsageLedger()
        pools, anns, report = run_seed_pass(
            seed_set, cat, make_backend(cfg, cat_name, transport), cfg.client.max_in_flight,
            ledger, run.checkpoint(cat_name, "seed", Strategy.ZERO.source_name))
        write_annotations(run.annotations(cat_name, "seed", Strategy.ZERO.source_name), anns)
        _dump(run.path("shots", f"{cat_name}__pools.json"), pools.to_json())
        _dump(run.metrics(cat_name, "seed_pass"), report)
        run.save_ledger(run.ledger(cat_name, "seed", Strategy.ZERO.source_name), ledger)
        run.update_manifest(cfg, "categories", cat_name, "seed_pass", {
            "seed_ids": [ex.note_id for ex in seed_set],
            "stratified": bool(cfg.raw["seed_stratified"]),
            "pool_sizes": pools.sizes(),
        })
        reports[cat_name] = report
    return reports


@_timed("select-shots")
def cmd_select_shots(cfg: RunConfig) -> dict:
    run = RunDir(cfg.out_dir)
    chosen = {}
    for cat_name in cfg.selected_categories:
        pools_path = run.path("shots", f"{cat_name}__pools.json")
        if not pools_path.exists():
            raise IncompleteRun(f"no seed pass for {cat_name}; run 'seed' first")
        pools = ConfusionPools.from_json(_load(pools_path))
        explanations = _load_explanations(cfg, cat_name)
        for strategy in cfg.strategies:
            if strategy is Strategy.ZERO:
                continue
            shots = build_shots(strategy, pools, cfg.seed, explanations, bool(cfg.raw["fallback_easy"]))
            _dump(run.shots(cat_name, source_of(strategy)), shots.to_json())
            ids = [s.note_id for s in shots.examples]
            chosen.setdefault(cat_name, {})[strategy.value] = ids
            run.update_manifest(cfg, "categories", cat_name, "shots", strategy.value, {
                "chosen_ids": ids,
                "seed": cfg.seed,
                "pool_sizes": pools.sizes(),
            })
    return chosen


def load_shots(cfg: RunConfig, cat_name: str, strategy: Strategy) -> ShotSet:
    if strategy is Strategy.ZERO:
        return ZERO_SHOTS
    path = RunDir(cfg.out_dir).shots(cat_name, source_of(strategy))
    if not path.exists():
        raise IncompleteRun(f"no {strategy.value} shots for {cat_name}; run 'select-shots' first")
    return ShotSet.from_json(_load(path))


# --------------------------------------------------------------------------
# annotation

def _annotate(cfg, run, cat_name, subset, strategy, items, transport):
    cat = cfg.categories[cat_name]
    shots = load_shots(cfg, cat_name, strategy)
    source = source_of(strategy)
    run_ledger = UsageLedger()
    anns, _ = annotate_batch(
        items, lambda _i, text: PromptSpec(cat, shots, text), make_backend(cfg, cat_name, transport),
        cat, source, max_in_flight=cfg.client.max_in_flight, ledger=run_ledger,
        checkpoint_path=run.checkpoint(cat_name, subset, source),
    )
    run.save_ledger(run.ledger(cat_name, subset, source), run_ledger)
    write_annotations(run.annotations(cat_name, subset, source), anns)
    template = render(PromptSpec(cat, shots, ""))
    run.update_manifest(cfg, "categories", cat_name, "prompts", source, template.fingerprint)
    return anns


@_timed("annotate")
def cmd_annotate(cfg: RunConfig, transport=None, subsets=("pool", "test")) -> dict:
    """Annotate the unlabeled pool (weak training labels) and the human test set."""
    run = RunDir(cfg.out_dir)
    summary = {}
    pool_items = None
    if "pool" in subsets:
        pool_items = [(n.id, n.text) for n in load_unlabeled(cfg)]
    for cat_name in cfg.selected_categories:
        data = load_split(cfg, cat_name)
        for strategy in cfg.strategies:
            source = source_of(strategy)
            for subset in subsets:
                items = pool_items if subset == "pool" else [(ex.note_id, ex.text) for ex in data.test]
                anns = _annotate(cfg, run, cat_name, subset, strategy, items, transport)
                counts = {lab: sum(a.label == lab for a in anns) for lab in ("POSITIVE", "NEGATIVE", ABSTAIN)}
                summary.setdefault(cat_name, {}).setdefault(source, {})[subset] = counts
    return summary


# --------------------------------------------------------------------------
# training and evaluation

def weak_training_set(cfg: RunConfig, cat_name: str, source: str) -> list[LabeledExample]:
    run = RunDir(cfg.out_dir)
    path = run.annotations(cat_name, "pool", source)
    if not path.exists():
        raise IncompleteRun(f"no pool annotations for {cat_name}/{source}; run 'annotate' first")
    texts = {n.id: n for n in load_unlabeled(cfg)}
    pool = []
    for a in read_annotations(path):
        if a.label == ABSTAIN or a.note_id not in texts:
            continue
        note = texts[a.note_id]
        pool.append(LabeledExample(a.note_id, note.text, Label(a.label), f"ANNOTATOR({source})",
                                   note.extraction_suspect))
    biggest = max(cfg.curve_sizes)
    spec = SplitSpec(biggest // 2, biggest - biggest // 2, 0, 0, cfg.seed)
    weak, _ = balanced_split(pool, spec)
    return weak


def label_sources(cfg: RunConfig) -> list[str]:
    return [HUMAN] + [source_of(s) for s in cfg.strategies]


def training_sets(cfg: RunConfig, cat_name: str, data: CategoryData) -> dict[str, list[LabeledExample]]:
    sets = {HUMAN: data.train}
    for strategy in cfg.strategies:
        sets[source_of(strategy)] = weak_training_set(cfg, cat_name, source_of(strategy))
    return sets


def fit_category_vocab(cfg: RunConfig, cat_name: str, data: CategoryData) -> Vocabulary:
    """Vocabulary over the human training texts plus the unlabeled pool (never the test set)."""
    texts = [ex.text for ex in data.train] + [n.text for n in load_unlabeled(cfg)]
    return fit_vocab(texts, cfg.ngram_range, cfg.min_df)


@_timed("train")
def cmd_train(cfg: RunConfig) -> dict:
    run = RunDir(cfg.out_dir)
    params = cfg.gbdt_params
    trained = {}
    for cat_name in cfg.selected_categories:
        data = load_split(cfg, cat_name)
        vocab = fit_category_vocab(cfg, cat_name, data)
        run.vocab(cat_name).parent.mkdir(parents=True, exist_ok=True)
        vocab.save(run.vocab(cat_name))
        for source, examples in training_sets(cfg, cat_name, data).items():
            vectors = vectorize_all([ex.text for ex in examples], vocab)
            by_id = {ex.note_id: v for ex, v in zip(examples, vectors)}
            for size in cfg.curve_sizes:
                subset = balanced_prefix(examples, size)
                X = [by_id[ex.note_id] for ex in subset]
                y = [ex.label.as_int for ex in subset]
                model = train(X, y, params, vocab.fingerprint)
                model.save(run.model(cat_name, source, size))
                trained.setdefault(cat_name, []).append((source, size))
        run.update_manifest(cfg, "categories", cat_name, "vocabulary", {
            "fingerprint": vocab.fingerprint, "size": len(vocab)})
    return trained


@_timed("eval")
def cmd_eval(cfg: RunConfig) -> dict:
    run = RunDir(cfg.out_dir)
    out = {}
    for cat_name in cfg.selected_categories:
        data = load_split(cfg, cat_name)
        if not run.vocab(cat_name).exists():
            raise IncompleteRun(f"no trained models for {cat_name}; run 'train' first")
        vocab = Vocabulary.load(run.vocab(cat_name))
        X = vectorize_all([ex.text for ex in data.test], vocab)
        y = np.array([ex.label.as_int for ex in data.test])
        rows = []
        for source in label_sources(cfg):
            for size in cfg.curve_sizes:
                path = run.model(cat_name, source, size)
                if not path.exists():
                    raise IncompleteRun(f"missing model {path.name}")
                model = GbdtModel.load(path)
                scores = model.predict_scores(X)
                cm = ConfusionMatrix.from_labels((scores >= 0.5).astype(int), y)
                p = prf1(cm)
                rows.append({
                    "source": source, "size": size, "auroc": auroc(scores, y),
                    "precision": p.precision, "recall": p.recall, "f1": p.f1,
                    "zero_division": list(p.degenerate), "n_test": len(y),
                })
        _dump(run.metrics(cat_name, "curve"), {"category": cat_name, "rows": rows})
        out[cat_name] = rows
    return out


def _direct_rows(cfg, run, cat_name, data):
    gold = {ex.note_id: ex.label for ex in data.test}
    rows = []
    label_sets = {HUMAN: {i: l.value for i, l in gold.items()}}
    for strategy in cfg.strategies:
        source = source_of(strategy)
        path = run.annotations(cat_name, "test", source)
        if not path.exists():
            raise IncompleteRun(f"no test annotations for {cat_name}/{source}")
        anns = [a for a in read_annotations(path) if a.note_id in gold]
        kept = [a for a in anns if a.label != ABSTAIN]
        pred = [Label(a.label).as_int for a in kept]
        truth = [gold[a.note_id].as_int for a in kept]
        cm = ConfusionMatrix.from_labels(pred, truth)
        p = prf1(cm)
        rows.append({
            "source": source, "n": len(anns), "abstained": len(anns) - len(kept),
            "confusion": cm.to_json(), "precision": p.precision, "recall": p.recall, "f1": p.f1,
            "accuracy": (cm.tp + cm.tn) / cm.total if cm.total else 0.0,
            "kappa": cohen_kappa(pred, truth) if kept else None,
            "zero_division": list(p.degenerate),
        })
        label_sets[source] = {a.note_id: a.label for a in kept}
    return rows, label_sets


@_timed("direct-eval")
def cmd_direct_eval(cfg: RunConfig, transport=None, annotate: bool = True) -> dict:
    """Annotator-as-classifier on the human test set; no model is trained."""
    run = RunDir(cfg.out_dir)
    if annotate:
        cmd_annotate(cfg, transport, subsets=("test",))
    out = {}
    for cat_name in cfg.selected_categories:
        data = load_split(cfg, cat_name)
        rows, label_sets = _direct_rows(cfg, run, cat_name, data)
        _dump(run.metrics(cat_name, "direct_eval"), {"category": cat_name, "rows": rows})
        if len(label_sets) >= 2:
            am = agreement_matrix(label_sets)
            _dump(run.metrics(cat_name, "agreement"), {"category": cat_name, **am.to_json()})
        out[cat_name] = rows
    return out


def cmd_run(cfg: RunConfig, transport=None, report: bool = True) -> Path:
    """Seed pass, shot selection, annotation, training, evaluation and reports."""
    cfg.require_paths("data.labeled", "data.unlabeled")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    cmd_seed(cfg, transport)
    cmd_select_shots(cfg)
    cmd_annotate(cfg, transport)
    cmd_train(cfg)
    cmd_eval(cfg)
    cmd_direct_eval(cfg, transport, annotate=False)
    if report:
        cmd_report(cfg.out_dir)
    return cfg.out_dir


# --------------------------------------------------------------------------
# reports

@dataclass
class DisagreementRecord:
    note_id: str
    source: str
    text: str
    human_label: str
    annotator_label: str
    auto_flags: list[str]
    triage_tag: str | None = None


def _read_triage(path: Path) -> dict[tuple[str, str], str | None]:
    if not path.exists():
        return {}
    tags = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            tag = obj.get("triage_tag")
            if tag is not None and tag not in TRIAGE_TAGS:
                raise DataError(f"{path}: unknown triage_tag {tag!r}")
            tags[(obj["note_id"], obj["source"])] = tag
    return tags


def build_triage(cfg: RunConfig, run: RunDir, cat_name: str, data: CategoryData) -> list[DisagreementRecord]:
    existing = _read_triage(run.triage(cat_name))
    by_id = {ex.note_id: ex for ex in data.test}
    records = []
    for strategy in cfg.strategies:
        source = source_of(strategy)
        path = run.annotations(cat_name, "test", source)
        if not path.exists():
            continue
        for a in read_annotations(path):
            ex = by_id.get(a.note_id)
            if ex is None or a.label == ABSTAIN or a.label == ex.label.value:
                continue
            flags = ["extraction_suspect"] if ex.extraction_suspect else []
            records.append(DisagreementRecord(a.note_id, source, ex.text, ex.label.value, a.label, flags,
                                              existing.get((a.note_id, source))))
    records.sort(key=lambda r: (0 if r.auto_flags else 1, ",".join(r.auto_flags), r.note_id, r.source))
    return records


def _fmt(x, digits=4):
    return "n/a" if x is None else f"{x:.{digits}f}"


def cmd_report(run_dir, cfg: RunConfig | None = None) -> list[Path]:
    """Render markdown tables, figures and triage files from a completed run."""
    run = RunDir(run_dir)
    manifest = run.manifest()
    if not manifest:
        raise IncompleteRun(f"{run_dir} has no manifest.json")
    if cfg is None:
        cfg = RunConfig.from_dict(manifest["config"])
        cfg.raw["out_dir"] = str(run.root)
    written = []
    reports = run.path("reports")
    reports.mkdir(parents=True, exist_ok=True)
    cost_lines = ["# Annotation cost and time", "",
                  "| category | source | annotations | remote requests | prompt tokens | completion tokens | cost | wall seconds |",
                  "|---|---|---|---|---|---|---|---|"]
    baseline = cfg.raw["human_baseline"]
    for cat_name in cfg.selected_categories:
        curve_path = run.metrics(cat_name, "curve")
        if not curve_path.exists():
            raise IncompleteRun(f"no evaluation metrics for {cat_name}")
        curve = _load(curve_path)["rows"]
        sources = label_sources(cfg)
        sizes = cfg.curve_sizes
        cell = {(r["source"], r["size"]): r for r in curve}
        missing = [(s, n) for s in sources for n in sizes if (s, n) not in cell]
        if missing:
            raise IncompleteRun(f"curve metrics missing cells {missing}")

        lines = [f"# Learning curve: {cat_name}", "", "AUROC on the held-out human-labeled test set.", "",
                 "| train size | " + " | ".join(display_name(s) for s in sources) + " |",
                 "|---" * (len(sources) + 1) + "|"]
        for n in sizes:
            lines.append(f"| {n} | " + " | ".join(_fmt(cell[(s, n)]["auroc"]) for s in sources) + " |")
        lines += ["", "| source | train size | AUROC | precision | recall | F1 |", "|---|---|---|---|---|---|"]
        for s in sources:
            for n in sizes:
                r = cell[(s, n)]
                lines.append(f"| {display_name(s)} | {n} | {_fmt(r['auroc'])} | {_fmt(r['precision'])} | "
                             f"{_fmt(r['recall'])} | {_fmt(r['f1'])} |")
        p = reports / f"{cat_name}__learning_curve.md"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)
        fig = reports / f"{cat_name}__learning_curve.png"
        plotting.learning_curve(
            {display_name(s): [cell[(s, n)]["auroc"] for n in sizes] for s in sources}, sizes, fig,
            title=f"{cat_name}: AUROC vs. training size")
        written.append(fig)

        agree_path = run.metrics(cat_name, "agreement")
        if agree_path.exists():
            agree = _load(agree_path)
            names = [display_name(s) for s in agree["sources"]]
            lines = [f"# Agreement (Cohen's kappa): {cat_name}", "",
                     "| | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
            for name, row, nrow in zip(names, agree["kappa"], agree["n"]):
                lines.append(f"| {name} | " + " | ".join(f"{_fmt(k)} (n={c})" for k, c in zip(row, nrow)) + " |")
            p = reports / f"{cat_name}__agreement.md"
            p.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(p)
            fig = reports / f"{cat_name}__agreement.png"
            plotting.agreement_heatmap(names, agree["kappa"], fig, title=f"{cat_name}: Cohen's kappa")
            written.append(fig)

        direct_path = run.metrics(cat_name, "direct_eval")
        if direct_path.exists():
            rows = _load(direct_path)["rows"]
            lines = [f"# Direct classification by the annotator: {cat_name}", "",
                     "| source | n | abstained | precision | recall | F1 | kappa vs human |",
                     "|---|---|---|---|---|---|---|"]
            for r in rows:
                lines.append(f"| {display_name(r['source'])} | {r['n']} | {r['abstained']} | {_fmt(r['precision'])} | "
                             f"{_fmt(r['recall'])} | {_fmt(r['f1'])} | {_fmt(r['kappa'])} |")
            p = reports / f"{cat_name}__direct_eval.md"
            p.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(p)

        for strategy in cfg.strategies:
            source = source_of(strategy)
            led = run.source_ledger(cat_name, source)
            if led is None:
                continue
            cost = estimate_cost(led, cfg.rates)
            cost_lines.append(f"| {cat_name} | {display_name(source)} | {led.annotations} | {led.requests} | "
                              f"{led.prompt_tokens} | {led.completion_tokens} | {format_dollars(cost)} | "
                              f"{led.wall_seconds:.4g} |")
            if baseline["minutes_per_100"] > 0 and baseline["dollars_per_100"] > 0 and led.annotations:
                human_min = baseline["minutes_per_100"] * led.annotations / 100
                human_usd = baseline["dollars_per_100"] * led.annotations / 100
                ratio_t = human_min * 60 / led.wall_seconds if led.wall_seconds else float("inf")
                ratio_c = human_usd / cost if cost else float("inf")
                cost_lines.append(f"| {cat_name} | Human (supplied baseline) | {led.annotations} | - | - | - | "
                                  f"{format_dollars(human_usd)} | {human_min * 60:.1f} |")
                cost_lines.append(f"| {cat_name} | ratio human/{display_name(source)} | | | | | "
                                  f"{ratio_c:.1f}x | {ratio_t:.1f}x |")

        data = load_split(cfg, cat_name)
        records = build_triage(cfg, run, cat_name, data)
        tp = run.triage(cat_name)
        tp.parent.mkdir(parents=True, exist_ok=True)
        with open(tp, "w", encoding="utf-8") as fh:
            for r in records:
                fh.write(json.dumps(asdict(r), ensure_ascii=False, sort_keys=True) + "\n")
        written.append(tp)
        tally = {tag: 0 for tag in TRIAGE_TAGS}
        untagged = 0
        for r in records:
            if r.triage_tag is None:
                untagged += 1
            else:
                tally[r.triage_tag] += 1
        lines = [f"# Disagreement triage: {cat_name}", "",
                 f"{len(records)} disagreements between the human labels and annotator labels on the test set.",
                 f"Edit `triage_tag` in `triage/{tp.name}` and re-run the report to update this tally.", "",
                 "| error category | count |", "|---|---|"]
        lines += [f"| {tag} | {n} |" for tag, n in tally.items()]
        lines.append(f"| untagged | {untagged} |")
        lines.append(f"| auto-flagged extraction_suspect | {sum(bool(r.auto_flags) for r in records)} |")
        p = reports / f"{cat_name}__triage.md"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(p)

    if not baseline["minutes_per_100"]:
        cost_lines += ["", "Human time/cost ratios are shown only when `human_baseline` values are supplied."]
    rin, rout = cfg.rates
    cost_lines += ["", f"Rates: ${rin} per 1M prompt tokens, ${rout} per 1M completion tokens (configured)."]
    stages = run.path("ledgers", "stages.json")
    if stages.exists():
        cost_lines += ["", "| stage | wall seconds |", "|---|---|"]
        cost_lines += [f"| {k} | {v:.3f} |" for k, v in _load(stages).items()]
    p = reports / "cost_time.md"
    p.write_text("\n".join(cost_lines) + "\n", encoding="utf-8")
    written.append(p)
    return written
