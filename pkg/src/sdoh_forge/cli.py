"""``sdoh-forge`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import RunConfig
from .errors import SdohForgeError

log = logging.getLogger("sdoh_forge")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML or JSON run config")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="run directory (overrides the config)")
    p.add_argument("--mock", action="store_true", help="use the offline mock annotator")
    p.add_argument("--category", action="append", metavar="NAME",
                   help="category to process; repeat for several")
    p.add_argument("--fallback-easy", action="store_true",
                   help="use the easy pool when a hard pool is empty")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdoh-forge", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    simple = {
        "extract": "extract annotation units from raw notes",
        "seed": "zero-shot pass over the human-labeled seed set",
        "select-shots": "build the 2-shot example sets from the seed pass",
        "annotate": "annotate the unlabeled pool and the test set",
        "train": "train one classifier per label source and curve size",
        "eval": "score trained classifiers on the human test set",
        "direct-eval": "score the annotator itself as a classifier",
        "run": "seed, select-shots, annotate, train, eval, direct-eval and report",
    }
    for name, help_text in simple.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "run":
            p.add_argument("--no-report", action="store_true", help="skip rendering reports")

    p = sub.add_parser("report", help="render tables, figures and the triage file for a run")
    _common(p)
    p.add_argument("run_dir", nargs="?", help="run directory (default: --out or the config out_dir)")

    p = sub.add_parser("config", help="configuration helpers")
    csub = p.add_subparsers(dest="config_command", required=True)
    v = csub.add_parser("validate", help="validate and print the effective config")
    _common(v)

    p = sub.add_parser("model", help="model helpers")
    msub = p.add_subparsers(dest="model_command", required=True)
    m = msub.add_parser("inspect", help="print a summary of a trained model file")
    m.add_argument("path")
    m.add_argument("--vocab", metavar="PATH", help="vocabulary file to name features")
    m.add_argument("--top", type=int, default=10)
    m.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic labeled/unlabeled corpus")
    p.add_argument("out_dir")
    p.add_argument("--n-labeled", type=int, default=4200)
    p.add_argument("--n-unlabeled", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_config(args) -> RunConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out:
        overrides["out_dir"] = str(Path(args.out).resolve())
    if args.mock:
        overrides["mode"] = "mock"
    if args.category:
        overrides["selected_categories"] = list(args.category)
    if args.fallback_easy:
        overrides["fallback_easy"] = True
    return RunConfig.load(args.config, overrides)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def run(args) -> int:
    cmd = args.command
    if cmd == "synth":
        from .synth import write_dataset
        paths = write_dataset(args.out_dir, args.n_labeled, args.n_unlabeled, args.seed)
        _print({k: str(v) for k, v in paths.items()})
        return 0
    if cmd == "model":
        from .features import Vocabulary
        from .gbdt import GbdtModel
        model = GbdtModel.load(args.path)
        names = Vocabulary.load(args.vocab).index_to_term() if args.vocab else None
        _print({"n_features": model.n_features, "feature_fingerprint": model.feature_fingerprint,
                "params": model.params.__dict__, **model.summary(names, args.top)})
        return 0

    cfg = load_config(args)
    if cmd == "config":
        _print(cfg.effective() | {"out_dir": str(cfg.out_dir), "config_hash": cfg.config_hash()})
        return 0
    if cmd == "extract":
        _print(pipeline.cmd_extract(cfg))
    elif cmd == "seed":
        _print(pipeline.cmd_seed(cfg))
    elif cmd == "select-shots":
        _print(pipeline.cmd_select_shots(cfg))
    elif cmd == "annotate":
        _print(pipeline.cmd_annotate(cfg))
    elif cmd == "train":
        trained = pipeline.cmd_train(cfg)
        _print({cat: len(models) for cat, models in trained.items()})
    elif cmd == "eval":
        _print(pipeline.cmd_eval(cfg))
    elif cmd == "direct-eval":
        _print(pipeline.cmd_direct_eval(cfg))
    elif cmd == "report":
        run_dir = Path(args.run_dir) if args.run_dir else cfg.out_dir
        cfg_for_report = cfg if not args.run_dir else None
        for path in pipeline.cmd_report(run_dir, cfg_for_report):
            print(path)
    elif cmd == "run":
        print(pipeline.cmd_run(cfg, report=not args.no_report))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except SdohForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
