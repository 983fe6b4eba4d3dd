"""Run configuration: built-in defaults merged with a user TOML or JSON file."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .corpus import CategoryConfig, SectionGrammar, SplitSpec
from .errors import ConfigError, SdohForgeError
from .gbdt import GbdtParams
from .llm_client import ClientConfig, MockAnnotatorConfig
from .prompt import Strategy

PATH_KEYS = {("data", "labeled"), ("data", "unlabeled"), ("data", "explanations"),
             ("extract", "input"), ("extract", "output")}


def default_dict() -> dict:
    text = resources.files("sdoh_forge").joinpath("data/default_config.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def _merge(base: dict, over: dict, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if key not in out and path != ("categories",) and path[:1] != ("categories",):
            raise ConfigError(f"unknown config key: {'.'.join(path + (key,))}")
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "exclude":
            out[key] = _merge(out[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- construction -------------------------------------------------------

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        merged = default_dict()
        base_dir = Path.cwd()
        if path is not None:
            merged = _merge(merged, read_config_file(path))
            base_dir = Path(path).resolve().parent
        if overrides:
            merged = _merge(merged, overrides)
        for section, key in PATH_KEYS:
            value = merged[section][key]
            if value and not Path(value).is_absolute():
                merged[section][key] = str((base_dir / value).resolve())
        cfg = cls(merged, base_dir)
        cfg.check()
        return cfg

    @classmethod
    def from_dict(cls, obj: dict, base_dir=None) -> "RunConfig":
        cfg = cls(_merge(default_dict(), obj), Path(base_dir or Path.cwd()))
        cfg.check()
        return cfg

    def check(self) -> None:
        """Structural validation; raises ConfigError."""
        try:
            self.categories
            self.strategies
            self.split
            self.gbdt_params
            self.client
            self.grammar
            if self.mock_mode:
                for name in self.selected_categories:
                    if name in self.categories:
                        self.mock_config(name)
        except ConfigError:
            raise
        except SdohForgeError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None
        if self.raw["mode"] not in ("mock", "remote"):
            raise ConfigError("mode must be 'mock' or 'remote'")
        missing = [c for c in self.selected_categories if c not in self.categories]
        if missing:
            raise ConfigError(f"selected categories not defined: {missing}")
        sizes = self.curve_sizes
        if not sizes or any(s < 2 for s in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("curve_sizes must be strictly increasing integers >= 2")
        if self.raw["extract"]["mode"] not in ("section", "sentence", "concat"):
            raise ConfigError("extract.mode must be section, sentence or concat")
        if self.raw["seed_set_size"] < 1:
            raise ConfigError("seed_set_size must be >= 1")

    def require_paths(self, *keys: str) -> None:
        """Every named ``section.key`` path must be set and exist."""
        for dotted in keys:
            section, key = dotted.split(".")
            value = self.raw[section][key]
            if not value:
                raise ConfigError(f"config key {dotted} is required")
            if not Path(value).exists():
                raise ConfigError(f"{dotted}: path does not exist: {value}")

    # -- typed views --------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def mock_mode(self) -> bool:
        return self.raw["mode"] == "mock"

    @property
    def out_dir(self) -> Path:
        p = Path(self.raw["out_dir"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def selected_categories(self) -> list[str]:
        return list(self.raw["selected_categories"])

    @property
    def strategies(self) -> list[Strategy]:
        out = [Strategy(s) for s in self.raw["strategies"]]
        if Strategy.CUSTOM in out:
            raise ConfigError("CUSTOM is not a selectable strategy")
        if len(set(out)) != len(out):
            raise ConfigError("duplicate strategies")
        return out

    @property
    def curve_sizes(self) -> list[int]:
        return [int(s) for s in self.raw["curve_sizes"]]

    @property
    def categories(self) -> dict[str, CategoryConfig]:
        return {name: CategoryConfig.from_dict(name, dict(obj)) for name, obj in self.raw["categories"].items()}

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(seed=self.seed, **self.raw["split"])

    @property
    def gbdt_params(self) -> GbdtParams:
        return GbdtParams(seed=self.seed, **self.raw["gbdt"])

    @property
    def client(self) -> ClientConfig:
        return ClientConfig(**self.raw["client"])

    @property
    def rates(self) -> tuple[float, float]:
        r = self.raw["rates"]
        return float(r["prompt_per_million"]), float(r["completion_per_million"])

    @property
    def ngram_range(self) -> tuple[int, int]:
        f = self.raw["features"]
        return int(f["ngram_min"]), int(f["ngram_max"])

    @property
    def min_df(self) -> int:
        return int(self.raw["features"]["min_df"])

    @property
    def grammar(self) -> SectionGrammar:
        ex = self.raw["extract"]
        kwargs = {"min_chars": int(ex["min_chars"])}
        if ex["start_pattern"]:
            kwargs["start"] = ex["start_pattern"]
        if ex["terminator_patterns"]:
            kwargs["terminators"] = tuple(ex["terminator_patterns"])
        return SectionGrammar(**kwargs)

    def mock_config(self, category: str) -> MockAnnotatorConfig:
        cat = self.categories[category]
        m = self.raw["mock"]
        if not cat.mock_rules:
            raise ConfigError(f"category {category!r} has no mock_rules; mock mode needs them")
        return MockAnnotatorConfig(cat.mock_rules, float(m["flip_probability"]),
                                   int(m["seed"]), cat.mock_default)

    # -- provenance ---------------------------------------------------------

    def effective(self) -> dict:
        """Resolved config without the output location (which never affects results)."""
        out = copy.deepcopy(self.raw)
        out.pop("out_dir", None)
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.effective(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()
