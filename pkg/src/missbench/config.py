"""Run and schema configuration: YAML parsing, validation, normalization.

A run config names datasets (preset or path+schema), scenarios, rates,
imputers, models, seeds, and the bootstrap/tuning settings. A schema config
describes one dataset: its columns, null tokens, group definition, and
(optionally) custom injection rule tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dataset import ColumnSchema, Dataset, GroupSpec, load_csv
from .errors import ConfigurationError
from .fixtures import german_fixture_path
from .injection import MCAR, MAR, MNAR, SCENARIO_IDS, spec_from_config
from .imputers import IMPUTER_KINDS
from .models import DEFAULT_GRIDS, MODEL_KINDS
from .predicates import predicate_from_config
from .presets import get_preset

BOOSTCLEAN = "boostclean"
VALID_IMPUTERS = IMPUTER_KINDS + (BOOSTCLEAN,)

DEFAULT_BOOSTCLEAN_CANDIDATES = ("median-mode", "median-dummy", "clustering", "miss-forest")


@dataclass
class DatasetBundle:
    """Everything needed to run pipelines on one dataset."""
    name: str
    schema: tuple[ColumnSchema, ...]
    group: GroupSpec
    null_tokens: tuple[str, ...]
    specs: dict
    path: Path
    digest: str

    def load(self) -> Dataset:
        return load_csv(self.path, self.schema, set(self.null_tokens))


def _read_yaml(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        obj = yaml.safe_load(fh)
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{path}: expected a mapping at top level")
    return obj


def parse_schema_config(obj: dict):
    """Columns, group spec, null tokens, and optional injection tables."""
    if "columns" not in obj:
        raise ConfigurationError("schema config: missing 'columns'")
    columns = tuple(
        ColumnSchema(
            name=str(c["name"]),
            kind=str(c["kind"]),
            role=str(c.get("role", "feature")),
            categories=tuple(str(v) for v in c["categories"]) if c.get("categories") else None,
            null_tokens=tuple(c.get("null_tokens", ())),
        )
        for c in obj["columns"]
    )
    null_tokens = tuple(obj.get("null_tokens", ("",)))

    group = None
    if "group" in obj:
        g = obj["group"]
        attrs = tuple(g["attributes"])
        dis = g.get("dis_values", {})
        preds = tuple(predicate_from_config(dis[a]) for a in attrs)
        group = GroupSpec(attrs, preds)

    specs = None
    if "injection" in obj:
        inj = obj["injection"]
        base = float(inj.get("base_rate", 0.3))
        specs = {}
        for mech in (MCAR, MAR, MNAR):
            key = mech.lower()
            if key in inj:
                block = dict(inj[key])
                block.setdefault("base_rate", base)
                specs[mech] = spec_from_config(block)
    return columns, group, null_tokens, specs


def _file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def resolve_dataset(entry, base_dir: Path | None = None) -> DatasetBundle:
    """Turn a config dataset entry (preset name or mapping) into a bundle."""
    if isinstance(entry, str):
        entry = {"preset": entry}
    if not isinstance(entry, dict):
        raise ConfigurationError(f"dataset entry must be a name or mapping, got {entry!r}")
    base_dir = Path(base_dir) if base_dir else Path(".")

    preset = get_preset(entry["preset"]) if "preset" in entry else None
    name = entry.get("name") or (preset.name if preset else None)
    if not name:
        raise ConfigurationError("dataset entry needs a 'name' or 'preset'")

    schema = group = specs = None
    null_tokens = ("",)
    if preset is not None:
        schema, group, specs = preset.schema, preset.group, dict(preset.specs)
        null_tokens = preset.null_tokens
    if "schema" in entry:
        sc = entry["schema"]
        obj = _read_yaml(base_dir / sc) if isinstance(sc, (str, Path)) else sc
        schema, g, null_tokens, sp = parse_schema_config(obj)
        group = g or group
        specs = sp or specs

    if schema is None:
        raise ConfigurationError(
            f"dataset {name!r}: no schema (pass 'schema' or use a preset that ships one)")
    if group is None:
        raise ConfigurationError(f"dataset {name!r}: no group definition")
    if specs is None:
        raise ConfigurationError(f"dataset {name!r}: no injection rule tables")

    if "path" in entry:
        path = Path(entry["path"])
        if not path.is_absolute():
            path = base_dir / path
    elif preset is not None and preset.fixture:
        path = german_fixture_path()
    else:
        raise ConfigurationError(f"dataset {name!r}: no data path and no bundled fixture")
    if not Path(path).exists():
        raise ConfigurationError(f"dataset {name!r}: file not found: {path}")

    return DatasetBundle(
        name=name, schema=schema, group=group, null_tokens=tuple(null_tokens),
        specs=specs, path=Path(path), digest=_file_digest(path),
    )


def normalize_run_config(obj: dict, base_dir: Path | None = None) -> dict:
    """Validate a run config and fill defaults; errors name the offending field."""
    cfg = dict(obj)

    datasets = cfg.get("datasets")
    if not datasets:
        raise ConfigurationError("run config: 'datasets' must be a non-empty list")
    bundles = [resolve_dataset(e, base_dir) for e in datasets]

    scenarios = cfg.get("scenarios", ["S1"])
    if not scenarios:
        raise ConfigurationError("run config: 'scenarios' must be non-empty")
    for s in scenarios:
        if s not in SCENARIO_IDS:
            raise ConfigurationError(f"run config: unknown scenario {s!r}")

    imputers = cfg.get("imputers")
    if not imputers:
        raise ConfigurationError("run config: 'imputers' must be a non-empty list")
    for kind in imputers:
        if kind not in VALID_IMPUTERS:
            raise ConfigurationError(f"run config: unknown imputer {kind!r}")

    models = cfg.get("models")
    if not models:
        raise ConfigurationError("run config: 'models' must be a non-empty list")
    for kind in models:
        if kind not in MODEL_KINDS:
            raise ConfigurationError(f"run config: unknown model {kind!r}")

    seeds = [int(s) for s in cfg.get("seeds", [101, 102, 103, 104, 105, 106])]
    if not seeds:
        raise ConfigurationError("run config: 'seeds' must be non-empty")

    if "train_rates" in cfg:
        train_rates = [float(r) for r in cfg["train_rates"]]
    else:
        train_rates = [float(cfg.get("train_rate", 0.3))]
    test_rates = [float(r) for r in cfg.get("test_rates", [train_rates[0]])]
    if not train_rates or any(not 0 < r <= 1 for r in train_rates + test_rates):
        raise ConfigurationError("run config: rates must be in (0, 1]")

    grids = {k: dict(v) for k, v in DEFAULT_GRIDS.items()}
    for kind, grid in (cfg.get("grids") or {}).items():
        if kind not in MODEL_KINDS:
            raise ConfigurationError(f"run config: grids for unknown model {kind!r}")
        grids[kind] = dict(grid)

    bootstrap = {"B": 50, "subsample": 0.8}
    bootstrap.update(cfg.get("bootstrap") or {})
    bootstrap["B"] = int(bootstrap["B"])
    bootstrap["subsample"] = float(bootstrap["subsample"])
    if bootstrap["B"] < 1:
        raise ConfigurationError("run config: bootstrap.B must be >= 1")

    split = {"test_fraction": 0.3}
    split.update(cfg.get("split") or {})
    tuning = {"k_folds": 3}
    tuning.update(cfg.get("tuning") or {})

    boostclean = {"rounds": 5, "candidates": list(DEFAULT_BOOSTCLEAN_CANDIDATES),
                  "stability": False}
    boostclean.update(cfg.get("boostclean") or {})

    return {
        "bundles": bundles,
        "scenarios": list(scenarios),
        "train_rates": train_rates,
        "test_rates": test_rates,
        "imputers": list(imputers),
        "imputer_params": {k: dict(v) for k, v in (cfg.get("imputer_params") or {}).items()},
        "models": list(models),
        "grids": grids,
        "seeds": seeds,
        "bootstrap": bootstrap,
        "split": {"test_fraction": float(split["test_fraction"])},
        "tuning": {"k_folds": int(tuning["k_folds"])},
        "baselines": bool(cfg.get("baselines", True)),
        "boostclean": boostclean,
        "save_artifacts": bool(cfg.get("save_artifacts", True)),
    }


def load_run_config(path) -> dict:
    path = Path(path)
    return normalize_run_config(_read_yaml(path), base_dir=path.parent)
