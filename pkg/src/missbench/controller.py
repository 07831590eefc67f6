"""Pipeline planning and execution: GUID-keyed runs, imputation caching,
multi-test-set evaluation, append-only JSONL persistence, and resumability.

GUIDs are 128-bit SHA-256 prefixes of canonical JSON. Stage seeds mix the
root seed with stable stage keys through SHA-256 (`derive_seed`), so adding
pipelines to a plan never perturbs existing ones, and pipelines that share a
training view (same dataset, split, train-side injection, seed) share their
imputation cache entry across scenarios and models.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import pickle
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import imputers, metrics, models
from .config import BOOSTCLEAN, DatasetBundle
from .dataset import Dataset, SplitSpec, group_membership, split
from .errors import IntegrityError, MissbenchError
from .injection import (build_scenario, inject_specs, scale_scenario_specs,
                        spec_to_config)


# -- canonical serialization and seed mixing -----------------------------------------


def to_native(obj):
    """Recursively convert to JSON-serializable Python natives (NaN -> None)."""
    if isinstance(obj, dict):
        return {str(k): to_native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_native(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_native(obj.tolist())
    if isinstance(obj, np.generic):
        return to_native(obj.item())
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(to_native(obj), sort_keys=True, separators=(",", ":"))


def digest128(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:32]


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from the SHA-256 of the joined string parts."""
    h = hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


# -- pipeline specification ------------------------------------------------------------


@dataclass(frozen=True)
class PipelineSpec:
    """One pipeline: canonically serializable; drives GUIDs and cache keys.

    scenario/imputer of None marks a clean-baseline pipeline (no injection,
    no imputation).
    """
    dataset: str
    dataset_digest: str
    scenario: str | None
    train_rate: float
    test_rates: tuple[float, ...]
    imputer: str | None
    imputer_params: dict = field(default_factory=dict)
    model: str = "lr"
    grid: dict = field(default_factory=dict)
    seed: int = 0
    b: int = 50
    subsample: float = 0.8
    test_fraction: float = 0.3
    k_folds: int = 3
    boostclean: dict = field(default_factory=dict)

    def canonical(self) -> str:
        return canonical_json(asdict(self))

    @property
    def guid(self) -> str:
        return digest128(self.canonical())

    @property
    def is_baseline(self) -> bool:
        return self.scenario is None


def plan(cfg: dict) -> list[PipelineSpec]:
    """Cartesian product of datasets x scenarios x train rates x imputers x
    models x seeds, plus one clean-baseline pipeline per (dataset, model,
    seed). Test rates ride along inside each pipeline (multi-test-set)."""
    specs = []
    common = dict(
        b=cfg["bootstrap"]["B"], subsample=cfg["bootstrap"]["subsample"],
        test_fraction=cfg["split"]["test_fraction"], k_folds=cfg["tuning"]["k_folds"],
    )
    for bundle in cfg["bundles"]:
        if cfg.get("baselines", True):
            for model in cfg["models"]:
                for seed in cfg["seeds"]:
                    specs.append(PipelineSpec(
                        dataset=bundle.name, dataset_digest=bundle.digest,
                        scenario=None, train_rate=0.0, test_rates=(),
                        imputer=None, model=model, grid=cfg["grids"][model],
                        seed=seed, **common))
        for scenario in cfg["scenarios"]:
            for train_rate in cfg["train_rates"]:
                for imputer in cfg["imputers"]:
                    params = cfg["imputer_params"].get(imputer, {})
                    bc = cfg["boostclean"] if imputer == BOOSTCLEAN else {}
                    for model in cfg["models"]:
                        for seed in cfg["seeds"]:
                            specs.append(PipelineSpec(
                                dataset=bundle.name, dataset_digest=bundle.digest,
                                scenario=scenario, train_rate=train_rate,
                                test_rates=tuple(cfg["test_rates"]), imputer=imputer,
                                imputer_params=params, model=model,
                                grid=cfg["grids"][model], seed=seed,
                                boostclean=dict(bc), **common))
    return specs


# -- stage keys --------------------------------------------------------------------------


def _train_view_key(spec: PipelineSpec, train_specs) -> str:
    """Identifies the injected training view, independent of imputer and model."""
    return digest128(canonical_json({
        "dataset": spec.dataset, "digest": spec.dataset_digest,
        "test_fraction": spec.test_fraction, "seed": spec.seed,
        "train": [spec_to_config(s) for s in train_specs],
    }))


def imputation_cache_key(spec: PipelineSpec, train_specs) -> str:
    return digest128(canonical_json({
        "view": _train_view_key(spec, train_specs),
        "imputer": spec.imputer,
        "imputer_params": spec.imputer_params,
    }))


def _test_view_key(spec: PipelineSpec, test_specs, rate: float) -> str:
    return digest128(canonical_json({
        "dataset": spec.dataset, "digest": spec.dataset_digest,
        "test_fraction": spec.test_fraction, "seed": spec.seed,
        "test": [spec_to_config(s) for s in test_specs], "rate": rate,
    }))


# -- imputation cache -----------------------------------------------------------------------


class ImputationCache:
    """File cache of (fitted imputer, completed training view) keyed by digest.

    Writes go through a temp file and an atomic rename, so concurrent workers
    can share a cache directory.
    """

    def __init__(self, directory):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.pkl"

    def get(self, key: str):
        if not self.directory:
            return None
        p = self.path(key)
        if not p.exists():
            return None
        with open(p, "rb") as fh:
            payload = pickle.load(fh)
        return (imputers.from_bytes(payload["imputer"]),
                pickle.loads(payload["train"]))

    def put(self, key: str, fitted, train_result) -> None:
        if not self.directory:
            return
        payload = {"imputer": imputers.to_bytes(fitted),
                   "train": pickle.dumps(train_result, protocol=5)}
        fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                pickle.dump(payload, fh, protocol=5)
            os.replace(tmp, self.path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# -- pipeline execution ---------------------------------------------------------------------


@dataclass
class ExecutionContext:
    cache_dir: Path | None = None
    artifacts_dir: Path | None = None
    save_artifacts: bool = False
    session_guid: str = ""


class _StageClock:
    def __init__(self):
        self.timings = {}
        self._t = None
        self._stage = None

    def start(self, stage: str):
        self._stage, self._t = stage, time.perf_counter()

    def stop(self):
        if self._stage is not None:
            self.timings[self._stage] = self.timings.get(self._stage, 0.0) \
                + time.perf_counter() - self._t
            self._stage = None

    @property
    def stage(self):
        return self._stage


def _model_metrics_report(y_true, labels, groups, stability_mean):
    scores = metrics.model_scores(y_true, labels)
    fair = metrics.fairness_scores(y_true, labels, groups)
    return {
        "f1": scores["f1"], "accuracy": scores["accuracy"],
        "f1_degenerate": scores["f1_degenerate"],
        "label_stability": stability_mean,
        "tprd": fair["tprd"], "tnrd": fair["tnrd"],
        "srd": fair["srd"], "di": fair["di"],
    }


def _imputation_metrics_report(clean_test, completed_test, injected, group):
    rmse = metrics.rmse_imputed(clean_test, completed_test, injected)
    f1 = metrics.f1_imputed(clean_test, completed_test, injected)
    kl = metrics.kl_imputed(clean_test, completed_test, injected)
    fair = metrics.imputation_fairness(clean_test, completed_test, injected, group)
    return {
        "flat": {
            "rmse_imp": rmse["aggregate"], "f1_imp": f1["aggregate"],
            "kl_imp_cols": kl["imputed_columns"], "kl_full": kl["all_columns"],
            "rmse_imp_diff": fair["rmse_diff"], "f1_imp_diff": fair["f1_diff"],
            "kl_imp_cols_diff": fair["kl_imputed_columns_diff"],
            "kl_full_diff": fair["kl_all_columns_diff"],
        },
        "per_column": {
            "rmse": rmse["per_column"], "f1": f1["per_column"], "kl": kl["per_column"],
        },
        "groups": {"priv": fair["priv"], "dis": fair["dis"]},
    }


_EMPTY_IMPUTATION_FLAT = {
    "rmse_imp": None, "f1_imp": None, "kl_imp_cols": None, "kl_full": None,
    "rmse_imp_diff": None, "f1_imp_diff": None, "kl_imp_cols_diff": None,
    "kl_full_diff": None,
}


def run_pipeline(spec: PipelineSpec, bundle: DatasetBundle,
                 ctx: ExecutionContext | None = None):
    """Execute one pipeline; returns (record, timings). Stage errors produce a
    persisted error record instead of raising."""
    ctx = ctx or ExecutionContext()
    clock = _StageClock()
    try:
        record = _run_pipeline_inner(spec, bundle, ctx, clock)
    except MissbenchError as exc:
        failed_stage = clock.stage
        clock.stop()
        record = {
            "guid": spec.guid, "status": "error",
            "error": {"stage": failed_stage or "unknown", "message": str(exc)},
            "spec": to_native(asdict(spec)),
            "stage_guids": {"session": ctx.session_guid},
            "reports": [],
        }
    clock.stop()
    return record, dict(clock.timings)


def _run_pipeline_inner(spec, bundle, ctx, clock):
    clock.start("load")
    data = _load_bundle_cached(bundle)
    clock.stop()

    clock.start("split")
    train_clean, test_clean = split(data, SplitSpec(spec.test_fraction,
                                                    derive_seed("split", spec.dataset_digest,
                                                                spec.test_fraction, spec.seed)))
    clock.stop()

    if spec.is_baseline:
        return _run_model_stages(spec, bundle, ctx, clock,
                                 train_completed=train_clean,
                                 test_sets=[("clean", test_clean, test_clean, None, None)],
                                 imputation_guid=None, imputer_artifact=None)

    scenario = build_scenario(spec.scenario, bundle.specs)
    train_specs = scale_scenario_specs(scenario.train_specs, spec.train_rate)
    view_key = _train_view_key(spec, train_specs)

    clock.start("inject_train")
    train_injected, _ = inject_specs(train_clean, train_specs,
                                     derive_seed("inject-train", view_key))
    clock.stop()

    if spec.imputer == BOOSTCLEAN:
        return _run_boostclean(spec, bundle, ctx, clock, scenario,
                               train_injected, test_clean, view_key)

    clock.start("imputation")
    cache = ImputationCache(ctx.cache_dir)
    cache_key = imputation_cache_key(spec, train_specs)
    cached = cache.get(cache_key)
    if cached is not None:
        fitted, train_result = cached
    else:
        fitted = imputers.fit(train_injected, spec.imputer,
                              seed=derive_seed("fit-imputer", cache_key),
                              **spec.imputer_params)
        train_result = imputers.transform(fitted, train_injected)
        cache.put(cache_key, fitted, train_result)
    clock.stop()

    train_completed = train_result.dataset

    test_sets = []
    test_specs_base = scenario.test_specs
    for rate in spec.test_rates:
        clock.start("inject_test")
        test_specs = scale_scenario_specs(test_specs_base, rate)
        test_injected, injected_mask = inject_specs(
            test_clean, test_specs,
            derive_seed("inject-test", _test_view_key(spec, test_specs, rate)))
        clock.stop()
        clock.start("transform_test")
        result = imputers.transform(fitted, test_injected)
        clock.stop()
        if spec.imputer == imputers.DELETION:
            idx = result.retained_rows
            test_sets.append((rate, test_clean.take(idx), result.dataset, None,
                              result.retained_fraction))
        else:
            test_sets.append((rate, test_clean, result.dataset, injected_mask, None))

    imputer_artifact = None
    if ctx.save_artifacts and ctx.cache_dir:
        imputer_artifact = str(Path(ctx.cache_dir).name + "/" + cache_key + ".pkl")
    return _run_model_stages(spec, bundle, ctx, clock,
                             train_completed=train_completed, test_sets=test_sets,
                             imputation_guid=cache_key, imputer_artifact=imputer_artifact)


def _run_model_stages(spec, bundle, ctx, clock, train_completed, test_sets,
                      imputation_guid, imputer_artifact):
    clock.start("preprocess")
    pre = models.preprocess_fit(train_completed)
    x_train = models.preprocess_apply(pre, train_completed)
    y_train = train_completed.labels()
    clock.stop()

    tuning_guid = digest128(f"tuning:{spec.guid}")
    clock.start("tuning")
    chosen, table = models.tune(x_train, y_train, spec.model, spec.grid,
                                k_folds=spec.k_folds,
                                seed=derive_seed(spec.guid, "tuning"))
    clock.stop()

    profiling_guid = digest128(f"profiling:{spec.guid}")
    clock.start("train")
    final = models.train(x_train, y_train, spec.model, chosen,
                         seed=derive_seed(spec.guid, "model"))
    clock.stop()

    clock.start("bootstrap")
    ensemble = models.bootstrap_ensemble(x_train, y_train, spec.model, chosen,
                                         b=spec.b, subsample=spec.subsample,
                                         seed=derive_seed(spec.guid, "bootstrap"))
    clock.stop()

    reports = []
    clock.start("evaluate")
    for rate, clean_ref, completed, injected_mask, retained_fraction in test_sets:
        x_test = models.preprocess_apply(pre, completed)
        labels, _ = models.predict(final, x_test)
        stability = metrics.label_stability(models.ensemble_predict(ensemble, x_test))
        y_true = clean_ref.labels()
        groups = group_membership(clean_ref, bundle.group)
        flat = _model_metrics_report(y_true, labels, groups, stability["mean"])
        if injected_mask is not None:
            imp = _imputation_metrics_report(clean_ref, completed, injected_mask,
                                             bundle.group)
            flat.update(imp["flat"])
            detail = {"per_column": imp["per_column"], "groups": imp["groups"]}
        else:
            flat.update(_EMPTY_IMPUTATION_FLAT)
            detail = None
        reports.append({
            "test_rate": rate, "model_guid": profiling_guid,
            "n_test": completed.n, "retained_fraction": retained_fraction,
            "metrics": flat, "imputation": detail,
        })
    clock.stop()

    artifacts = {}
    if imputer_artifact:
        artifacts["imputer"] = imputer_artifact
    if ctx.save_artifacts and ctx.artifacts_dir:
        model_dir = Path(ctx.artifacts_dir)
        model_dir.mkdir(parents=True, exist_ok=True)
        model_path = model_dir / f"{spec.guid}.model.pkl"
        with open(model_path, "wb") as fh:
            fh.write(models.model_to_bytes(final))
        artifacts["model"] = model_path.name

    return {
        "guid": spec.guid, "status": "ok",
        "spec": to_native(asdict(spec)),
        "stage_guids": {"session": ctx.session_guid, "imputation": imputation_guid,
                        "tuning": tuning_guid, "profiling": profiling_guid},
        "chosen_hyper": to_native(chosen),
        "tuning_table": to_native(table),
        "reports": to_native(reports),
        "artifacts": artifacts,
    }


def _run_boostclean(spec, bundle, ctx, clock, scenario, train_injected,
                    test_clean, view_key):
    bc = spec.boostclean
    candidates = tuple(bc.get("candidates", ()))
    rounds = int(bc.get("rounds", 5))
    model_hyper = bc.get("model_hyper") or None

    candidate_params = bc.get("imputer_params") or None

    clock.start("imputation")
    ensemble = models.boostclean_train(
        train_injected, candidates, spec.model, rounds=rounds,
        seed=derive_seed(spec.guid, "boostclean"), model_hyper=model_hyper,
        imputer_params=candidate_params)
    clock.stop()

    stability_ensembles = None
    if bc.get("stability", False):
        clock.start("bootstrap")
        stability_ensembles = []
        n = train_injected.n
        n_sub = int(math.floor(spec.subsample * n + 0.5))
        for i in range(spec.b):
            rng = np.random.default_rng(derive_seed(spec.guid, "boostclean-stability", i))
            idx = np.sort(rng.choice(n, size=n_sub, replace=False))
            stability_ensembles.append(models.boostclean_train(
                train_injected.take(idx), candidates, spec.model, rounds=rounds,
                seed=derive_seed(spec.guid, "boostclean-member", i),
                model_hyper=model_hyper, imputer_params=candidate_params))
        clock.stop()

    imputation_guid = digest128(canonical_json(
        {"view": view_key, "imputer": BOOSTCLEAN, "candidates": candidates,
         "rounds": rounds}))
    profiling_guid = digest128(f"profiling:{spec.guid}")

    reports = []
    clock.start("evaluate")
    for rate in spec.test_rates:
        test_specs = scale_scenario_specs(scenario.test_specs, rate)
        test_injected, _ = inject_specs(
            test_clean, test_specs,
            derive_seed("inject-test", _test_view_key(spec, test_specs, rate)))
        labels = models.boostclean_predict(ensemble, test_injected)
        stability_mean = None
        if stability_ensembles is not None:
            matrix = np.vstack([models.boostclean_predict(e, test_injected)
                                for e in stability_ensembles])
            stability_mean = metrics.label_stability(matrix)["mean"]
        flat = _model_metrics_report(test_clean.labels(), labels,
                                     group_membership(test_clean, bundle.group),
                                     stability_mean)
        flat.update(_EMPTY_IMPUTATION_FLAT)
        reports.append({
            "test_rate": rate, "model_guid": profiling_guid,
            "n_test": test_injected.n, "retained_fraction": None,
            "metrics": flat, "imputation": None,
        })
    clock.stop()

    return {
        "guid": spec.guid, "status": "ok",
        "spec": to_native(asdict(spec)),
        "stage_guids": {"session": ctx.session_guid, "imputation": imputation_guid,
                        "tuning": None, "profiling": profiling_guid},
        "chosen_hyper": to_native(model_hyper or models.DEFAULT_HYPER[spec.model]),
        "boostclean_history": to_native(ensemble.history),
        "reports": to_native(reports),
        "artifacts": {},
    }


# -- persistence --------------------------------------------------------------------------


class ResultStore:
    """Append-only JSONL store of result records, deduplicated by GUID.

    Wall-clock timings are volatile, so they go to a sidecar file; the main
    store is byte-deterministic for a given plan (sort lines by GUID to
    compare runs).
    """

    def __init__(self, path):
        self.path = Path(path)
        self._records: dict[str, str] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    self._remember(rec["guid"], canonical_json(rec))

    @property
    def timings_path(self) -> Path:
        return self.path.with_name(self.path.stem + ".timings.jsonl")

    def _remember(self, guid: str, line: str):
        if guid in self._records and self._records[guid] != line:
            raise IntegrityError(f"GUID {guid} already stored with a different payload")
        self._records[guid] = line

    def __contains__(self, guid: str) -> bool:
        return guid in self._records

    def __len__(self) -> int:
        return len(self._records)

    def append(self, record: dict, timings: dict | None = None) -> bool:
        """Persist one record; returns False when it was an identical duplicate."""
        guid = record["guid"]
        line = canonical_json(record)
        fresh = guid not in self._records
        self._remember(guid, line)
        if fresh:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        if timings is not None:
            with open(self.timings_path, "a", encoding="utf-8") as fh:
                fh.write(canonical_json({"guid": guid, "timings": timings}) + "\n")
        return fresh

    def records(self) -> list[dict]:
        return [json.loads(line) for _, line in sorted(self._records.items())]

    def query(self, **filters) -> list[dict]:
        """Records whose spec (or top-level) fields equal every filter value."""
        out = []
        for rec in self.records():
            spec = rec.get("spec", {})
            if all((spec.get(k) if k in spec else rec.get(k)) == v
                   for k, v in filters.items()):
                out.append(rec)
        return out

    def canonical_bytes(self) -> bytes:
        """GUID-sorted store content; identical runs compare byte-equal."""
        return ("\n".join(line for _, line in sorted(self._records.items())) + "\n").encode()


# -- plan execution ---------------------------------------------------------------------------


_BUNDLE_DATA_CACHE: dict[str, Dataset] = {}


def _load_bundle_cached(bundle: DatasetBundle) -> Dataset:
    key = f"{bundle.name}:{bundle.digest}"
    if key not in _BUNDLE_DATA_CACHE:
        _BUNDLE_DATA_CACHE[key] = bundle.load()
    return _BUNDLE_DATA_CACHE[key]


def session_guid_for(specs) -> str:
    return digest128("session:" + ",".join(sorted(s.guid for s in specs)))


def _execute_task(args):
    spec, bundle, ctx = args
    return run_pipeline(spec, bundle, ctx)


def run_plan(cfg: dict, results_path, cache_dir=None, workers: int = 1,
             resume: bool = False, log=None) -> ResultStore:
    """Execute every planned pipeline, appending records to the result store.

    With resume=True, GUIDs already present in the store are skipped. Workers
    form a process pool; the parent is the single store writer.
    """
    specs = plan(cfg)
    by_name = {b.name: b for b in cfg["bundles"]}
    store = ResultStore(results_path)
    session = session_guid_for(specs)
    ctx = ExecutionContext(
        cache_dir=Path(cache_dir) if cache_dir else None,
        artifacts_dir=Path(results_path).parent / "artifacts",
        save_artifacts=cfg.get("save_artifacts", True),
        session_guid=session,
    )
    todo = [s for s in specs if not (resume and s.guid in store)]
    if log:
        log(f"plan: {len(specs)} pipelines, {len(todo)} to run (session {session})")

    if workers <= 1:
        for i, spec in enumerate(todo):
            record, timings = run_pipeline(spec, by_name[spec.dataset], ctx)
            store.append(record, timings)
            if log:
                log(f"[{i + 1}/{len(todo)}] {spec.guid} {record['status']}")
    else:
        tasks = [(s, by_name[s.dataset], ctx) for s in todo]
        mp = get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=mp) as pool:
            futures = [pool.submit(_execute_task, t) for t in tasks]
            for i, fut in enumerate(as_completed(futures)):
                record, timings = fut.result()
                store.append(record, timings)
                if log:
                    log(f"[{i + 1}/{len(todo)}] {record['guid']} {record['status']}")
    return store
