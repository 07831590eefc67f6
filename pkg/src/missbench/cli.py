"""Command-line interface.

Verbs: plan, run, inject, impute, report, correlate, validate-config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import MissbenchError


def _add_config(p, required=True):
    p.add_argument("--config", required=required, help="run config YAML file")


def _apply_seed_override(cfg, seeds_arg):
    if seeds_arg:
        cfg["seeds"] = [int(s) for s in seeds_arg.split(",") if s.strip()]
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="missbench",
                                     description="Missingness/imputation benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="check a run config and exit")
    _add_config(p)

    p = sub.add_parser("plan", help="list planned pipelines without running them")
    _add_config(p)
    p.add_argument("--seeds", help="comma-separated seed override")
    p.add_argument("-o", "--out", help="write a plain-text manifest here")

    p = sub.add_parser("run", help="execute the plan")
    _add_config(p)
    p.add_argument("--seeds", help="comma-separated seed override")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--results", default="results.jsonl")
    p.add_argument("--resume", action="store_true",
                   help="skip pipelines whose GUIDs are already stored")

    p = sub.add_parser("inject", help="apply a scenario's train-side injection to a full CSV")
    _add_config(p)
    p.add_argument("--dataset", required=True, help="dataset name from the config")
    p.add_argument("--scenario", required=True)
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output CSV (mask goes to <out>.mask.csv)")

    p = sub.add_parser("impute", help="split, inject, fit one imputer, write completed CSVs")
    _add_config(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--imputer", required=True)
    p.add_argument("--rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--outdir", required=True)

    p = sub.add_parser("report", help="aggregate a result store into CSVs and figures")
    p.add_argument("--results", required=True)
    p.add_argument("-o", "--outdir", required=True)
    p.add_argument("--group-by", default="dataset,scenario,imputer,model")

    p = sub.add_parser("correlate", help="Spearman matrix over indicators and metrics")
    p.add_argument("--results", required=True)
    p.add_argument("-o", "--outdir", required=True)
    return parser


def _cmd_validate(args) -> int:
    from .config import load_run_config
    cfg = load_run_config(args.config)
    n_datasets = len(cfg["bundles"])
    print(f"config ok: {n_datasets} dataset(s), {len(cfg['scenarios'])} scenario(s), "
          f"{len(cfg['imputers'])} imputer(s), {len(cfg['models'])} model(s), "
          f"{len(cfg['seeds'])} seed(s)")
    return 0


def _cmd_plan(args) -> int:
    from .config import load_run_config
    from .controller import plan
    cfg = _apply_seed_override(load_run_config(args.config), args.seeds)
    specs = plan(cfg)
    lines = [f"{s.guid}  dataset={s.dataset} scenario={s.scenario or 'clean'} "
             f"imputer={s.imputer or 'none'} model={s.model} seed={s.seed}"
             for s in specs]
    text = "\n".join([f"# {len(specs)} pipelines"] + lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({len(specs)} pipelines)")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_run(args) -> int:
    from .config import load_run_config
    from .controller import run_plan
    cfg = _apply_seed_override(load_run_config(args.config), args.seeds)
    store = run_plan(cfg, args.results, cache_dir=args.cache_dir,
                     workers=args.workers, resume=args.resume, log=print)
    ok = sum(1 for r in store.records() if r["status"] == "ok")
    err = len(store) - ok
    print(f"done: {len(store)} records in {args.results} ({ok} ok, {err} error)")
    return 0 if err == 0 else 1


def _resolve_bundle(cfg, name):
    from .errors import ConfigurationError
    for b in cfg["bundles"]:
        if b.name == name:
            return b
    raise ConfigurationError(f"dataset {name!r} not in config")


def _cmd_inject(args) -> int:
    from .config import load_run_config
    from .dataset import write_csv
    from .injection import build_scenario, inject_specs, observed_rates, scale_scenario_specs
    cfg = load_run_config(args.config)
    bundle = _resolve_bundle(cfg, args.dataset)
    data = bundle.load()
    scenario = build_scenario(args.scenario, bundle.specs)
    specs = scale_scenario_specs(scenario.train_specs, args.rate)
    injected, mask = inject_specs(data, specs, args.seed)
    write_csv(injected, args.out)
    mask_path = Path(args.out).with_suffix(".mask.csv")
    _write_mask_csv(mask, injected.feature_names, mask_path)
    rates = observed_rates(mask, data, bundle.group)
    print(f"wrote {args.out} and {mask_path}")
    for col, rate in rates["overall"].items():
        if rate:
            print(f"  {col}: overall {rate:.4f}  priv {rates['priv'][col]:.4f}  "
                  f"dis {rates['dis'][col]:.4f}")
    return 0


def _write_mask_csv(mask, feature_names, path):
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(feature_names)
        for row in mask.astype(int):
            w.writerow(list(row))


def _cmd_impute(args) -> int:
    from .config import load_run_config
    from .controller import derive_seed
    from .dataset import SplitSpec, split, write_csv
    from .imputers import fit, save, transform
    from .injection import build_scenario, inject_specs, scale_scenario_specs
    cfg = load_run_config(args.config)
    bundle = _resolve_bundle(cfg, args.dataset)
    data = bundle.load()
    train, test = split(data, SplitSpec(cfg["split"]["test_fraction"], args.seed))
    scenario = build_scenario(args.scenario, bundle.specs)
    train_inj, _ = inject_specs(train, scale_scenario_specs(scenario.train_specs, args.rate),
                                derive_seed("inject-train", args.seed))
    test_inj, _ = inject_specs(test, scale_scenario_specs(scenario.test_specs, args.rate),
                               derive_seed("inject-test", args.seed))
    params = cfg["imputer_params"].get(args.imputer, {})
    fitted = fit(train_inj, args.imputer, seed=args.seed, **params)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(transform(fitted, train_inj).dataset, outdir / "train_completed.csv")
    write_csv(transform(fitted, test_inj).dataset, outdir / "test_completed.csv")
    save(fitted, outdir / "imputer.pkl")
    print(f"wrote completed train/test and imputer under {outdir}")
    return 0


def _cmd_report(args) -> int:
    from .controller import ResultStore
    from .reporting import write_report
    store = ResultStore(args.results)
    paths = write_report(store.records(), args.outdir,
                         group_by=tuple(k.strip() for k in args.group_by.split(",")))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _cmd_correlate(args) -> int:
    from .controller import ResultStore
    from .reporting import write_correlation
    store = ResultStore(args.results)
    paths = write_correlation(store.records(), args.outdir)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


_COMMANDS = {
    "validate-config": _cmd_validate,
    "plan": _cmd_plan,
    "run": _cmd_run,
    "inject": _cmd_inject,
    "impute": _cmd_impute,
    "report": _cmd_report,
    "correlate": _cmd_correlate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MissbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
