"""Command-line runner for the synthetic studies and the ILI experiment.

Every output file starts with ``# `` config-echo lines and contains no
timestamps, so two runs with the same flags produce identical bytes.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import experiments as ex
from .dmd import DmdError
from .evaluation import modulus_argument_errors, outlier_rate_iqr, wrap_angle
from .filters import FilterError
from .ili import (
    IliDataError,
    IliExperimentConfig,
    load_ili_csv,
    make_ili_fixture,
    rank_sweep,
    run_ili_experiment,
)
from .model import DecodeError

OUTPUT_ENV = "DMDENKF_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def _rank_range(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return _int_list(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmdenkf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs_help):
        p.add_argument("--seed", type=int, help="base seed; run i uses seed + i (default 0)")
        p.add_argument("--runs", type=int, help=runs_help)
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
        p.add_argument("--config", help="JSON file of settings; flags override it")
        p.add_argument("--workers", type=int, help="worker processes (default 1)")

    p = sub.add_parser("synth-eig", help="track the rotating system's eigenvalues")
    common(p, "number of Monte Carlo runs (default 100)")
    p.add_argument("--sigma", type=_float_list, help="noise levels, comma separated (default 0.05,0.5)")
    p.add_argument("--methods", type=_csv_list, help=f"subset of {','.join(ex.METHODS)}")

    p = sub.add_parser("enkf-vs-pf", help="ensemble size sweep against a particle filter")
    common(p, "number of Monte Carlo runs (default 100)")
    p.add_argument("--sigma", type=float, help="noise level (default 0.5)")
    p.add_argument("--sizes", type=_int_list, help="ensemble sizes (default 5,10,20,40,50)")
    p.add_argument("--particles", type=int, help="particle count (default 10000)")

    p = sub.add_parser("synth-pandemic", help="50-step forecasts of the growth/decay system")
    common(p, "number of Monte Carlo runs (default 100)")
    p.add_argument("--sigma", type=_float_list, help="noise levels, comma separated (default 0.05,0.5)")
    p.add_argument("--methods", type=_csv_list, help=f"subset of {','.join(ex.METHODS)}")

    p = sub.add_parser("ili", help="weekly ILI forecasting experiment")
    p.add_argument("--data", help="ILI CSV (year,week,region,age_group,ili,total_patients)")
    p.add_argument("--fixture", action="store_true", help="use the built-in synthetic ILI data")
    p.add_argument("--seed", type=int, help="filter seed (and fixture seed)")
    p.add_argument("--delay", type=int, help="delay embedding depth d (default 1)")
    p.add_argument("--rank", type=int, help="truncation rank r (default 8)")
    p.add_argument("--rank-sweep", type=_rank_range, help="ranks to sweep, e.g. 4..12")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    p.add_argument("--config", help="JSON file of settings; flags override it")
    return parser


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _merge(defaults: dict, file_cfg: dict, flags: dict) -> dict:
    """Defaults, overridden by the config file, overridden by flags."""
    allowed = set(defaults)
    unknown = set(file_cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(file_cfg)
    out.update({k: v for k, v in flags.items() if k in allowed and v is not None})
    if "sigma" in out and isinstance(defaults.get("sigma"), list) and not isinstance(out["sigma"], list):
        out["sigma"] = [out["sigma"]]
    return out


def _study_fields(cls) -> dict:
    return {f.name: getattr(cls(), f.name) for f in fields(cls)}


def _output_dir(cfg: dict) -> Path:
    out = Path(cfg.get("out") or os.environ.get(OUTPUT_ENV) or "results")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _check_runs(cfg: dict) -> None:
    if cfg["runs"] < 1:
        raise ConfigError("--runs must be >= 1")
    if cfg["workers"] < 1:
        raise ConfigError("--workers must be >= 1")


def _echo(command: str, cfg: dict) -> list[str]:
    shown = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items() if k != "out"}
    return [f"dmdenkf {command}", "config " + json.dumps(shown, sort_keys=True)]


def _write_rows(path: Path, header_lines, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _methods(cfg: dict) -> tuple:
    methods = tuple(cfg["methods"])
    bad = [m for m in methods if m not in ex.METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; choose from {','.join(ex.METHODS)}")
    return methods


def cmd_synth_eig(args) -> list[Path]:
    study = _study_fields(ex.RotationStudyConfig)
    defaults = dict(study, seed=0, runs=100, workers=1, out=None, sigma=[0.05, 0.5])
    cfg = _merge(defaults, _load_config(args.config), vars(args))
    _check_runs(cfg)
    methods = _methods(cfg)
    study_cfg = ex.RotationStudyConfig(**{k: cfg[k] for k in study if k != "methods"}, methods=methods)
    out = _output_dir(cfg)
    header = _echo("synth-eig", cfg)
    seeds = range(cfg["seed"], cfg["seed"] + cfg["runs"])
    table, dist = [], []
    for sigma in cfg["sigma"]:
        res = ex.run_trials(ex.rotation_trial, seeds, cfg["workers"], sigma=float(sigma), cfg=study_cfg)
        for m in methods:
            recs = [r[m] for r in res]
            mod_err, arg_err = modulus_argument_errors(recs)
            pair_rate = float(np.mean([np.mean(r.pair_found) for r in recs]))
            table += [(m, sigma, "mean_modulus_error", mod_err, cfg["runs"], cfg["seed"]),
                      (m, sigma, "mean_abs_argument_error", float(np.mean(np.abs(arg_err))),
                       cfg["runs"], cfg["seed"]),
                      (m, sigma, "pair_found_rate", pair_rate, cfg["runs"], cfg["seed"])]
            for seed, rec in zip(seeds, recs):
                err = wrap_angle(rec.est_argument - rec.true_argument)
                for step, (e, ok) in enumerate(zip(err, rec.pair_found), start=study_cfg.spin_up + 1):
                    dist.append((m, sigma, seed, step, "argument_error", float(e) if ok else "nan"))
    paths = [out / "synth_eig_table.csv", out / "synth_eig_arg_errors.csv"]
    _write_rows(paths[0], header, ["method", "sigma", "metric", "value", "n_runs", "seed_base"], table)
    _write_rows(paths[1], header, ["method", "sigma", "seed", "step", "metric", "value"], dist)
    return paths


def cmd_enkf_vs_pf(args) -> list[Path]:
    defaults = dict(_study_fields(ex.RotationStudyConfig), seed=0, runs=100, workers=1, out=None,
                    sigma=0.5, sizes=[5, 10, 20, 40, 50], particles=10_000)
    defaults.pop("methods")
    cfg = _merge(defaults, _load_config(args.config), vars(args))
    _check_runs(cfg)
    if min(cfg["sizes"]) < 2 or cfg["particles"] < 2:
        raise ConfigError("ensemble sizes and particle count must be >= 2")
    rot = ex.RotationStudyConfig(**{k: cfg[k] for k in _study_fields(ex.RotationStudyConfig)
                                    if k != "methods"})
    pf_cfg = ex.PfStudyConfig(rotation=rot, ensemble_sizes=tuple(cfg["sizes"]), particles=cfg["particles"])
    out = _output_dir(cfg)
    header = _echo("enkf-vs-pf", cfg)
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["runs"]))
    res = ex.run_trials(ex.pf_comparison_trial, seeds, cfg["workers"], cfg=pf_cfg, sigma=float(cfg["sigma"]))
    per_run, summary = [], []
    keys = [("enkf", N) for N in pf_cfg.ensemble_sizes] + [("pf", cfg["particles"])]
    for method, size in keys:
        key = "pf" if method == "pf" else size
        mse = np.array([float(np.mean(r[key] ** 2)) for r in res])
        ok = np.array([r["pair"] for r in res])
        for seed, v, p in zip(seeds, mse, ok):
            per_run.append((method, size, seed, int(p), "argument_mse", float(v)))
        summary.append((method, size, "argument_mse", float(mse.mean()), len(seeds), cfg["seed"]))
        value = float(mse[ok].mean()) if ok.any() else float("nan")
        summary.append((method, size, "argument_mse_pair_found", value, int(ok.sum()), cfg["seed"]))
    paths = [out / "enkf_vs_pf_mse.csv", out / "enkf_vs_pf_runs.csv"]
    _write_rows(paths[0], header, ["method", "size", "metric", "value", "n_runs", "seed_base"], summary)
    _write_rows(paths[1], header, ["method", "size", "seed", "pair_found", "metric", "value"], per_run)
    return paths


def cmd_synth_pandemic(args) -> list[Path]:
    study = _study_fields(ex.PandemicStudyConfig)
    defaults = dict(study, seed=0, runs=100, workers=1, out=None, sigma=[0.05, 0.5])
    cfg = _merge(defaults, _load_config(args.config), vars(args))
    _check_runs(cfg)
    methods = _methods(cfg)
    study_cfg = ex.PandemicStudyConfig(**{k: cfg[k] for k in study if k != "methods"}, methods=methods)
    out = _output_dir(cfg)
    header = _echo("synth-pandemic", cfg)
    seeds = list(range(cfg["seed"], cfg["seed"] + cfg["runs"]))
    per_run, summary = [], []
    for sigma in cfg["sigma"]:
        res = ex.run_trials(ex.pandemic_trial, seeds, cfg["workers"], sigma=float(sigma), cfg=study_cfg)
        for m in methods:
            err = np.array([r[m] for r in res])
            per_run += [(m, sigma, s, "mean_relative_error", float(e)) for s, e in zip(seeds, err)]
            summary.append((m, sigma, "median_mean_relative_error", float(np.median(err)),
                            len(seeds), cfg["seed"]))
            if len(seeds) >= 4:
                summary.append((m, sigma, "iqr_failure_rate", outlier_rate_iqr(err), len(seeds), cfg["seed"]))
    paths = [out / "pandemic_summary.csv", out / "pandemic_errors.csv"]
    _write_rows(paths[0], header, ["method", "sigma", "metric", "value", "n_runs", "seed_base"], summary)
    _write_rows(paths[1], header, ["method", "sigma", "seed", "metric", "value"], per_run)
    return paths


def cmd_ili(args) -> list[Path]:
    ili_fields = IliExperimentConfig().to_dict()
    defaults = dict(ili_fields, data=None, fixture=False, out=None, rank_sweep=None)
    flags = dict(vars(args))
    if not flags.get("fixture"):
        flags["fixture"] = None
    cfg = _merge(defaults, _load_config(args.config), flags)
    if cfg["data"] is None and not cfg["fixture"]:
        raise ConfigError("give --data PATH or --fixture")
    try:
        exp_cfg = IliExperimentConfig.from_dict({k: cfg[k] for k in ili_fields})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["fixture"]:
        records = make_ili_fixture(seed=exp_cfg.seed)
    else:
        if not os.path.exists(cfg["data"]):
            raise IliDataError(f"data file {cfg['data']} not found")
        records = load_ili_csv(cfg["data"])
    out = _output_dir(cfg)
    result = run_ili_experiment(records, exp_cfg)
    paths = [out / "ili_forecasts.csv", out / "ili_metrics.json"]
    if cfg["rank_sweep"]:
        result.rank_sweep = rank_sweep(records, exp_cfg, cfg["rank_sweep"], horizon=max(exp_cfg.horizons))
        paths.append(out / "ili_rank_sweep.csv")
        result.write_rank_sweep_csv(paths[2])
    result.write_forecasts_csv(paths[0])
    result.write_metrics_json(paths[1])
    return paths


COMMANDS = {
    "synth-eig": cmd_synth_eig,
    "enkf-vs-pf": cmd_enkf_vs_pf,
    "synth-pandemic": cmd_synth_pandemic,
    "ili": cmd_ili,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        paths = COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IliDataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DmdError, FilterError, DecodeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
