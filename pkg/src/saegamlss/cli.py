"""Command-line front end.

Subcommands: ``fit``, ``predict``, ``mse``, ``select-dist``, ``simulate`` and
``report``.  Exit codes are 0 on success, 2 for user errors (bad flags,
config, data or specification) and 3 for numerical failures (non-convergence,
too many failed bootstrap refits).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import fields

import pandas as pd
import yaml

from . import __version__
from .artifact import load_model, save_model
from .config import RunConfig, load_config, load_config_file
from .distributions import select_distribution
from .errors import ConfigError, ConvergenceError, DegenerateError, SaeError, SpecError
from .fit import FitControl, coefficient_table, fit_gamlss, gaic
from .model import Dataset, validate_spec
from .mse import bootstrap_mse
from .predict import AreaFunctional, FixedLine, FractionOfMedian, predict_area
from .simulate import METRIC_KEYS, SCENARIOS, ScenarioConfig, atomic_write, run_scenario

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3


class UsageError(SaeError, ValueError):
    """Bad command-line usage detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# io helpers


def read_csv(path: str) -> pd.DataFrame:
    """UTF-8 CSV with a header row; only empty fields count as missing."""
    try:
        frame = pd.read_csv(path, encoding="utf-8", keep_default_na=False, na_values=[""])
    except FileNotFoundError:
        raise ConfigError(f"no such file: {path}") from None
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse CSV ({exc})") from None
    return frame


def _write_csv(frame: pd.DataFrame, path: str | None):
    text = frame.to_csv(index=False)
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _functional(args) -> AreaFunctional:
    if args.zeta == "mean":
        return AreaFunctional.mean()
    if args.zeta == "poverty-rate":
        if args.line is not None:
            return AreaFunctional.poverty_rate(FixedLine(args.line))
        return AreaFunctional.poverty_rate(FractionOfMedian(args.fraction, args.scope))
    return AreaFunctional.quantile(args.u)


def _run_config(args) -> RunConfig:
    if args.config:
        return load_config_file(args.config)
    if not args.family or not args.mu:
        raise UsageError("give --config, or --family together with --mu")
    doc = {"family": args.family, "formulas": {"mu": args.mu}}
    for k in ("sigma", "nu", "tau"):
        if getattr(args, k):
            doc["formulas"][k] = getattr(args, k)
    if args.area:
        doc["area"] = args.area
    return load_config(yaml.safe_dump(doc), "<flags>")


def _load_pair(meta, sample_path, pop_path):
    area, resp, uid = meta.get("area", "area"), meta.get("response", "y"), meta.get("unit_id")
    sample = Dataset(read_csv(sample_path), area=area, response=resp, unit_id=uid)
    pframe = read_csv(pop_path)
    pop = Dataset(pframe, area=area, response=None, role="population",
                  unit_id=uid if uid in pframe.columns else None)
    return sample, pop


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    ctrl = cfg.control
    if args.max_outer is not None or args.tol is not None:
        kw = {f.name: getattr(ctrl, f.name) for f in fields(ctrl)}
        if args.max_outer is not None:
            kw["max_outer"] = args.max_outer
        if args.tol is not None:
            kw["tol"] = args.tol
        ctrl = FitControl(**kw)
    data = Dataset(read_csv(args.data), area=cfg.area, response=cfg.response, unit_id=cfg.unit_id)
    for msg in validate_spec(data, cfg.spec):
        print(f"warning: {msg}", file=sys.stderr)
    meta = {"area": cfg.area, "response": cfg.response, "unit_id": cfg.unit_id,
            "data": os.path.basename(args.data), "version": __version__}
    try:
        model = fit_gamlss(data, cfg.spec, ctrl)
    except ConvergenceError as exc:
        if exc.partial is not None:
            save_model(exc.partial, args.out, meta)
            print(f"artifact written with converged=false: {args.out}", file=sys.stderr)
        raise
    save_model(model, args.out, meta)
    print(coefficient_table(model))
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model, meta = load_model(args.model)
    sample, pop = _load_pair(meta, args.sample, args.population)
    res = predict_area(model, sample, pop, _functional(args), L=args.L, seed=args.seed,
                       method=args.method, threads=args.threads)
    _write_csv(res.to_frame(), args.out)
    return EXIT_OK


def cmd_mse(args) -> int:
    model, meta = load_model(args.model)
    sample, pop = _load_pair(meta, args.sample, args.population)
    res = bootstrap_mse(model, sample, pop, _functional(args), B=args.B, L=args.L, seed=args.seed,
                        threads=args.threads, method=args.method, keep_log=False)
    if res.n_failed:
        print(f"warning: {res.n_failed} of {res.B} bootstrap refits failed and were dropped",
              file=sys.stderr)
    _write_csv(res.to_frame(), args.out)
    return EXIT_OK


def cmd_select_dist(args) -> int:
    frame = read_csv(args.data)
    if args.response not in frame.columns:
        raise SpecError(f"missing response column {args.response!r}")
    y = frame[args.response]
    if y.isna().any():
        raise SpecError("response has missing values")
    penalty = math.log(len(y)) if args.penalty == "bic" else float(args.penalty)
    table = select_distribution(y.to_numpy(dtype=float), args.families.split(","), penalty)
    table = table.assign(params=table["params"].map(lambda p: json.dumps(p) if p else ""))
    if args.out:
        _write_csv(table, args.out)
    print(table.drop(columns=["params"]).to_string(index=False))
    return EXIT_OK


_SIM_KEYS = {f.name for f in fields(ScenarioConfig)} - {"ctrl"}


def _sim_config(args) -> ScenarioConfig:
    kw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config!r}: {exc.strerror}") from None
        root = yaml.compose(text)
        if root is None or not isinstance(root, yaml.MappingNode):
            raise ConfigError(f"{args.config}:1: simulation config must be a mapping")
        for k, _ in root.value:
            if k.value not in _SIM_KEYS:
                raise ConfigError(f"{args.config}:{k.start_mark.line + 1}: unknown key '{k.value}'")
        kw.update(yaml.safe_load(text))
    for flag, key in (("scenario", "scenario"), ("T", "T"), ("B", "B"), ("L", "L"), ("N_total", "N_total"),
                      ("J", "J"), ("seed", "seed"), ("threads", "threads")):
        v = getattr(args, flag)
        if v is not None:
            kw[key] = v
    if args.estimators:
        kw["estimators"] = tuple(args.estimators.split(","))
    if args.no_smearing:
        kw["smearing"] = False
    if "scenario" not in kw:
        raise UsageError("give --scenario or a config with a 'scenario' key")
    if args.desk:
        return ScenarioConfig.desk(**kw)
    return ScenarioConfig(**kw)


def cmd_simulate(args) -> int:
    config = _sim_config(args)
    report = run_scenario(config)
    paths = report.write(args.outdir)
    print(format_metrics(report.metrics_json()))
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def format_metrics(doc: dict) -> str:
    """Estimators as columns and metrics as rows, like the published tables."""
    m = doc["metrics"]
    ests = list(m)
    lines = [f"{'':<8s}" + "".join(f"{e:>12s}" for e in ests)]
    for key in METRIC_KEYS:
        row = f"{key:<8s}"
        for e in ests:
            v = m[e].get(key)
            row += f"{'-':>12s}" if v is None else f"{v:>12.3f}"
        lines.append(row)
    cfg = doc.get("config", {})
    lines.append(f"scenario {cfg.get('scenario')}  T_effective {doc.get('T_effective')}  "
                 f"failed {len(doc.get('failed_replicates', []))}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        with open(args.input, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such file: {args.input}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.input}: not valid JSON ({exc})") from None
    if doc.get("kind") == "saegamlss.model":
        model, _ = load_model(args.input)
        text = coefficient_table(model)
        if not model.converged:
            text += "\nWARNING: the fit did not converge"
        frame = pd.DataFrame([{"param": k, "term": c, "estimate": b}
                              for k in model.param_names
                              for c, b in zip(model.columns[k], model.beta[k])]
                             + [{"param": k, "term": "re_sd", "estimate": math.sqrt(s)}
                                for k, s in model.sigma2.items()])
        summary = {"gdev": model.gdev, "df": model.df, "aic": gaic(model, 2.0)}
    elif "metrics" in doc:
        text = format_metrics(doc)
        frame = pd.DataFrame([{"estimator": e, **{k: v.get(k) for k in METRIC_KEYS}}
                              for e, v in doc["metrics"].items()])
        summary = None
    else:
        raise ConfigError(f"{args.input}: neither a model artifact nor a metrics summary")
    print(text)
    if summary:
        print(" ".join(f"{k}={v:.4f}" for k, v in summary.items()))
    if args.csv:
        _write_csv(frame, args.csv)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_functional(p):
    p.add_argument("--zeta", choices=("mean", "poverty-rate", "quantile"), default="mean",
                   help="area functional to predict (default: mean)")
    p.add_argument("--fraction", type=float, default=0.6,
                   help="poverty line as a fraction of the median (default: 0.6)")
    p.add_argument("--scope", choices=("global", "area"), default="global",
                   help="median used for the poverty line: whole population or each area")
    p.add_argument("--line", type=float, default=None,
                   help="fixed poverty line; overrides --fraction and --scope")
    p.add_argument("--u", type=float, default=0.5, help="quantile level for --zeta quantile")
    p.add_argument("--L", type=int, default=100, help="Monte Carlo populations per prediction")
    p.add_argument("--method", choices=("auto", "mc", "exact"), default="auto",
                   help="'auto' uses the exact expectation for the mean and Monte Carlo otherwise")
    p.add_argument("--seed", type=int, default=0, help="seed for all random draws")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="saegamlss", description="Small area estimation with GAMLSS.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and write a JSON artifact")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--family", help="Normal, LogNormal, Gamma or Dagum (instead of --config)")
    p.add_argument("--mu", help="mu formula, e.g. 'y ~ x1 + (1|area)'")
    p.add_argument("--sigma", help="sigma formula, e.g. '~ x2'")
    p.add_argument("--nu", help="nu formula")
    p.add_argument("--tau", help="tau formula")
    p.add_argument("--area", help="area column (default: from the formulas or 'area')")
    p.add_argument("--data", required=True, help="sample CSV")
    p.add_argument("--out", required=True, help="output model artifact (JSON)")
    p.add_argument("--max-outer", dest="max_outer", type=int, help="override control.max_outer")
    p.add_argument("--tol", type=float, help="override control.tol")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict area functionals from a fitted model")
    p.add_argument("--model", required=True, help="model artifact written by 'fit'")
    p.add_argument("--sample", required=True, help="sample CSV used for the fit")
    p.add_argument("--population", required=True,
                   help="population CSV (non-sampled units, or all units with a unit id column)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    _add_functional(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("mse", help="parametric bootstrap MSE of the predictions")
    p.add_argument("--model", required=True, help="model artifact written by 'fit'")
    p.add_argument("--sample", required=True, help="sample CSV used for the fit")
    p.add_argument("--population", required=True, help="population CSV")
    p.add_argument("--B", type=int, default=200, help="bootstrap replicates (default: 200)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    _add_functional(p)
    p.set_defaults(func=cmd_mse)

    p = sub.add_parser("select-dist", help="rank candidate families by GAIC")
    p.add_argument("--data", required=True, help="CSV with the response")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--families", default="Normal,LogNormal,Gamma,Dagum",
                   help="comma separated candidate families")
    p.add_argument("--penalty", default="2", help="GAIC penalty per df, or 'bic' for log(n)")
    p.add_argument("--out", help="also write the table as CSV")
    p.set_defaults(func=cmd_select_dist)

    p = sub.add_parser("simulate", help="run a model-based simulation scenario")
    p.add_argument("--config", help="YAML with simulation settings (scenario, T, B, L, N_total, J, ...)")
    p.add_argument("--scenario", help=f"one of {', '.join(sorted(SCENARIOS))}")
    p.add_argument("--desk", action="store_true",
                   help="reduced defaults: N_total 20000, J 25, T 100, B 100, L 100")
    p.add_argument("--T", type=int, help="Monte Carlo replicates")
    p.add_argument("--B", type=int, help="bootstrap replicates (0 skips the MSE)")
    p.add_argument("--L", type=int, help="Monte Carlo populations per prediction")
    p.add_argument("--N-total", dest="N_total", type=int, help="population size")
    p.add_argument("--J", type=int, help="number of areas")
    p.add_argument("--estimators", help="comma separated subset of GAMLSS,EBLUP,Direct")
    p.add_argument("--no-smearing", action="store_true", help="EBLUP mean without smearing")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--outdir", default="sim_out", help="directory for metrics.json and CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="print a model artifact or a simulation metrics summary")
    p.add_argument("--input", required=True, help="model artifact or metrics.json")
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConvergenceError, DegenerateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SaeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
