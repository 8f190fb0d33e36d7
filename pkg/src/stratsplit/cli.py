"""Command-line front end: ``ssa run|pilot|bounds|oracle``.

Settings come from a JSON config file, then ``SSA_SEED``/``SSA_THREADS``,
then flags, later sources winning.  Exit codes: 0 success, 2 bad
configuration, 3 degenerate run (partial output still written), 4 oracle
refused the instance.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time

import jsonschema

from . import bounds, oracles
from .engine import (
    LevelSchedule,
    Orientation,
    RunConfig,
    SsaError,
    StallError,
    percent_error,
    replicate,
)
from .models import credit, saw, wcm

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_ORACLE = 0, 2, 3, 4

STRATA_HEADER = ["t", "gamma", "size_X", "size_Z", "R_hat", "P_hat", "H_hat", "C_hat"]
SERIES_HEADER = ["n", "c_hat", "re", "pe_vs_oracle", "mu_hat", "delta_hat"]
# largest n for which the series compares against the DFS count
SAW_ORACLE_N = 14

_RUN_KEYS = {
    "N": {"type": "integer", "minimum": 1},
    "burn_in": {"type": "integer", "minimum": 1},
    "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    "replications": {"type": "integer", "minimum": 1},
    "seed": {"type": "integer"},
    "mode": {"enum": ["ssa", "issa"]},
    "pool_pilot": {"type": "boolean"},
    "threads": {"type": "integer", "minimum": 1},
}

_PORTFOLIO = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "generator": {
                    "type": "object",
                    "properties": {
                        "k": {"type": "integer", "minimum": 1},
                        "d": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer"},
                    },
                    "required": ["k", "d"],
                    "additionalProperties": False,
                }
            },
            "required": ["generator"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "loadings": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "losses": {"type": "array", "items": {"type": "number"}},
                "default_probs": {"type": "array", "items": {"type": "number"}},
            },
            "required": ["loadings", "losses", "default_probs"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "model": {"enum": ["wcm", "credit", "saw"]},
        "wcm": {
            "type": "object",
            "properties": {
                "weights": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "gamma": {"type": "number"},
                "quantity": {"enum": ["tail", "condexp"]},
            },
            "required": ["weights", "gamma"],
            "additionalProperties": False,
        },
        "credit": {
            "type": "object",
            "properties": {
                "portfolio": _PORTFOLIO,
                "vars": {"type": "array", "items": {"type": "number"}},
            },
            "required": ["portfolio"],
            "additionalProperties": False,
        },
        "saw": {
            "type": "object",
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "series": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "re_target": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "run": {"type": "object", "properties": _RUN_KEYS, "additionalProperties": False},
        "mandatory_levels": {"type": "array", "items": {"type": "number"}},
        "outputs": {
            "type": "object",
            "properties": {"json": {"type": "string"}, "csv": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["model"],
    "additionalProperties": False,
}

SUMMARY_SCHEMA = {
    "type": "object",
    "properties": {
        "estimate": {"type": ["number", "null"]},
        "re": {"type": ["number", "string", "null"]},
        "per_run": {"type": "array", "items": {"type": ["number", "null"]}},
        "levels": {"type": "array", "items": {"type": ["number", "string"]}},
        "seed": {"type": "integer"},
        "wall_time": {"type": "number"},
    },
    "required": ["estimate", "re", "per_run", "levels", "seed", "wall_time"],
}


class ConfigError(ValueError):
    pass


def _num(x):
    """JSON-safe number: infinities become the strings ``"inf"``/``"-inf"``, NaN becomes null."""
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _csv_num(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return repr(x)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc


def resolve(args, env=None) -> dict:
    """Merge config file, environment and flags into one validated config."""
    env = os.environ if env is None else env
    cfg = load_config(getattr(args, "config", None))
    run = dict(cfg.get("run", {}))
    try:
        if "SSA_SEED" in env:
            run["seed"] = int(env["SSA_SEED"])
        if "SSA_THREADS" in env:
            run["threads"] = int(env["SSA_THREADS"])
    except ValueError as exc:
        raise ConfigError(f"bad environment override: {exc}") from exc
    flags = {
        "N": args.samples,
        "burn_in": args.burnin,
        "rho": args.rho,
        "replications": args.reps,
        "seed": args.seed,
        "mode": args.mode,
        "threads": args.threads,
    }
    run.update({k: v for k, v in flags.items() if v is not None})
    if args.pool_pilot:
        run["pool_pilot"] = True
    cfg["run"] = run
    if args.model is not None:
        cfg["model"] = args.model
    if "model" not in cfg:
        raise ConfigError("no model given (use --model or a config file)")
    model = cfg["model"]
    sub = dict(cfg.get(model, {}))
    if model == "wcm":
        if args.weights is not None:
            sub["weights"] = args.weights
        if args.gamma is not None:
            sub["gamma"] = args.gamma
        if args.quantity is not None:
            sub["quantity"] = args.quantity
    elif model == "saw":
        if args.n is not None:
            sub["n"] = args.n
        if args.series is not None:
            sub["series"] = args.series
        if args.re_target is not None:
            sub["re_target"] = args.re_target
    elif model == "credit":
        if args.v is not None:
            sub["vars"] = args.v
        if args.k is not None or "portfolio" not in sub:
            sub["portfolio"] = {
                "generator": {"k": args.k or 30, "d": args.d or 2, "seed": args.portfolio_seed or 0}
            }
    cfg[model] = sub
    if args.mandatory is not None:
        cfg["mandatory_levels"] = args.mandatory
    outputs = dict(cfg.get("outputs", {}))
    if args.out is not None:
        outputs["json"] = args.out
    if args.csv is not None:
        outputs["csv"] = args.csv
    if outputs:
        cfg["outputs"] = outputs
    validate_config(cfg)
    try:
        cfg["_run"] = RunConfig(**run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _read_levels(path: str, orientation: Orientation) -> LevelSchedule:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read levels {path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("levels", data.get("thresholds"))
    try:
        return LevelSchedule(tuple(float(x) for x in data), orientation)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid levels file: {exc}") from exc


def write_strata_csv(fh, run) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(STRATA_HEADER)
    for r in run.strata:
        gamma = run.levels.thresholds[r.t] if run.levels is not None else math.nan
        w.writerow(
            [r.t, _csv_num(gamma), r.size_X, r.size_Z]
            + [_csv_num(v) for v in (r.R_hat, r.P_hat, r.H_hat, r.C_hat)]
        )


def _summary(agg, levels, seed, wall, **extra) -> dict:
    out = {
        "estimate": _num(agg.mean),
        "re": _num(agg.re),
        "per_run": [_num(v) for v in agg.per_run],
        "levels": [_num(g) for g in levels.thresholds] if levels is not None else [],
        "seed": int(seed),
        "wall_time": wall,
    }
    out.update(extra)
    return out


def _emit(cfg, summary, csv_writer=None) -> None:
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    text = json.dumps(summary, indent=2, sort_keys=True)
    outputs = cfg.get("outputs", {})
    if "json" in outputs:
        with open(outputs["json"], "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if csv_writer is not None and "csv" in outputs:
        with open(outputs["csv"], "w", newline="") as fh:
            csv_writer(fh)


def _wcm_instance(cfg):
    sub = cfg["wcm"]
    if "weights" not in sub or "gamma" not in sub:
        raise ConfigError("wcm needs weights and gamma")
    try:
        return wcm.WcmInstance(sub["weights"], sub["gamma"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _portfolio(cfg):
    try:
        return credit.Portfolio.from_dict(cfg["credit"]["portfolio"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid portfolio: {exc}") from exc


def _saw_series(cfg):
    sub = cfg["saw"]
    if "series" in sub:
        return list(sub["series"])
    if "n" in sub:
        return [sub["n"]]
    raise ConfigError("saw needs n or series")


def _run_wcm(cfg, args, t0):
    inst = _wcm_instance(cfg)
    conf = cfg["_run"]
    try:
        levels = wcm.wcm_levels(inst) if args.levels is None else _read_levels(args.levels, Orientation.SUB)
    except wcm.NonPositiveLevels as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["wcm"].get("quantity", "tail") == "condexp":
        agg = wcm.wcm_condexp(inst, conf)
        _emit(cfg, _summary(agg, None, conf.seed, time.time() - t0, quantity="condexp"))
        return EXIT_OK
    spec = wcm.wcm_spec(inst, levels.thresholds[0])
    agg = wcm.wcm_tail(inst, conf) if args.levels is None else replicate(spec, levels, conf)
    first = agg.runs[0]
    _emit(
        cfg,
        _summary(agg, levels, conf.seed, time.time() - t0, quantity="tail"),
        lambda fh: write_strata_csv(fh, first),
    )
    return EXIT_DEGENERATE if any(r.extinct for r in agg.runs) else EXIT_OK


def _run_credit(cfg, args, t0):
    pf = _portfolio(cfg)
    conf = cfg["_run"]
    vars_ = sorted(float(v) for v in cfg["credit"].get("vars", []) + cfg.get("mandatory_levels", []))
    if not vars_:
        raise ConfigError("credit needs at least one VaR (--v)")
    levels = None
    if args.levels is not None:
        levels = _read_levels(args.levels, Orientation.SUPER)
    try:
        results, levels = credit.cvar_multi(pf, vars_, conf, levels)
    except StallError as exc:
        _emit(cfg, {"error": str(exc), "levels": [_num(g) for g in exc.schedule.thresholds]} | _blank(conf, t0))
        return EXIT_DEGENERATE
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    first = results[0]
    per_v = [
        {
            "v": r.v,
            "cvar": _num(r.cvar.mean),
            "cvar_re": _num(r.cvar.re),
            "tail": _num(r.tail.mean),
            "tail_re": _num(r.tail.re),
            "empty_runs": r.empty_runs,
        }
        for r in results
    ]
    runs = first.tail.runs
    _emit(
        cfg,
        _summary(first.cvar, levels, conf.seed, time.time() - t0, vars=per_v),
        lambda fh: write_strata_csv(fh, runs[0]),
    )
    return EXIT_DEGENERATE if any(r.empty_runs for r in results) else EXIT_OK


def _blank(conf, t0):
    return {"estimate": None, "re": None, "per_run": [], "seed": conf.seed, "wall_time": time.time() - t0}


def write_series_csv(fh, rows) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SERIES_HEADER)
    for row in rows:
        w.writerow([row["n"]] + [_csv_num(row[k]) for k in SERIES_HEADER[1:]])


def saw_row(n, agg) -> dict:
    pe = math.nan
    if n <= SAW_ORACLE_N:
        pe = percent_error(agg.mean, oracles.saw_count_exact(n, symmetry=True))
    mu = saw.mu_estimate(agg.mean, n) if agg.mean > 0 else math.nan
    delta = saw.delta_aggregate(agg.runs).mean
    return {"n": n, "c_hat": agg.mean, "re": agg.re, "pe_vs_oracle": pe, "mu_hat": mu, "delta_hat": delta}


def _run_saw(cfg, args, t0):
    conf = cfg["_run"]
    re_target = cfg["saw"].get("re_target")
    rows = []
    last = None
    for n in _saw_series(cfg):
        agg = saw.estimate_cn(n, conf, re_target)
        rows.append(saw_row(n, agg))
        last = (n, agg)
    n, agg = last
    summary = _summary(
        agg, saw.saw_levels(n), conf.seed, time.time() - t0, series=[{k: _num(v) for k, v in r.items()} for r in rows]
    )
    _emit(cfg, summary, lambda fh: write_series_csv(fh, rows))
    return EXIT_DEGENERATE if any(r.extinct for r in agg.runs) else EXIT_OK


def cmd_run(args) -> int:
    t0 = time.time()
    cfg = resolve(args)
    model = cfg["model"]
    return {"wcm": _run_wcm, "credit": _run_credit, "saw": _run_saw}[model](cfg, args, t0)


def cmd_pilot(args) -> int:
    t0 = time.time()
    cfg = resolve(args)
    conf = cfg["_run"]
    model = cfg["model"]
    mandatory = cfg.get("mandatory_levels", [])
    try:
        if model == "credit":
            pf = _portfolio(cfg)
            vars_ = sorted(float(v) for v in cfg["credit"].get("vars", []) + mandatory)
            levels, _ = credit.credit_levels(pf, vars_, conf)
        elif model == "wcm":
            levels = wcm.wcm_levels(_wcm_instance(cfg))
        else:
            levels = saw.saw_levels(_saw_series(cfg)[-1])
    except StallError as exc:
        _emit(cfg, {"levels": [_num(g) for g in exc.schedule.thresholds], "error": str(exc)} | _blank(conf, t0))
        return EXIT_DEGENERATE
    except wcm.NonPositiveLevels as exc:
        raise ConfigError(str(exc)) from exc
    out = {"levels": [_num(g) for g in levels.thresholds], "orientation": levels.orientation.value}
    out |= {"estimate": None, "re": None, "per_run": [], "seed": conf.seed, "wall_time": time.time() - t0}
    _emit(cfg, out)
    return EXIT_OK


def bounds_table(args) -> str:
    """Per-level plan as CSV text with ``#`` comment lines."""
    target = bounds.ApproximationTarget(
        args.epsilon, args.delta, args.n, args.r_lower, args.a, args.b
    )
    plans = bounds.epsdelta_samplesizes(target)
    buf = io.StringIO()
    buf.write(f"# epsilon={args.epsilon} delta={args.delta} n={args.n}\n")
    buf.write("# min_X and min_Z are rounded up to the next integer\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "tv_X", "min_X", "tv_Z", "min_Z"])
    for p in plans:
        w.writerow(
            [p.t, _csv_num(p.tv_X), p.min_X, "" if p.tv_Z is None else _csv_num(p.tv_Z), "" if p.min_Z is None else p.min_Z]
        )
    if args.n == 1 and args.binary:
        r = target.r_lower[0]
        buf.write(f"# chernoff comparison for a binary integrand with p_lower={r}\n")
        w.writerow(["chernoff", _csv_num(bounds.chernoff_tv(r, args.epsilon)), bounds.chernoff_m(r, args.epsilon, args.delta), "", ""])
    return buf.getvalue()


def cmd_bounds(args) -> int:
    try:
        text = bounds_table(args)
    except bounds.InvalidTarget as exc:
        raise ConfigError(str(exc)) from exc
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_oracle(args) -> int:
    model = args.model
    rows = []
    if model == "wcm":
        if args.weights is None or args.gamma is None:
            raise ConfigError("wcm oracle needs --weights and --gamma")
        tail, cond = oracles.wcm_enumerate(args.weights, args.gamma)
        rows = [("tail", tail), ("condexp", cond)]
    elif model == "saw":
        ns = args.series or ([args.n] if args.n else None)
        if not ns:
            raise ConfigError("saw oracle needs --n or --series")
        for n in ns:
            c, dist, work = oracles.saw_exact(n, symmetry=True)
            rows.append((f"c_{n}", oracles.OracleResult(float(c), "dfs", work)))
            rows.append((f"delta_{n}", oracles.OracleResult(dist, "dfs", work)))
    elif model == "credit":
        pf = credit.glasserman_li_portfolio(args.k or 30, args.d or 2, args.portfolio_seed or 0)
        if args.config:
            cfg = load_config(args.config)
            if "credit" in cfg:
                pf = _portfolio(cfg)
        for v in args.v or [0.0]:
            tail, cond = oracles.credit_cmc(pf, v, args.oracle_samples, seed=args.seed or 0)
            rows += [(f"tail_{v:g}", tail), (f"cvar_{v:g}", cond)]
    else:
        raise ConfigError("oracle needs --model")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value", "standard_error", "method", "work"])
    for name, r in rows:
        w.writerow([name, _csv_num(r.value), _csv_num(r.standard_error), r.method, r.work])
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ssa", description="Stratified splitting estimators")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--model", choices=["wcm", "credit", "saw"])
    common.add_argument("--samples", type=int, help="particles per level (N)")
    common.add_argument("--rho", type=float, help="pilot elite fraction")
    common.add_argument("--burnin", type=int, help="kernel steps per transition (tau)")
    common.add_argument("--reps", type=int, help="independent replications (R)")
    common.add_argument("--seed", type=int)
    common.add_argument("--levels", help="JSON file with a threshold list")
    common.add_argument("--mode", choices=["ssa", "issa"])
    common.add_argument("--out", help="summary JSON path (default stdout)")
    common.add_argument("--csv", help="per-stratum or series CSV path")
    common.add_argument("--threads", type=int)
    common.add_argument("--pool-pilot", action="store_true")
    common.add_argument("--weights", type=_floats, help="wcm: comma-separated weights")
    common.add_argument("--gamma", type=float, help="wcm: threshold on w.x")
    common.add_argument("--quantity", choices=["tail", "condexp"])
    common.add_argument("--n", type=int, help="saw: walk length")
    common.add_argument("--series", type=_ints, help="saw: comma-separated lengths")
    common.add_argument("--re-target", type=float, help="add replications until this RE")
    common.add_argument("--v", type=_floats, help="comma-separated VaR levels")
    common.add_argument("--mandatory", type=_floats, help="levels the pilot must include")
    common.add_argument("--k", type=int, help="credit: obligors")
    common.add_argument("--d", type=int, help="credit: factors")
    common.add_argument("--portfolio-seed", type=int)

    sub.add_parser("run", parents=[common], help="pilot then replicated runs")
    sub.add_parser("pilot", parents=[common], help="print the level schedule")
    o = sub.add_parser("oracle", parents=[common], help="exact or plain Monte Carlo ground truth")
    o.add_argument("--oracle-samples", type=int, default=10**7)

    b = sub.add_parser("bounds", help="sample-size plan")
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--n", type=int, default=1)
    b.add_argument("--r-lower", type=float, default=0.5)
    b.add_argument("--a", type=float)
    b.add_argument("--b", type=float)
    b.add_argument("--binary", action="store_true", help="add the binary-variable row (n = 1)")
    b.add_argument("--csv")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handlers = {"run": cmd_run, "pilot": cmd_pilot, "bounds": cmd_bounds, "oracle": cmd_oracle}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"ssa: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (oracles.TooLarge, oracles.RefuseRareRegime) as exc:
        print(f"ssa: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except SsaError as exc:
        print(f"ssa: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
