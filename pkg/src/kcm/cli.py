"""Command-line front end.

Every flag corresponds to exactly one key of the JSON run configuration::

    {"model":     {"d": 2, "n": 4, "p": 0.3, "family": "northeast", "constraints": null},
     "command":   {"name": "simulate", "horizon": 10.0, ...},
     "execution": {"seed": 0, "replicas": 1000, "threads": null, "output_dir": null,
                   "state_cap": 16777216, "plot_data": false}}

Values come from the built-in defaults, then ``--config FILE``, then explicit
flags.  The merged configuration is written to ``config.echo.json`` inside
the run directory and ``kcm run --config config.echo.json`` repeats the run.

Exit codes: 0 success, 1 validation error, 2 capacity/convergence error,
3 study-level failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__, dynamics, exact, experiments, results
from .errors import (CapacityError, ConvergenceError, IrreducibilityError, KCMError,
                     StudyFailure, ValidationError)
from .lattice import Model
from .measure import DEFAULT_STATE_CAP

log = logging.getLogger("kcm")

COMMANDS = ("simulate", "exact-gap", "exact-mix", "fk-bound", "lsi-bound", "schedule",
            "diagonal-decay", "tau-scaling", "validate-mc", "shape")


@dataclass(frozen=True)
class Option:
    flag: str
    section: str
    key: str
    type: Callable
    default: Any
    help: str
    commands: tuple = ()  # empty: shared by every subcommand


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    if str(text).lower() in ("1", "true", "yes", "on"):
        return True
    if str(text).lower() in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def _custom(text):
    if text is None or isinstance(text, dict):
        return text
    return json.loads(Path(text).read_text()) if Path(str(text)).exists() else json.loads(text)


def _opt_int(text):
    return None if text is None else int(text)


def _opt_float(text):
    return None if text is None else float(text)


def _opt_ints(text):
    return None if text is None else _ints(text)


OPTIONS = (
    Option("--d", "model", "d", int, 2, "lattice dimension"),
    Option("--n", "model", "n", int, 2, "side length of the box"),
    Option("--p", "model", "p", float, 0.3, "probability of spin 1"),
    Option("--family", "model", "family", str, "northeast", "northeast | maximal | custom"),
    Option("--constraints", "model", "constraints", _custom, None,
           "custom family: JSON text or file {\"x1,..,xd\": [[y1,..,yd], ...]}"),
    Option("--seed", "execution", "seed", int, 0, "master seed"),
    Option("--replicas", "execution", "replicas", int, 1000, "Monte Carlo replicas"),
    Option("--threads", "execution", "threads", _opt_int, None, "worker threads (default: all cores)"),
    Option("--output-dir", "execution", "output_dir", str, None,
           "results root (KCM_RESULTS_DIR overrides)"),
    Option("--state-cap", "execution", "state_cap", int, DEFAULT_STATE_CAP, "max exact state-space size"),
    Option("--plot-data", "execution", "plot_data", _bool, False, "also write long-format CSV tables"),
    Option("--horizon", "command", "horizon", float, 10.0, "simulation horizon",
           ("simulate", "shape")),
    Option("--level", "command", "level", _opt_int, None, "simulate on the lower set U_level",
           ("simulate",)),
    Option("--initial", "command", "initial", str, "ones", "ones | zeros | pi", ("simulate",)),
    Option("--flip-rule", "command", "flip_rule", str, "change",
           "influence-region flip: change | legal", ("simulate", "shape")),
    Option("--method", "command", "method", str, "auto", "auto | dense | iterative",
           ("exact-gap", "fk-bound")),
    Option("--mode", "command", "mode", str, "tv", "tv | chi2", ("exact-mix",)),
    Option("--threshold", "command", "threshold", float, 0.25, "distance threshold", ("exact-mix",)),
    Option("--bisection-tol", "command", "bisection_tol", float, 1e-4, "bracket width at which bisection stops",
           ("exact-mix",)),
    Option("--site", "command", "site", _opt_ints, None, "site coordinates x1,..,xd (default far corner)",
           ("fk-bound",)),
    Option("--test-times", "command", "test_times", _floats, [1.0, 5.0, 10.0],
           "times for the Feynman-Kac check", ("fk-bound",)),
    Option("--eps", "command", "eps", float, 0.25, "target accuracy", ("schedule",)),
    Option("--c", "command", "c", _opt_float, None, "rate constant (default: analytic c0)",
           ("schedule",)),
    Option("--i", "command", "i", _opt_int, None, "hyperplane level (default d + 2)", ("diagonal-decay",)),
    Option("--times", "command", "times", _floats, [float(t) for t in np.linspace(0, 20, 41)],
           "time grid", ("diagonal-decay",)),
    Option("--n-list", "command", "n_list", _ints, [8, 16, 32, 64], "lattice sizes", ("tau-scaling",)),
    Option("--cap-factor", "command", "cap_factor", float, 50.0, "tau* cap in units of n",
           ("tau-scaling",)),
    Option("--time", "command", "time", float, 2.0, "comparison time", ("validate-mc",)),
    Option("--snapshots", "command", "snapshots", _floats, [32.0, 64.0], "snapshot times", ("shape",)),
)


def _applies(opt: Option, command: str) -> bool:
    return not opt.commands or command in opt.commands


def default_config(command: str) -> dict:
    cfg = {"model": {}, "command": {"name": command}, "execution": {}}
    for opt in OPTIONS:
        if _applies(opt, command):
            cfg[opt.section][opt.key] = copy.deepcopy(opt.default)
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kcm", description="Oriented KCM simulation and exact analysis.")
    parser.add_argument("--version", action="version", version=f"kcm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="repeat a run from a configuration file")
    run.add_argument("--config", required=True, help="JSON configuration (e.g. config.echo.json)")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (see --help)")
        p.add_argument("--config", default=None, help="JSON configuration file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        for opt in OPTIONS:
            if _applies(opt, name):
                p.add_argument(opt.flag, dest=f"{opt.section}__{opt.key}", default=None,
                               help=f"{opt.help} [config: {opt.section}.{opt.key}; default {opt.default!r}]")
    return parser


def _validate_and_coerce(cfg: dict, command: str) -> dict:
    allowed = {s: set() for s in ("model", "command", "execution")}
    for opt in OPTIONS:
        if _applies(opt, command):
            allowed[opt.section].add(opt.key)
    allowed["command"].add("name")
    extra = set(cfg) - set(allowed)
    if extra:
        raise ValidationError(f"unknown configuration sections: {sorted(extra)}")
    for section, keys in allowed.items():
        unknown = set(cfg.get(section, {})) - keys
        if unknown:
            raise ValidationError(f"unknown keys in {section}: {sorted(unknown)}")
    out = default_config(command)
    for opt in OPTIONS:
        if not _applies(opt, command):
            continue
        if opt.key in cfg.get(opt.section, {}):
            raw = cfg[opt.section][opt.key]
            try:
                out[opt.section][opt.key] = opt.type(raw) if raw is not None else None
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{opt.section}.{opt.key}: {exc}") from None
    ex = out["execution"]
    if ex["replicas"] < 1:
        raise ValidationError("replicas must be >= 1")
    if ex["state_cap"] < 2:
        raise ValidationError("state_cap must be >= 2")
    if "bisection_tol" in out["command"]:
        if not 0 < out["command"]["bisection_tol"] < 1:
            raise ValidationError("bisection_tol must lie in (0, 1)")
    if not 0 <= ex["seed"] < 2 ** 64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    cmd = out["command"]
    for key, choices in (("initial", ("ones", "zeros", "pi")), ("flip_rule", ("change", "legal")),
                         ("method", ("auto", "dense", "iterative")), ("mode", ("tv", "chi2"))):
        if key in cmd and cmd[key] not in choices:
            raise ValidationError(f"{key} must be one of {choices}")
    return out


def resolve_config(argv) -> dict:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        file_cfg = json.loads(Path(args.config).read_text())
        command = file_cfg.get("command", {}).get("name")
        if command not in COMMANDS:
            raise ValidationError(f"configuration names no valid command: {command!r}")
        return _validate_and_coerce(file_cfg, command), False
    command = args.command
    merged = {"model": {}, "command": {"name": command}, "execution": {}}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
        name = file_cfg.get("command", {}).get("name", command)
        if name != command:
            raise ValidationError(f"configuration is for {name!r}, not {command!r}")
        for section in file_cfg:
            merged.setdefault(section, {}).update(file_cfg[section])
    for opt in OPTIONS:
        if not _applies(opt, command):
            continue
        val = getattr(args, f"{opt.section}__{opt.key}")
        if val is not None:
            merged[opt.section][opt.key] = val
    return _validate_and_coerce(merged, command), args.verbose


def _model(cfg) -> Model:
    m = cfg["model"]
    return Model.build(m["d"], m["n"], m["p"], m["family"], m.get("constraints"))


def _initial(model: Model, kind: str, seed: int) -> np.ndarray:
    if kind == "ones":
        return np.ones(model.n_sites, dtype=np.uint8)
    if kind == "zeros":
        return np.zeros(model.n_sites, dtype=np.uint8)
    rng = np.random.default_rng(experiments.derived_seed(seed, 2))
    return (rng.random(model.n_sites) < model.p).astype(np.uint8)


def _cmd_simulate(cfg, run_dir):
    model = _model(cfg)
    c, ex = cfg["command"], cfg["execution"]
    stream = dynamics.RandomnessStream(ex["seed"])
    region = None if c["level"] is None else model.geometry.lower_set(c["level"])
    init = _initial(model, c["initial"], ex["seed"])
    ev = dynamics.simulate(model, region, init, c["horizon"], stream,
                           flip_on_change=c["flip_rule"] == "change")
    meta = results.metadata(model, ex["seed"], c["horizon"])
    ev.to_csv(run_dir / "events.csv", model)
    _prepend_meta(run_dir / "events.csv", meta)
    if region is not None:
        return _sim_record(ev), None
    first = np.full(model.n_sites, np.inf)
    for t, x, a, old in _flips(ev, c["flip_rule"] == "change"):
        if first[x] == np.inf:
            first[x] = t
    infl = dynamics.InfluenceRegion(first, (model.geometry.n,) * model.geometry.d, c["horizon"])
    infl.to_csv(run_dir / "influence.csv", model)
    _prepend_meta(run_dir / "influence.csv", meta)
    return _sim_record(ev), None


def _sim_record(ev):
    return {"quantity": "trajectory", "events": len(ev), "applied": int(ev.applied.sum()),
            "ties": ev.ties, "final_ones": int(ev.final[ev.region].sum()),
            "replay_matches": bool(np.array_equal(ev.replay(), ev.final))}


def _flips(ev, on_change):
    state = ev.initial.copy()
    for t, x, a, s in zip(ev.times, ev.sites, ev.applied, ev.coin):
        if a:
            old = state[x]
            state[x] = s
            if old != s or not on_change:
                yield float(t), int(x), a, old


def _prepend_meta(path, meta):
    text = Path(path).read_text()
    Path(path).write_text("# " + json.dumps(results._clean(meta), sort_keys=True) + "\n" + text)


def _cmd_exact_gap(cfg, run_dir):
    model = _model(cfg)
    gen = exact.build_generator(model, cap=cfg["execution"]["state_cap"])
    method = None if cfg["command"]["method"] == "auto" else cfg["command"]["method"]
    res, secs = exact.timed(exact.spectral_gap, gen, method)
    return res.to_record(model), secs


def _cmd_exact_mix(cfg, run_dir):
    model = _model(cfg)
    c = cfg["command"]
    res, secs = exact.timed(exact.mixing_time_exact, model, c["threshold"], c["mode"],
                            tol=c["bisection_tol"], cap=cfg["execution"]["state_cap"])
    results.write_csv(run_dir / "trace.csv", ["t", "worst_distance"], res.trace,
                      results.metadata(model, cfg["execution"]["seed"]))
    return res.to_record(model), secs


def _cmd_fk(cfg, run_dir):
    model = _model(cfg)
    c = cfg["command"]
    site = tuple(c["site"]) if c["site"] else model.geometry.coord(model.geometry.far_corner)
    method = None if c["method"] == "auto" else c["method"]
    res, secs = exact.timed(exact.feynman_kac_beta, model, site, c["test_times"],
                            cap=cfg["execution"]["state_cap"], method=method)
    results.write_csv(run_dir / "fk_checks.csv", ["t", "expectation", "exp_t_beta"], res.checks,
                      results.metadata(model, cfg["execution"]["seed"]))
    rec = res.to_record(model)
    rec["beta_le_minus_c0"] = bool(res.beta <= -res.c0 + 1e-9)
    return rec, secs


def _cmd_lsi(cfg, run_dir):
    model = _model(cfg)
    val, secs = exact.timed(exact.lsi_upper_bound, model, cfg["execution"]["state_cap"])
    rec = {"model": model.constraints.kind, "d": model.geometry.d, "n": model.geometry.n,
           "p": model.p, "quantity": "lsi_upper_bound", "value": val, "method": "indicator-test-function",
           "residual": 0.0, "scaled_by_n^d": val * model.n_sites}
    return rec, secs


def _cmd_schedule(cfg, run_dir):
    m, c = cfg["model"], cfg["command"]
    rate = c["c"]
    if rate is None:
        model = _model(cfg)
        gap = exact.spectral_gap(exact.build_generator(model, cap=cfg["execution"]["state_cap"])).gap
        rate = exact.analytic_c0(model.q, model.geometry.d, gap)
    s = experiments.mixing_schedule(m["n"], c["eps"], rate)
    rows = [(i + 1, s.deltas[i], s.times[i], s.budgets[i]) for i in range(len(s.deltas))]
    results.write_csv(run_dir / "schedule.csv", ["i", "delta", "t", "error_budget"], rows,
                      {"code_version": __version__, "n": m["n"], "eps": c["eps"], "c": rate})
    return {"quantity": "schedule", "n": m["n"], "eps": c["eps"], "c": rate,
            "final_time": s.final_time, "integral_bound": s.integral_bound,
            "within_integral_bound": s.within_integral_bound}, None


def _report(report, cfg, run_dir, model=None):
    meta = results.metadata(model, cfg["execution"]["seed"], cfg["command"].get("horizon"),
                            study=report.name)
    report.save(run_dir, meta)
    return report


def _cmd_decay(cfg, run_dir):
    model = _model(cfg)
    i = cfg["command"]["i"] if cfg["command"]["i"] is not None else model.geometry.d + 2
    rep = experiments.diagonal_decay_study(model, i, cfg["command"]["times"],
                                           cap=cfg["execution"]["state_cap"])
    return _report(rep, cfg, run_dir, model), None


def _cmd_tau(cfg, run_dir):
    m, c, ex = cfg["model"], cfg["command"], cfg["execution"]
    factory = lambda n: Model.build(m["d"], n, m["p"], m["family"], m.get("constraints"))
    rep = experiments.tau_star_scaling(factory, c["n_list"], ex["replicas"], ex["seed"], c["cap_factor"])
    return _report(rep, cfg, run_dir), None


def _cmd_validate(cfg, run_dir):
    model = _model(cfg)
    ex = cfg["execution"]
    rep = experiments.mc_exact_validation(model, cfg["command"]["time"], ex["replicas"], ex["seed"],
                                          cap=ex["state_cap"])
    return _report(rep, cfg, run_dir, model), None


def _cmd_shape(cfg, run_dir):
    model = _model(cfg)
    c, ex = cfg["command"], cfg["execution"]
    snaps = [t for t in c["snapshots"]]
    if max(snaps) > c["horizon"]:
        raise ValidationError("snapshots must not exceed the horizon")
    rep = experiments.shape_study(model, snaps, ex["replicas"], ex["seed"], c["flip_rule"] == "change")
    return _report(rep, cfg, run_dir, model), None


HANDLERS = {"simulate": _cmd_simulate, "exact-gap": _cmd_exact_gap, "exact-mix": _cmd_exact_mix,
            "fk-bound": _cmd_fk, "lsi-bound": _cmd_lsi, "schedule": _cmd_schedule,
            "diagonal-decay": _cmd_decay, "tau-scaling": _cmd_tau, "validate-mc": _cmd_validate,
            "shape": _cmd_shape}


def _plot_data(run_dir: Path, payload: dict) -> None:
    rows = []
    for j, pt in enumerate(payload.get("points", []) or [payload]):
        for key, val in pt.items():
            if isinstance(val, (int, float)) and not isinstance(val, bool):
                rows.append((j, key, val))
    results.write_csv(run_dir / "plot_long.csv", ["point", "variable", "value"], rows)


def execute(cfg: dict) -> tuple[Path, dict, int]:
    """Run a validated configuration; returns (run dir, payload, exit code)."""
    command = cfg["command"]["name"]
    ex = cfg["execution"]
    root = results.results_root(ex["output_dir"])
    cfg = copy.deepcopy(cfg)
    cfg["execution"]["output_dir"] = str(root)
    dynamics.set_threads(ex["threads"])
    run_dir = results.make_run_dir(root, command, ex["seed"])
    results.write_json(run_dir / "config.echo.json", cfg)
    out, secs = HANDLERS[command](cfg, run_dir)
    code = 0
    if isinstance(out, experiments.StudyReport):
        payload = out.to_dict()
        secs = out.runtime
        if out.passed is False:
            code = 3
    else:
        payload = out
        payload.pop("runtime_seconds", None)
        results.write_json(run_dir / "result.json", payload)
        results.write_json(run_dir / "runtime.json", {"runtime_seconds": secs})
    if ex["plot_data"]:
        _plot_data(run_dir, payload)
    results.write_manifest(run_dir)
    return run_dir, payload, code


def main(argv: Optional[list] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg, verbose = resolve_config(argv)
        logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        run_dir, payload, code = execute(cfg)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except StudyFailure as exc:
        print(f"kcm: study failed: {exc}", file=sys.stderr)
        return 3
    except (CapacityError, ConvergenceError, IrreducibilityError) as exc:
        print(f"kcm: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"kcm: invalid input: {exc}", file=sys.stderr)
        return 1
    except KCMError as exc:
        print(f"kcm: {exc}", file=sys.stderr)
        return 1
    summary = {"run_dir": str(run_dir), "exit_code": code}
    summary.update({k: v for k, v in payload.items() if k in ("quantity", "value", "passed", "fits",
                                                             "final_time")})
    print(results.dumps(summary), end="")
    if code == 3:
        print("kcm: study did not meet its pass criterion", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
