"""Command line frontend: ``certsynth synth|verify|learn|bench|simulate``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import yaml

from . import expr as E
from .certificates import CandidateExpressions
from .cegis import CegisConfig, CegisReport, ConfigError, Status, learn_only, synthesise, verify_only
from .config import load
from .models import close_loop_with_expressions, simulate, trajectory_csv


def load_certificate(path: str | Path, cfg: CegisConfig) -> CandidateExpressions:
    """Read a certificate file.

    Accepts either a plain mapping ``{V: ..., W: ..., controller: [...], levels: {...}}``
    (YAML or JSON) or a report written by ``synth``.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such certificate file: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"certificate file: invalid YAML/JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("certificate file must hold a mapping")
    levels = raw.get("levels") or {}
    controller = raw.get("controller")
    if isinstance(raw.get("certificate"), dict):  # a synth report
        raw = raw["certificate"]
    if "V" not in raw:
        raise ConfigError("certificate file: missing V")
    n, m = cfg.model.n_vars, cfg.model.n_inputs
    try:
        V = E.parse(str(raw["V"]), n_vars=n, n_inputs=0)
        W = E.parse(str(raw["W"]), n_vars=n, n_inputs=0) if raw.get("W") is not None else None
        ctrl = None
        if controller is not None:
            ctrl = tuple(E.parse(str(c), n_vars=n, n_inputs=0) for c in controller)
            if len(ctrl) != m:
                raise ConfigError(f"certificate file: {len(ctrl)} controller outputs, model has {m} inputs")
    except E.ExprError as exc:
        raise ConfigError(f"certificate file: {exc}") from None
    if m and ctrl is None:
        raise ConfigError("certificate file: the model has control inputs but no controller is given")
    return CandidateExpressions(V, W, {str(k): float(v) for k, v in levels.items()}, ctrl)


def _emit(report: CegisReport, out: str | None) -> int:
    text = report.to_json()
    if out:
        Path(out).write_text(text + "\n")
        print(json.dumps({"status": report.status.value, "iterations": report.iterations,
                          "certificate": report.certificate, "report": out}))
    else:
        print(text)
    return 1 if report.status is Status.ERROR else 0


def _configure(args) -> CegisConfig:
    cfg = load(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "log_dir", None):
        changes["log_dir"] = args.log_dir
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_synth(args) -> int:
    return _emit(synthesise(_configure(args)), args.out)


def cmd_verify(args) -> int:
    cfg = _configure(args)
    return _emit(verify_only(cfg, load_certificate(args.certificate, cfg)), args.out)


def cmd_learn(args) -> int:
    return _emit(learn_only(_configure(args)), args.out)


def cmd_bench(args) -> int:
    from .bench import format_table, run_suite

    results = run_suite(args.suite, repeats=args.repeats, only=args.only)
    print(format_table(results))
    if args.out:
        Path(args.out).write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n")
    return 0


def cmd_simulate(args) -> int:
    cfg = load(args.config)
    model = cfg.model
    if not model.autonomous:
        if not args.certificate:
            raise ConfigError("simulate: the model has control inputs; pass --certificate with a controller")
        model = close_loop_with_expressions(model, load_certificate(args.certificate, cfg).controller)
    rows = simulate(model, args.x0, args.T, args.dt)
    text = trajectory_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="certsynth", description="Neural certificate and controller synthesis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="run the full learn/verify loop")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="write the JSON report here")
    s.add_argument("--log-dir", help="keep per-iteration solver scripts and outputs")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("verify", help="verify a given certificate, no learning")
    v.add_argument("config")
    v.add_argument("--certificate", required=True, help="YAML/JSON with V (W, controller, levels) or a synth report")
    v.add_argument("--out")
    v.add_argument("--log-dir")
    v.set_defaults(func=cmd_verify)

    ln = sub.add_parser("learn", help="train once, no verification")
    ln.add_argument("config")
    ln.add_argument("--seed", type=int)
    ln.add_argument("--out")
    ln.set_defaults(func=cmd_learn)

    b = sub.add_parser("bench", help="run a benchmark suite directory")
    b.add_argument("suite")
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--only", action="append", help="restrict to the named entries")
    b.add_argument("--out", help="write raw results JSON here")
    b.set_defaults(func=cmd_bench)

    sm = sub.add_parser("simulate", help="export a trajectory as CSV")
    sm.add_argument("config")
    sm.add_argument("--x0", type=float, nargs="+", required=True)
    sm.add_argument("--T", type=float, required=True, help="horizon (time units, or steps if discrete)")
    sm.add_argument("--dt", type=float, default=0.01)
    sm.add_argument("--certificate", help="report or file providing the controller")
    sm.add_argument("--out")
    sm.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"status": Status.ERROR.value, "message": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
