"""Command-line entry point ``klflow``.

Every subcommand reads an optional YAML or JSON config (nested sections
``domain``, ``kernel``, ``basis``, ``flow``, ``experiment``, ``output``);
command-line flags override config values. Exit codes: 0 on success, 1 on
invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import dissipation, flow, grf, spectral
from .geometry import BoxDomain
from .kernels import Kernel

SCHEMA_VERSION = 1

DEFAULTS = {
    "domain": {"dim": 1, "sides": [1.0], "nodes": 64, "rule": "gauss-legendre"},
    "kernel": {"type": "gaussian", "lambda": 0.2, "alpha": 1.0},
    "basis": {"file": None, "trunc": 40},
    "flow": {"u": None, "nu": 1e-4, "A": 1.0, "beta": 0.5, "re_star": 2000.0, "T": 1.0},
    "experiment": {"draws": 10_000, "seed": 0, "workers": None,
                   "nu_min": 1e-6, "nu_max": 1e-1, "nu_points": 11, "checks": list(flow.CHECKS)},
    "output": {"out": None, "csv": None},
}

# flag destination -> (section, key)
FLAG_KEYS = {
    "config_dim": ("domain", "dim"), "sides": ("domain", "sides"), "nodes": ("domain", "nodes"),
    "rule": ("domain", "rule"), "kernel": ("kernel", "type"), "lam": ("kernel", "lambda"),
    "alpha": ("kernel", "alpha"), "trunc": ("basis", "trunc"), "basis": ("basis", "file"),
    "u": ("flow", "u"), "nu": ("flow", "nu"), "A": ("flow", "A"), "beta": ("flow", "beta"),
    "re_star": ("flow", "re_star"), "T": ("flow", "T"), "draws": ("experiment", "draws"),
    "seed": ("experiment", "seed"), "workers": ("experiment", "workers"),
    "nu_min": ("experiment", "nu_min"), "nu_max": ("experiment", "nu_max"),
    "nu_points": ("experiment", "nu_points"), "checks": ("experiment", "checks"),
    "out": ("output", "out"), "csv": ("output", "csv"),
}


class UsageError(ValueError):
    """Bad command line or config."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _to_json(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_to_json)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except ValueError:
        # YAML 1.1 reads "1e-06" as a string, so JSON is tried first.
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise UsageError(f"malformed config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping of sections")
    unknown = set(data) - set(DEFAULTS) - {"command"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    for name, section in data.items():
        if name != "command" and not isinstance(section, dict):
            raise UsageError(f"config section {name!r} must be a mapping")
    return data


def resolve(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        for name, section in load_config(args.config).items():
            if name == "command":
                continue
            unknown = set(section) - set(cfg[name])
            if unknown:
                raise UsageError(f"unknown keys {sorted(unknown)} in config section {name!r}")
            cfg[name].update(section)
    for dest, (section, key) in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = value
    dom = cfg["domain"]
    sides = dom["sides"]
    dom["sides"] = [float(s) for s in (sides if isinstance(sides, (list, tuple)) else [sides])]
    if len(dom["sides"]) == 1 and int(dom["dim"]) > 1:
        dom["sides"] = dom["sides"] * int(dom["dim"])
    return cfg


def build_domain(cfg: dict) -> BoxDomain:
    d = cfg["domain"]
    return BoxDomain(int(d["dim"]), d["sides"], int(d["nodes"]), d["rule"])


def build_basis(cfg: dict) -> spectral.KLBasis:
    path = cfg["basis"]["file"]
    if path:
        try:
            basis = spectral.load_basis(path)
        except OSError as exc:
            raise UsageError(f"cannot read basis {path}: {exc.strerror or exc}") from exc
        return basis
    domain = build_domain(cfg)
    k = cfg["kernel"]
    n = int(cfg["basis"]["trunc"])
    if k["type"] == "dirichlet":
        return spectral.dirichlet_basis(domain, n)
    kernel = Kernel(k["type"], lam=float(k["lambda"]), alpha=float(k["alpha"]))
    return spectral.solve_nystrom(domain, kernel, n)


def build_flow(cfg: dict, basis: spectral.KLBasis) -> flow.FlowConfig:
    f = cfg["flow"]
    dim = basis.domain.dim
    u = f["u"] if f["u"] is not None else [1.0 / np.sqrt(dim)] * dim
    u = [float(c) for c in (u if isinstance(u, (list, tuple)) else [u])]
    f["u"] = u
    return flow.FlowConfig.for_basis(basis, u, float(f["nu"]), A=float(f["A"]),
                                     beta=float(f["beta"]), re_star=float(f["re_star"]), T=float(f["T"]))


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from exc


def _emit(report: dict, cfg: dict, args) -> None:
    text = dumps(report) + "\n"
    out = cfg["output"]["out"]
    if out:
        _write(out, text)
    else:
        sys.stdout.write(text)
    if getattr(args, "emit_config", None):
        _write(args.emit_config, dumps({"command": args.command, **cfg}) + "\n")


def _report(command: str, cfg: dict, result: dict) -> dict:
    # Output paths and the worker count do not affect results, so they are
    # left out to keep re-runs byte-identical.
    embedded = {k: copy.deepcopy(v) for k, v in cfg.items() if k != "output"}
    embedded["experiment"].pop("workers", None)
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": embedded,
            "seed": cfg["experiment"]["seed"], "result": result}


def _check_pairing(cfg: dict, basis: spectral.KLBasis, args) -> None:
    """Reject an explicit domain on the command line that disagrees with the basis file."""
    if not cfg["basis"]["file"]:
        return
    given = {k: getattr(args, dest, None) for dest, (s, k) in FLAG_KEYS.items() if s == "domain"}
    d = basis.domain
    actual = {"dim": d.dim, "sides": list(d.side_lengths), "nodes": d.nodes_per_axis, "rule": d.rule}
    for key, value in given.items():
        if value is None:
            continue
        if key == "sides":
            value = [float(s) for s in value]
            if len(value) == 1:
                value = value * d.dim
        if value != actual[key]:
            raise UsageError(f"basis file has domain {key}={actual[key]} but {value} was requested")
    cfg["domain"].update(actual)


def cmd_klbasis(args, cfg):
    basis = build_basis(cfg)
    report = _report("klbasis", cfg, spectral.quality_report(basis))
    out = cfg["output"]["out"]
    if out:
        spectral.save_basis(basis, out)
    sys.stdout.write(dumps(report) + "\n")
    if args.emit_config:
        _write(args.emit_config, dumps({"command": "klbasis", **cfg}) + "\n")
    return 0


def cmd_spectral_check(args, cfg):
    basis = build_basis(cfg)
    _check_pairing(cfg, basis, args)
    q = spectral.quality_report(basis)
    ints = spectral.basis_integrals(basis)
    result = {"quality": q,
              "max_abs_f_grad_f": float(np.max(np.abs(ints["H_a"]))),
              "min_gradient_energy": float(np.min(ints["H_grad"])),
              "variance_integral": grf.variance_integral(basis)}
    _emit(_report("spectral-check", cfg, result), cfg, args)
    return 0


def cmd_grf_verify(args, cfg):
    basis = build_basis(cfg)
    _check_pairing(cfg, basis, args)
    e = cfg["experiment"]
    result = grf.verify(basis, draws=int(e["draws"]), seed=int(e["seed"]), workers=e["workers"])
    _emit(_report("grf-verify", cfg, result), cfg, args)
    return 0


def cmd_flow_verify(args, cfg):
    basis = build_basis(cfg)
    _check_pairing(cfg, basis, args)
    fc = build_flow(cfg, basis)
    e = cfg["experiment"]
    checks = e["checks"]
    if isinstance(checks, str):
        checks = [c.strip() for c in checks.split(",") if c.strip()]
    e["checks"] = list(checks)
    result = flow.verify(fc, basis, draws=int(e["draws"]), seed=int(e["seed"]),
                         checks=checks, workers=e["workers"])
    _emit(_report("flow-verify", cfg, result), cfg, args)
    return 0


def cmd_dissipation(args, cfg):
    basis = build_basis(cfg)
    _check_pairing(cfg, basis, args)
    fc = build_flow(cfg, basis)
    e = cfg["experiment"]
    grid = dissipation.nu_grid(float(e["nu_min"]), float(e["nu_max"]), int(e["nu_points"]))
    rep = dissipation.sweep(fc, basis, grid, draws=int(e["draws"]), seed=int(e["seed"]),
                            workers=e["workers"])
    csv_path = cfg["output"]["csv"]
    if csv_path:
        try:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["nu", "RE", "D_mc", "D_se", "D_analytic"])
                for row in rep.rows():
                    w.writerow([repr(float(v)) for v in row])
        except OSError as exc:
            raise UsageError(f"cannot write {csv_path}: {exc.strerror}") from exc
    _emit(_report("dissipation", cfg, rep.to_dict()), cfg, args)
    return 0


def _list(type_):
    def parse(text):
        try:
            return [type_(t) for t in text.replace(",", " ").split()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="klflow", description="KL random fields and weighted-flow dissipation experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, seeded=True):
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--emit-config", dest="emit_config", help="write the resolved config here")
        p.add_argument("--out", "--report", dest="out", help="output path for the JSON report (basis file for klbasis)")
        g = p.add_argument_group("basis")
        g.add_argument("--basis", help="saved basis file (overrides domain and kernel)")
        g.add_argument("--dim", dest="config_dim", type=int)
        g.add_argument("--sides", type=_list(float))
        g.add_argument("--nodes", type=int)
        g.add_argument("--rule", choices=["gauss-legendre", "trapezoid"])
        g.add_argument("--kernel", choices=["gaussian", "rq", "dirichlet"])
        g.add_argument("--lambda", dest="lam", type=float)
        g.add_argument("--alpha", type=float)
        g.add_argument("--trunc", type=int)
        if seeded:
            p.add_argument("--draws", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--workers", type=int)

    def flow_flags(p):
        p.add_argument("--u", type=_list(float), help="base velocity components")
        p.add_argument("--nu", type=float)
        p.add_argument("--A", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--re-star", dest="re_star", type=float)
        p.add_argument("--T", type=float)

    p = sub.add_parser("klbasis", help="solve for a KL basis and print diagnostics")
    common(p, seeded=False)
    p.set_defaults(func=cmd_klbasis)

    p = sub.add_parser("spectral-check", help="quadrature identities of a basis")
    common(p, seeded=False)
    p.set_defaults(func=cmd_spectral_check)

    p = sub.add_parser("grf-verify", help="Monte Carlo checks of the scalar field")
    common(p)
    p.set_defaults(func=cmd_grf_verify)

    p = sub.add_parser("flow-verify", help="Monte Carlo checks of the weighted flow")
    common(p)
    flow_flags(p)
    p.add_argument("--checks", type=_list(str))
    p.set_defaults(func=cmd_flow_verify)

    p = sub.add_parser("dissipation", help="viscosity sweep of the dissipation rate")
    common(p)
    flow_flags(p)
    p.add_argument("--nu-min", dest="nu_min", type=float)
    p.add_argument("--nu-max", dest="nu_max", type=float)
    p.add_argument("--nu-points", dest="nu_points", type=int)
    p.add_argument("--csv", help="write the dissipation curve as CSV")
    p.set_defaults(func=cmd_dissipation)
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        if "checks" in cfg["experiment"] and args.command != "flow-verify":
            cfg["experiment"].pop("checks")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spectral.TruncationWarning)
            return args.func(args, cfg)
    except (spectral.NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(2, "numerical", str(exc))
    except (UsageError, ValueError, TypeError, KeyError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc}"
        return _fail(1, "invalid-input", msg)


if __name__ == "__main__":
    sys.exit(main())
