"""Command line entry point: ``carnotgeo <subcommand> [flags]``.

Exit codes: 0 success, 1 a failed margin/residual or an invalid algebra,
2 a configuration or parse error, 3 an infrastructure error (a check or
solver could not run).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import checks as ck
from .algebra import MATRIX_NORM, CarnotGroup, HomogeneousNormSpec, group_from_json, tensor_from_json, validate_algebra
from .errors import CarnotGeoError, ExprSyntaxError, InvalidAlgebra, InvalidStratification
from .operators import assemble, eigensolve
from .surface import EPS_CHAR, Surface, integrate_H, spec_from_json

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_INFRA = 0, 1, 2, 3

_NUM_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

GROUP_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "builtin": {"type": "string"},
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
                "h": {"type": "integer", "minimum": 1},
                "base": {"type": "object"},
                "matrices": {"type": "array"},
            },
            "required": ["builtin"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "signature": {
                    "type": "object",
                    "properties": {
                        "h": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                        "n": {"type": "integer"},
                    },
                    "required": ["h"],
                    "additionalProperties": False,
                },
                "constants": {"type": "array", "items": {"type": "array", "minItems": 4, "maxItems": 4}},
            },
            "required": ["signature"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"file": {"type": "string"}},
            "required": ["file"],
            "additionalProperties": False,
        },
    ]
}

SURFACE_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["graph", "levelset"]},
        "expr": {"type": "string"},
        "vertical": {"type": "string", "pattern": "^x[0-9]+$"},
        "domain": {"type": "array", "items": _NUM_PAIR},
        "region": {
            "type": "object",
            "properties": {
                "center": {"type": "array", "items": {"type": "number"}},
                "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "powers": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
            "required": ["center", "radii", "powers"],
            "additionalProperties": False,
        },
        "box": {"type": "array", "items": _NUM_PAIR},
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 2}},
    },
    "required": ["kind", "expr"],
    "additionalProperties": False,
}

CHECK_SCHEMA = {
    "oneOf": [
        {"enum": sorted(ck.CHECKS)},
        {
            "type": "object",
            "properties": {
                "name": {"enum": sorted(ck.CHECKS)},
                "params": {"type": "object"},
                "tolerance": {"type": "number", "minimum": 0},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "group": GROUP_SCHEMA,
        "norm": {
            "type": "object",
            "properties": {"kind": {"enum": ["koranyi_step2", "generic_power"]}, "constant": {"type": "number"}},
            "additionalProperties": False,
        },
        "surface": SURFACE_SCHEMA,
        "grid": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "eps_char": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "checks": {"type": "array", "items": CHECK_SCHEMA},
        "problem": {"enum": ["closed", "dirichlet", "neumann"]},
        "count": {"type": "integer", "minimum": 1},
        "degree": {"type": "integer", "minimum": 1},
        "out": {"type": "string"},
    },
    "required": ["group"],
    "additionalProperties": False,
}

DEFAULT_CONFIG = {
    "group": {"builtin": "heisenberg", "n": 1},
    "norm": {"kind": "koranyi_step2", "constant": 16.0},
    "surface": {
        "kind": "graph",
        "vertical": "x1",
        "expr": "0",
        "region": {"center": [0.0, 0.0], "radii": [1.0, 0.25], "powers": [4.0, 2.0]},
        "grid": [64, 64],
    },
    "eps_char": EPS_CHAR,
    "seed": 0,
    "checks": [
        "div_identities",
        "minkowski",
        {"name": "coarea", "params": {"phi": "x2"}},
        "linear_isoperimetric",
        "cheeger_chain",
        {"name": "poincare", "params": {"center": [0.0, 0.0, 0.0]}},
    ],
    "problem": "dirichlet",
    "count": 4,
    "degree": 8,
}


class ConfigError(Exception):
    """Configuration could not be read or failed schema validation."""


# ---------------------------------------------------------------------------
# Configuration handling
# ---------------------------------------------------------------------------
def load_json(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def validate_config(cfg: dict) -> dict:
    """Schema-check ``cfg`` and fill defaults.  Unknown keys are rejected."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config invalid at '{path}': {exc.message}") from exc
    out = {k: v for k, v in DEFAULT_CONFIG.items() if k not in ("group", "surface", "checks")}
    out.update(cfg)
    return out


def _resolve_group(obj: dict, base: Path | None) -> CarnotGroup:
    if "file" in obj:
        path = Path(obj["file"])
        if base is not None and not path.is_absolute():
            path = base / path
        return group_from_json(load_json(path))
    return group_from_json(obj)


def _parse_grid(text: str | None):
    if text is None:
        return None
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--grid expects N or N,N, got {text!r}") from exc
    if not vals or min(vals) < 2:
        raise ConfigError("--grid entries must be at least 2")
    return vals


class Run:
    """A validated configuration with command-line overrides applied."""

    def __init__(self, args):
        base = None
        if args.config:
            cfg = load_json(args.config)
            base = Path(args.config).resolve().parent
        else:
            cfg = json.loads(json.dumps(DEFAULT_CONFIG))
        self.cfg = validate_config(cfg)
        if args.eps_char is not None:
            self.cfg["eps_char"] = float(args.eps_char)
        if args.seed is not None:
            self.cfg["seed"] = int(args.seed)
        self.group = _resolve_group(self.cfg["group"], base)
        self.norm = HomogeneousNormSpec(**self.cfg.get("norm", {}))
        grid = _parse_grid(args.grid)
        self.surface = None
        if "surface" in self.cfg:
            try:
                spec = spec_from_json(self.cfg["surface"], self.group.n)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"surface definition invalid: {exc}") from exc
            m = self.group.n - 1
            if grid is None and "grid" in self.cfg:
                grid = tuple(self.cfg["grid"])
            if grid is not None:
                grid = grid * m if len(grid) == 1 else grid
                if len(grid) != m:
                    raise ConfigError(f"grid needs 1 or {m} entries")
                spec = spec.with_grid(grid)
            self.surface = Surface(self.group, spec)
        self.grid = tuple(self.surface.spec.grid) if self.surface is not None else grid
        self.out = args.out or self.cfg.get("out")

    @property
    def eps_char(self) -> float:
        return float(self.cfg["eps_char"])

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def need_surface(self) -> Surface:
        if self.surface is None:
            raise ConfigError("this subcommand needs a 'surface' entry in the config")
        return self.surface


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(ck._clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------
def cmd_validate_group(args) -> int:
    path = args.config or args.path
    if path is None:
        obj = DEFAULT_CONFIG["group"]
    else:
        obj = load_json(path)
        if isinstance(obj, dict) and "group" in obj and "signature" not in obj and "builtin" not in obj:
            obj = obj["group"]
    try:
        jsonschema.validate(obj, GROUP_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"group definition invalid: {exc.message}") from exc
    try:
        if "signature" in obj:
            report = validate_algebra(tensor_from_json(obj))
            payload = {"valid": report.valid, "failures": report.failures}
        else:
            g = _resolve_group(obj, Path(path).resolve().parent if path else None)
            payload = {"valid": True, "failures": [], "group": g.name}
    except (InvalidAlgebra, InvalidStratification) as exc:
        failures = getattr(getattr(exc, "report", None), "failures", None) or [str(exc)]
        payload = {"valid": False, "failures": failures}
    payload["matrix_norm"] = MATRIX_NORM
    _emit(_dumps(payload), args.out)
    return EXIT_OK if payload["valid"] else EXIT_FAIL


def cmd_describe_group(args) -> int:
    run = Run(args)
    desc = run.group.describe()
    desc["norm"] = {"kind": run.norm.kind, "constant": run.norm.constant}
    _emit(_dumps(desc), run.out)
    return EXIT_OK


def cmd_sample_surface(args) -> int:
    run = Run(args)
    surface = run.need_surface()
    smp = surface.sample(None, run.eps_char)
    payload = {
        "group": run.group.name,
        "surface": surface.digest(),
        "grid": list(surface.spec.grid),
        "eps_char": run.eps_char,
        "matrix_norm": MATRIX_NORM,
        "nodes": len(smp),
        "characteristic_nodes": int(np.count_nonzero(smp.char)),
        "sigma_H": integrate_H(smp, 1.0),
        "sigma_R": float(np.sum(smp.wR)),
        "max_abs_HH": float(np.max(np.abs(smp.HH[~smp.char]))) if np.any(~smp.char) else 0.0,
        "points": smp.points,
        "weights_H": smp.wH,
        "HH": np.where(smp.char, np.nan, smp.HH),
    }
    _emit(_dumps(payload), run.out)
    return EXIT_OK


def _check_selection(run: Run):
    sel = []
    tolerances = {}
    for item in run.cfg.get("checks", DEFAULT_CONFIG["checks"]):
        if isinstance(item, str):
            item = {"name": item}
        params = dict(item.get("params", {}))
        if "tolerance" in item:
            params["tol"] = float(item["tolerance"])
        if item["name"] == "poincare" and "seed" not in params:
            params["seed"] = run.seed
        if item["name"] in ("monotonicity", "poincare", "poincare_char", "caccioppoli") and "norm" not in params:
            params["norm"] = run.norm
        sel.append((item["name"], params))
        tolerances[item["name"]] = params.get("tol")
    return sel


def _summary_table(reports) -> str:
    lines = [f"{'check':<22} {'kind':<11} {'value':>14} {'tolerance':>11}  result"]
    for r in reports:
        lines.append(
            f"{r.name:<22} {r.kind:<11} {r.value:>14.6e} {r.tolerance:>11.2e}  {'pass' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines) + "\n"


def _plot_dir(out: str | None) -> Path:
    return Path(out).resolve().parent if out else Path.cwd()


def _write_plots(reports, out: str | None) -> list[str]:
    """Two-column text files for every numeric trace series."""
    base = _plot_dir(out)
    stem = Path(out).stem if out else "carnotgeo"
    written = []
    for r in reports:
        if not r.trace:
            continue
        keys = [k for k, v in r.trace[0].items() if isinstance(v, (int, float, np.floating)) and not isinstance(v, bool)]
        xkey = next((k for k in ("radius", "eps", "bump") if k in keys), None)
        for ykey in keys:
            if ykey == xkey:
                continue
            path = base / f"{stem}_{r.name}_{ykey}.txt"
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"# {xkey or 'level'} {ykey}\n")
                for i, t in enumerate(r.trace):
                    x = t[xkey] if xkey else (t["grid"][0] if "grid" in t else i)
                    fh.write(f"{float(x):.12g} {float(t.get(ykey, np.nan)):.12g}\n")
            written.append(str(path))
    return written


def cmd_run_checks(args) -> int:
    run = Run(args)
    surface = run.need_surface()
    reports = ck.run_checks(surface, _check_selection(run), None, run.eps_char)
    _emit(ck.reports_to_json(reports), run.out)
    sys.stderr.write(_summary_table(reports))
    if args.emit_plots:
        _write_plots(reports, run.out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_eigen(args) -> int:
    run = Run(args)
    surface = run.need_surface()
    problem = run.cfg.get("problem", "dirichlet")
    if surface.closed and problem != "closed":
        raise ConfigError("closed levelset surfaces use problem 'closed'")
    count = int(run.cfg.get("count", 4))
    degree = int(run.cfg.get("degree", 8))
    fine = tuple(surface.spec.grid)
    levels = [tuple(max(4, v // 2) for v in fine), fine] if args.refine else [fine]
    results = []
    for lvl in levels:
        op = assemble(surface, lvl, problem, degree=degree, eps_char=run.eps_char)
        results.append(eigensolve(op, count))
    payload = results[-1].to_json()
    payload.update({"grid": list(fine), "eps_char": run.eps_char, "matrix_norm": MATRIX_NORM, "surface": surface.digest()})
    if args.refine:
        coarse, finer = results
        k = min(len(coarse.eigenvalues), len(finer.eigenvalues))
        payload["coarse_grid"] = list(levels[0])
        payload["coarse_eigenvalues"] = [float(v) for v in coarse.eigenvalues[:k]]
        payload["relative_deltas"] = [
            float(abs(a - b) / abs(b)) if abs(b) > 1e-12 else float(abs(a - b))
            for a, b in zip(coarse.eigenvalues[:k], finer.eigenvalues[:k])
        ]
    _emit(_dumps(payload), run.out)
    return EXIT_OK


COMMANDS = {
    "validate-group": cmd_validate_group,
    "describe-group": cmd_describe_group,
    "sample-surface": cmd_sample_surface,
    "run-checks": cmd_run_checks,
    "eigen": cmd_eigen,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carnotgeo", description="Horizontal geometry of hypersurfaces in Carnot groups.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "validate-group":
            p.add_argument("path", nargs="?", help="group JSON (same as --config)")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--grid", help="grid resolution N or N,N")
        p.add_argument("--eps-char", type=float, dest="eps_char", help="characteristic threshold on |P_H nu|")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--emit-plots", action="store_true", dest="emit_plots", help="write two-column trace files")
        p.add_argument("--refine", action="store_true", help="eigen: also solve on the half grid and report deltas")
    return parser


def _thread_limit():
    value = os.environ.get("CARNOTGEO_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except (ConfigError, ExprSyntaxError, jsonschema.ValidationError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PARSE
    except (CarnotGeoError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_INFRA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
