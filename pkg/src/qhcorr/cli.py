"""``qhcorr`` command line: verify, explain, list-checks."""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import checks
from .models import BUILDERS, ParameterError, build

SCHEMA_VERSION = 1
MODEL_NAMES = tuple(BUILDERS) + ("hp1", "hp2")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    c_values: list | None = None
    A: float = 1.0
    samples: int = 50
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    suites: list = field(default_factory=lambda: list(checks.SUITES))
    out: str | None = None


def _number(v, what):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{what} must be finite")
    return float(v)


def load_config(path) -> RunConfig:
    try:
        data = tomllib.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"malformed config: {e}") from None
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    unknown = set(data) - {"model", "run", "tolerances"}
    if unknown:
        raise ConfigError(f"unknown tables {sorted(unknown)}")
    model = data.get("model")
    if not isinstance(model, dict) or "name" not in model:
        raise ConfigError("[model] table with a name is required")
    if set(model) - {"name", "params"}:
        raise ConfigError(f"unknown [model] keys {sorted(set(model) - {'name', 'params'})}")
    name = model["name"]
    if name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[model.params] must be a table")

    run = data.get("run", {})
    extra = set(run) - {"c_values", "A", "samples", "seed", "suites"}
    if extra:
        raise ConfigError(f"unknown [run] keys {sorted(extra)}")
    cfg = RunConfig(name, dict(params))
    if "c_values" in run:
        cs = run["c_values"]
        if not isinstance(cs, list) or not cs:
            raise ConfigError("c_values must be a non-empty list")
        cfg.c_values = [_number(c, "c value") for c in cs]
        if any(c == 0 for c in cfg.c_values):
            raise ConfigError("c values must be nonzero")
    if "A" in run:
        cfg.A = _number(run["A"], "A")
        if cfg.A == 0:
            raise ConfigError("A must be nonzero")
    if "samples" in run:
        s = run["samples"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 1:
            raise ConfigError("samples must be an integer >= 1")
        cfg.samples = s
    if "seed" in run:
        if isinstance(run["seed"], bool) or not isinstance(run["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = run["seed"]
    if "suites" in run:
        cfg.suites = _suites(run["suites"])

    tol = data.get("tolerances", {})
    for k, v in tol.items():
        if k not in checks.REGISTRY:
            raise ConfigError(f"tolerance for unknown check {k!r}")
        if _number(v, f"tolerance {k}") <= 0:
            raise ConfigError(f"tolerance {k} must be > 0")
        cfg.tolerances[k] = float(v)
    return cfg


def _suites(names):
    if not isinstance(names, list) or not names:
        raise ConfigError("suites must be a non-empty list")
    bad = [s for s in names if s not in checks.SUITES]
    if bad:
        raise ConfigError(f"unknown suites {bad}; choose from {', '.join(checks.SUITES)}")
    return [s for s in checks.SUITES if s in names]


# ------------------------------------------------------------------ report

def _dump(v, indent=0) -> str:
    """JSON with floats at 17 significant digits; non-finite floats become null."""
    pad = "  " * (indent + 1)
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v if math.isfinite(v) else "null"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{pad}{_dump(str(k))}: {_dump(x, indent + 1)}" for k, x in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        return "[\n" + ",\n".join(pad + _dump(x, indent + 1) for x in v) + "\n" + "  " * indent + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _version():
    try:
        return metadata.version("qhcorr")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def build_report(cfg: RunConfig, entries, timestamp=True) -> dict:
    suites: dict = {}
    for e in entries:
        suites.setdefault(e.suite, []).append({
            "check": e.check, "anchor": e.anchor, "model": e.model, "c": e.c,
            "max_residual": e.max_residual, "tolerance": e.tolerance,
            "status": e.status, "pass": e.passed, "detail": e.detail,
        })
    env = {"seed": cfg.seed, "engine_mode": "forward-mode autodiff; central differences for slice derivatives",
           "version": _version(), "samples": cfg.samples, "A": cfg.A}
    if timestamp:
        env["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    n_pass = sum(e.passed for e in entries)
    return {"schema_version": SCHEMA_VERSION, "environment": env, "suites": suites,
            "summary": {"pass": n_pass, "fail": len(entries) - n_pass,
                        "expected_fail": sum(e.status == checks.EXPECTED_FAIL for e in entries),
                        "not_applicable": sum(e.status == checks.NOT_APPLICABLE for e in entries)}}


def run(cfg: RunConfig):
    """Entries for the configured grid; model build errors become a failing plumbing entry."""
    try:
        model = build(cfg.model, **cfg.model_params)
    except (ParameterError, TypeError, ValueError) as e:
        return [checks.Entry("structure", "plumbing.model_build", cfg.model, None, "plumbing",
                             float("nan"), 0.0, checks.ERROR, str(e))]
    cs = cfg.c_values if cfg.c_values is not None else [model.c_default, 1.0, -1.0]
    return checks.run_suites(model, cs, cfg.suites, cfg.samples, cfg.seed, cfg.A, cfg.tolerances)


def _summary_text(entries) -> str:
    lines = []
    for e in entries:
        c = "" if e.c is None else f" c={e.c:g}"
        res = "n/a" if not math.isfinite(e.max_residual) else f"{e.max_residual:.3g}"
        lines.append(f"{e.status.upper():14s} {e.check:34s} {e.model}{c}  residual {res}"
                     f"  tol {e.tolerance:g}" + (f"  ({e.detail})" if e.detail else ""))
    n_pass = sum(e.passed for e in entries)
    lines.append(f"{n_pass} passed, {len(entries) - n_pass} failed")
    return "\n".join(lines)


# ------------------------------------------------------------------ entry point

def _parser():
    p = argparse.ArgumentParser(prog="qhcorr", description="Numerical checks of the Q/H correspondence.")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run check suites from a TOML config")
    v.add_argument("--config", required=True)
    v.add_argument("--suite", action="append", dest="suites")
    v.add_argument("--out")
    v.add_argument("--seed", type=int)
    e = sub.add_parser("explain", help="formula and tolerance of a check")
    e.add_argument("check_id")
    sub.add_parser("list-checks", help="all check ids")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-checks":
        for c in checks.CHECKS:
            print(f"{c.id:36s} {c.suite}")
        return 0
    if args.command == "explain":
        try:
            print(checks.explain(args.check_id))
        except KeyError as err:
            print(f"error: {err.args[0]}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = load_config(args.config)
        if args.suites:
            cfg.suites = _suites(args.suites)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    entries = run(cfg)
    report = build_report(cfg, entries)
    if args.out:
        Path(args.out).write_text(_dump(report) + "\n")
    print(_summary_text(entries))
    return 0 if all(e.passed for e in entries) else 1


if __name__ == "__main__":
    sys.exit(main())
