"""Command line front end.

    tcval <command> --config <file> [--out <prefix>] [--threads N] [--timing]

Commands: ``price``, ``converge``, ``davis``, ``calibrate``. Exit status is 0
on success, 2 when the configuration is invalid (the message names the
offending field), 3 when an engine rejects the inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import time
from typing import Any

import jsonschema
import numpy as np

from .closedform import closed_form_price
from .errors import ConfigurationError, TcvalError
from .harness import (
    Case,
    Reference,
    coc_equals_stddev_limit,
    converge_lattice_to_limit,
    davis_is_marginal_price,
    fmt17,
    reports_to_csv,
)
from .lattice import TreeKind, backward_induct, calibrate_quadrinomial
from .model import build_grid, make_model, make_payoff
from .pde import SolverConfig, solve_davis, solve_principle
from .principles import (
    PrincipleKind,
    PrincipleSpec,
    exponential_distortion,
    linear_distortion,
    power_distortion,
)

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE = 0, 2, 3
COMMANDS = ("price", "converge", "davis", "calibrate")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

_PAYOFF = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "params"],
    "properties": {
        "kind": {"enum": ["Linear", "Constant", "Call", "Put", "Power", "PiecewiseLinear"]},
        "params": {"type": "array", "items": _NUM, "minItems": 1},
        "monotonicity": {"enum": ["Increasing", "Decreasing", "NonMonotone"]},
        "positive": {"type": "boolean"},
    },
}

SCHEMA: dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "params"],
            "properties": {
                "kind": {"enum": ["ABM", "OU", "GBM"]},
                "params": {"type": "object", "additionalProperties": _NUM},
            },
        },
        "payoff": _PAYOFF,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["T", "n_time", "n_space"],
            "properties": {
                "t0": _NUM, "T": _NUM, "n_time": _POS_INT, "n_space": {"type": "integer", "minimum": 3},
                "n_stddevs": {"type": "number", "exclusiveMinimum": 0}, "y_center": _NUM,
            },
        },
        "principle": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": [k.value for k in PrincipleKind]},
                "alpha": _NUM, "gamma": _NUM, "X0": _NUM, "r": _NUM,
                "beta": _NUM, "delta": _NUM, "q": _NUM,
                "v": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["exponential", "power", "linear"]},
                        "alpha": _NUM, "gamma": _NUM,
                    },
                },
            },
        },
        "engine": {"enum": ["lattice", "pde", "closedform", "all"]},
        "tree": {"enum": [k.value for k in TreeKind]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"theta": _NUM, "max_cfl": _NUM, "rannacher_steps": {"type": "integer", "minimum": 0}},
        },
        "converge": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt_sequence"],
            "properties": {
                "dt_sequence": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "reference": {"enum": [r.value for r in Reference]},
                "nodes_per_step": _POS_INT,
                "case_id": {"type": "string"},
            },
        },
        "davis": {
            "type": "object",
            "additionalProperties": False,
            "required": ["perturbation", "eps"],
            "properties": {
                "perturbation": _PAYOFF,
                "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            },
        },
        "q": _NUM,
        "digits": {"type": "integer", "minimum": 1, "maximum": 17},
        "output": {"type": "string", "minLength": 1},
    },
    "allOf": [
        {"if": {"properties": {"command": {"const": "price"}}},
         "then": {"required": ["model", "payoff", "grid", "principle", "engine"]}},
        {"if": {"properties": {"command": {"const": "converge"}}},
         "then": {"required": ["model", "payoff", "grid", "principle", "converge"]}},
        {"if": {"properties": {"command": {"const": "davis"}}},
         "then": {"required": ["model", "payoff", "grid", "principle", "davis"]}},
        {"if": {"properties": {"command": {"const": "calibrate"}}},
         "then": {"required": ["q"]}},
    ],
}


class ConfigError(Exception):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def validate_config(config: Any) -> None:
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        parts = [str(p) for p in err.absolute_path]
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            known = err.schema.get("properties", {})
            extra = sorted(k for k in err.instance if k not in known)
            if extra:
                parts.append(extra[0])
        raise ConfigError(".".join(parts) or "<root>", err.message)


def _build(section: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigurationError, ValueError) as exc:
        field = getattr(exc, "field", None)
        path = f"{section}.{field}" if field else section
        raise ConfigError(path, getattr(exc, "detail", str(exc))) from None


def _principle(cfg: dict) -> PrincipleSpec:
    p = dict(cfg)
    v = p.pop("v", None)
    if v is not None:
        kind = v["kind"]
        if kind == "exponential":
            p["v"] = _build("principle.v", exponential_distortion, v.get("alpha", 0.0))
        elif kind == "power":
            p["v"] = _build("principle.v", power_distortion, v.get("gamma", 0.0))
        else:
            p["v"] = linear_distortion()
    return _build("principle", PrincipleSpec, **p)


def _payoff(cfg: dict, section: str):
    return _build(section, make_payoff, cfg["kind"], cfg["params"],
                  cfg.get("monotonicity"), cfg.get("positive", False))


class Run:
    """A validated configuration turned into engine objects."""

    def __init__(self, config: dict):
        self.config = config
        self.command = config["command"]
        if self.command == "calibrate":
            return
        self.model = _build("model.params", make_model, config["model"]["kind"], config["model"]["params"])
        self.payoff = _payoff(config["payoff"], "payoff")
        self.principle = _principle(config["principle"])
        g = config["grid"]
        self.grid_args = dict(t0=g.get("t0", 0.0), T=g["T"], n_time=g["n_time"], n_space=g["n_space"],
                              n_stddevs=g.get("n_stddevs", 6.0), y_center=g.get("y_center", 0.0))
        self.grid = _build("grid", build_grid, self.model, **self.grid_args)
        self.solver = _build("solver", SolverConfig, **config.get("solver", {}))
        default_tree = (TreeKind.QUADRINOMIAL if self.principle.kind is PrincipleKind.COST_OF_CAPITAL
                        else TreeKind.BINOMIAL)
        self.tree = TreeKind(config.get("tree", default_tree))
        if self.principle.kind is PrincipleKind.COST_OF_CAPITAL and self.tree is not TreeKind.QUADRINOMIAL:
            raise ConfigError("tree", "CostOfCapital on the lattice needs the quadrinomial tree")

    def case(self, case_id: str = "case") -> Case:
        a = self.grid_args
        return Case(self.model, self.payoff, self.principle, a["T"], a["t0"], a["y_center"],
                    a["n_stddevs"], case_id, a["n_time"], a["n_space"])


# ---------------------------------------------------------------------------
# Output helpers


def surface_csv(surface, rows=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t", "y", "price"])
    times, ys = surface.grid.times, surface.grid.y
    for i in (range(len(times)) if rows is None else rows):
        for y, v in zip(ys, surface.values[i]):
            w.writerow([fmt17(times[i]), fmt17(y), fmt17(v)])
    return buf.getvalue()


def _row_csv(t: float, ys, values) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t", "y", "price"])
    for y, v in zip(ys, values):
        w.writerow([fmt17(t), fmt17(y), fmt17(v)])
    return buf.getvalue()


def write_atomic(files: dict[str, str]) -> None:
    """Write every file to a temporary sibling first, then rename into place."""
    staged = []
    try:
        for path, text in files.items():
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tcval-", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Commands


def cmd_calibrate(run: Run) -> tuple[dict[str, str], str]:
    q = run.config["q"]
    digits = run.config.get("digits", 3)
    try:
        cal = calibrate_quadrinomial(q)
    except TcvalError as exc:
        raise ConfigError("q", str(exc)) from None
    out = {name: float(f"{value:.{digits}g}") for name, value in (("q", cal.q), ("k", cal.k), ("l", cal.l))}
    return {}, json.dumps(out, sort_keys=False)


def cmd_price(run: Run, prefix: str, threads: int):
    engine = run.config["engine"]
    engines = ["lattice", "pde", "closedform"] if engine == "all" else [engine]
    grid = run.grid
    t0, T, yc = grid.t0, grid.T, grid.y_center
    files, results, rows0 = {}, {}, {}
    mask = grid.window(0.5)

    for name in engines:
        if name == "lattice":
            surface = backward_induct(run.model, run.payoff, run.principle, grid, run.tree, threads=threads)
        elif name == "pde":
            surface = solve_principle(run.model, run.payoff, run.principle, grid, run.solver)
        else:
            ys = grid.y[mask]
            row = np.asarray(closed_form_price(run.model, run.payoff, run.principle, t0, ys, T))
            files[f"{prefix}_surface_closedform.csv"] = _row_csv(t0, ys, row)
            price = float(closed_form_price(run.model, run.payoff, run.principle, t0, yc, T))
            results[name] = {"price": price, "warnings": []}
            rows0[name] = row
            continue
        files[f"{prefix}_surface_{name}.csv"] = surface_csv(surface)
        results[name] = {"price": surface.at(t0, yc), "warnings": surface.meta.get("warnings", [])}
        rows0[name] = surface.values[0][mask]

    summary = {"command": "price", "t0": t0, "y_center": yc, "engines": results,
               "parameters": _public_config(run.config)}
    if len(engines) > 1:
        summary["agreement"] = [
            {"pair": f"{a}-{b}", "sup_diff": float(np.max(np.abs(rows0[a] - rows0[b])))}
            for i, a in enumerate(engines) for b in engines[i + 1:]
        ]
    return files, summary


def cmd_converge(run: Run, prefix: str, threads: int):
    c = run.config["converge"]
    case = run.case(c.get("case_id", "case"))
    if run.principle.kind is PrincipleKind.COST_OF_CAPITAL:
        rep = coc_equals_stddev_limit(case, run.principle.delta, run.principle.q, c["dt_sequence"],
                                      nodes_per_step=c.get("nodes_per_step"), threads=threads)
    else:
        rep = converge_lattice_to_limit(case, c["dt_sequence"], c.get("reference", "ClosedForm"),
                                        tree=run.tree, nodes_per_step=c.get("nodes_per_step"), threads=threads)
    files = {
        f"{prefix}_convergence.csv": reports_to_csv([rep]),
        f"{prefix}_convergence.json": rep.to_json() + "\n",
    }
    summary = {"command": "converge", "report": rep.to_dict(), "parameters": _public_config(run.config)}
    return files, summary


def cmd_davis(run: Run, prefix: str, threads: int):
    d = run.config["davis"]
    perturbation = _payoff(d["perturbation"], "davis.perturbation")
    case = run.case()
    rep = davis_is_marginal_price(case, perturbation, d["eps"], run.solver)
    davis = solve_davis(run.model, run.payoff, perturbation, run.principle, run.grid, run.solver)
    files = {
        f"{prefix}_base.csv": surface_csv(davis.meta["base"]),
        f"{prefix}_davis.csv": surface_csv(davis),
        f"{prefix}_davis_check.csv": rep.csv_text(),
    }
    summary = {"command": "davis", "davis_price": rep.davis_price, "eps": rep.eps_sequence,
               "quotients": rep.quotients, "gaps": rep.gaps, "observed_order": rep.observed_order,
               "notes": rep.notes, "parameters": _public_config(run.config)}
    return files, summary


def _public_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k != "output"}


# ---------------------------------------------------------------------------


def _threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("TCVAL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("TCVAL_THREADS", f"not an integer: {env!r}") from None
    return 1


def run(command: str, config: dict, out: str | None = None, threads: int | None = None,
        timing: bool = False, stdout=None) -> int:
    """Execute one command; returns the exit status."""
    stdout = stdout or sys.stdout
    started = time.perf_counter()
    try:
        if not isinstance(config, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        if "command" in config and config["command"] != command:
            raise ConfigError("command", f"config is for {config['command']!r}, not {command!r}")
        config = {**config, "command": command}
        validate_config(config)
        n_threads = _threads(threads)
        r = Run(config)
        prefix = out or config.get("output", "tcval_out")
    except ConfigError as exc:
        print(f"tcval: configuration error at {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if command == "calibrate":
            _, text = cmd_calibrate(r)
            print(text, file=stdout)
            return EXIT_OK
        handler = {"price": cmd_price, "converge": cmd_converge, "davis": cmd_davis}[command]
        files, summary = handler(r, prefix, n_threads)
    except ConfigError as exc:
        print(f"tcval: configuration error at {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TcvalError, FloatingPointError, ValueError) as exc:
        print(f"tcval: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE

    if timing:
        summary["runtime_s"] = time.perf_counter() - started
    files[f"{prefix}_summary.json"] = _dumps(summary)
    write_atomic(files)
    for path in files:
        print(path, file=stdout)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tcval", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output path prefix (overrides config 'output')")
    parser.add_argument("--threads", type=int, help="worker threads (default: $TCVAL_THREADS or 1)")
    parser.add_argument("--timing", action="store_true",
                        help="record wall-clock runtime in the summary (breaks byte-identical output)")
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"tcval: configuration error at <file>: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.command, config, args.out, args.threads, args.timing)


if __name__ == "__main__":
    sys.exit(main())
