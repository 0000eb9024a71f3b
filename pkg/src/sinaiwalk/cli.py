"""``sinaiwalk`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
3 validation failure. Every flag may also be set through an environment
variable ``SINAIWALK_<FLAG>`` (for example ``SINAIWALK_SEED=7``); explicit
flags win over the environment, which wins over ``--config`` values.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from . import experiments as X
from . import valleys as VL
from .environment import Environment, EnvironmentLaw
from .errors import BudgetError, DomainError, InvalidLawError
from .reporting import config_hash, write_csv, write_json
from .walk import WalkState

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3
ENV_PREFIX = "SINAIWALK_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _grid(text: str) -> list[float]:
    """``10,20,40`` or an inclusive range ``10:100`` (step 1) or ``10:100:5``."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) not in (2, 3):
            raise argparse.ArgumentTypeError(f"bad range {text!r}")
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) == 3 else 1.0
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 0))]
    return _floats(text)


COMMON = {
    "seed": dict(type=int, help="master seed (default 0)"),
    "config": dict(type=Path, help="flat JSON file with option values"),
    "out": dict(type=Path, help="output directory (default: current directory)"),
    "replicas": dict(type=int, help="replica count (meaning depends on the command)"),
    "budget": dict(type=int, help="window budget in sites, or Monte Carlo replicas per cell for validate"),
    "threads": dict(type=int, help="worker threads (default: number of CPUs)"),
    "format": dict(choices=["json", "csv"], help="primary output format (default csv)"),
}
DEFAULTS = {"seed": 0, "out": Path("."), "threads": os.cpu_count() or 1, "format": "csv",
            "law": "two-point", "law_param": 0.25}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sinaiwalk", description="Sinai walk simulator: valleys, local times and "
                     "favorite sites. Flags can also be set via SINAIWALK_<FLAG> environment variables.")
    parser.add_argument("--version", action="version", version=f"sinaiwalk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        for flag, kw in COMMON.items():
            p.add_argument(f"--{flag}", default=None, **kw)
        return p

    def law_opts(p):
        p.add_argument("--law", choices=["two-point", "uniform-symmetric"], default=None,
                       help="environment law (default two-point)")
        p.add_argument("--law-param", type=float, default=None,
                       help="p for two-point, delta for uniform-symmetric (default 0.25)")

    p = add("env", "write the environment (x, omega_x, V(x)) on a window")
    law_opts(p)
    p.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"), default=None,
                   help="inclusive site window (default -100 100)")

    p = add("valleys", "evaluate the valley events on a grid of levels j")
    law_opts(p)
    p.add_argument("--j-grid", type=_grid, default=None,
                   help="levels, e.g. 10,20,40 or 10:100 (required)")
    p.add_argument("--C4", type=float, default=None, help="E4+ constant (default delta^3/2)")
    p.add_argument("--C5", type=float, default=None, help="E5- constant (default 10)")
    p.add_argument("--planted", type=float, default=None, metavar="J",
                   help="use the constructed environment on which all events hold at J")

    p = add("experiment", "run Steps A-C over environment replicas (config: flat JSON)")
    p.add_argument("--planted", type=float, default=None, metavar="J",
                   help="run Steps B-C on the constructed environment for level J")

    p = add("validate", "Monte Carlo validation of the exact quenched formulas")
    law_opts(p)
    p.add_argument("--envs", type=int, default=None, help="environments per formula (default 10)")

    p = add("concentration", "trace the concentration statistic Y_n along one walk")
    law_opts(p)
    p.add_argument("--steps", type=int, default=None, help="walk length n (default 10^7)")
    p.add_argument("--levels", type=_floats, default=None, help="levels a in [0,1) (default 0.5)")
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags, environment variables, config file and defaults (in that order)."""
    opts = {k: v for k, v in vars(args).items()}
    file_values = {}
    if opts.get("config") is not None and opts["command"] != "experiment":
        file_values = _load_json(opts["config"])
    for key, value in opts.items():
        if value is not None or key == "command":
            continue
        env_value = os.environ.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            opts[key] = _coerce(key, env_value)
        elif key in file_values:
            opts[key] = file_values[key]
        elif key in DEFAULTS and not (opts["command"] == "experiment" and key in ("seed", "threads")):
            # experiment configs carry their own seed and thread count
            opts[key] = DEFAULTS[key]
    return opts


def _coerce(key: str, text: str):
    if key in ("seed", "replicas", "budget", "threads", "steps", "envs"):
        return int(text)
    if key in ("law_param", "C4", "C5", "planted"):
        return float(text)
    if key in ("out", "config"):
        return Path(text)
    if key == "j_grid":
        return _grid(text)
    if key == "levels":
        return _floats(text)
    if key == "window":
        return [int(t) for t in text.replace(",", " ").split()]
    return text


def _load_json(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


def _law(opts: dict) -> EnvironmentLaw:
    try:
        return EnvironmentLaw(opts["law"], float(opts["law_param"]))
    except InvalidLawError as exc:
        raise UsageError(str(exc)) from exc


def _outdir(opts: dict) -> Path:
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _params(opts: dict) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in opts.items() if k not in ("out", "threads")}


def cmd_env(opts: dict) -> int:
    law = _law(opts)
    lo, hi = opts["window"] or (-100, 100)
    if lo > hi:
        raise UsageError("window must satisfy LO <= HI")
    env = Environment(law, opts["seed"])
    rows = env.table(lo, hi)
    chash = config_hash(_params(opts))
    out = _outdir(opts)
    if opts["format"] == "json":
        write_json(out / "env.json", {"law": law.to_dict(), "window": [lo, hi],
                                      "x": [r[0] for r in rows], "omega": [r[1] for r in rows],
                                      "V": [r[2] for r in rows]}, chash, opts["seed"])
    else:
        write_csv(out / "env.csv", ("x", "omega", "V"), rows, chash, opts["seed"])
    write_csv(out / "potential.csv", ("x", "V"), [(r[0], r[2]) for r in rows], chash, opts["seed"])
    return EXIT_OK


def cmd_valleys(opts: dict) -> int:
    grid = opts["j_grid"]
    if opts["planted"] is not None:
        env = VL.planted_environment(opts["planted"], _law(opts))
        grid = grid or [opts["planted"]]
    else:
        env = Environment(_law(opts), opts["seed"])
    if not grid:
        raise UsageError("--j-grid must list at least one level")
    C5 = VL.DEFAULT_C5 if opts["C5"] is None else opts["C5"]
    try:
        reports = VL.scan_events(env, grid, opts["C4"], C5, opts["budget"])
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    chash = config_hash(_params(opts))
    out = _outdir(opts)
    doc = {"levels": [r.to_dict() for r in reports],
           "special": [r.j for r in reports if r.special],
           "note": "levels form a user grid rather than the super-exponential schedule"}
    write_json(out / "events.json", doc, chash, opts["seed"])
    marks = [m.d for r in reports for m in (r.plus, r.minus) if m is not None]
    lo, hi = (min(marks + [-10]), max(marks + [10]))
    write_csv(out / "profile.csv", ("x", "V", "marks"), VL.profile_rows(env, lo, hi, reports),
              chash, opts["seed"])
    if opts["format"] == "csv":
        names = list(VL.PLUS_FLAGS + VL.MINUS_FLAGS)
        rows = [[r.j] + [r.flags.get(n) for n in names] + [r.E_plus, r.E_minus, ";".join(sorted(r.errors))]
                for r in reports]
        write_csv(out / "events.csv", ["j"] + names + ["E+", "E-", "errors"], rows, chash, opts["seed"])
    return EXIT_OK


def cmd_experiment(opts: dict) -> int:
    values = _load_json(opts["config"]) if opts["config"] is not None else {}
    overrides = {"seed": opts["seed"], "env_replicas": opts["replicas"], "threads": opts["threads"],
                 "window_budget": opts["budget"], "planted_j": opts["planted"]}
    values = {**values, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        config = X.ExperimentConfig(**values)
    except ValidationError as exc:
        lines = [f"  {'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise UsageError("invalid experiment config:\n" + "\n".join(lines)) from exc
    report, plots = X.run_experiment(config, collect_plots=True)
    out = _outdir(opts)
    chash, seed = config.digest(), config.seed
    (out / "report.json").write_text(X.dumps(report))
    write_csv(out / "walks.csv", X.WALK_COLUMNS, X.walk_rows(report), chash, seed)
    write_csv(out / "step_a.csv", ("index", "env_seed", "qualified", "m", "budget_errors"),
              [(r["index"], r["env_seed"], r["qualified"], r["m"], r["step_a"]["budget_errors"])
               for r in report["records"]], chash, seed)
    for name, (header, rows) in plots.items():
        write_csv(out / name, header, rows, chash, seed)
    agg = report["aggregate"]
    print(f"environments {agg['environments']}, qualified {agg['qualified']['successes']}, "
          f"walks {agg['walks']}, demonstration found: {agg['demonstration_found']}")
    return EXIT_OK


def cmd_validate(opts: dict) -> int:
    law = _law(opts)
    replicas = opts["budget"] if opts["budget"] is not None else X.MIN_VALIDATE_REPLICAS
    if replicas < X.MIN_VALIDATE_REPLICAS:
        raise UsageError(f"--budget must be at least {X.MIN_VALIDATE_REPLICAS} replicas per cell")
    result = X.validate_formulas(law, replicas, opts["seed"], opts["envs"] or 10)
    chash = config_hash(_params(opts))
    out = _outdir(opts)
    cols = ("formula", "label", "kind", "exact", "empirical", "se", "n", "passed")
    write_csv(out / "validation.csv", cols, [[c[k] for k in cols] for c in result["cells"]],
              chash, opts["seed"])
    write_json(out / "validation.json", {"summary": result["summary"], "passed": result["passed"]},
               chash, opts["seed"])
    for f, s in result["summary"].items():
        print(f"{f}: {s['cells']} cells, pass rate {s['pass_rate']:.3f} -> {'ok' if s['passed'] else 'FAIL'}")
    return EXIT_OK if result["passed"] else EXIT_VALIDATION


def cmd_concentration(opts: dict) -> int:
    law = _law(opts)
    steps = opts["steps"] or 10 ** 7
    levels = opts["levels"] or [0.5]
    if any(not 0 <= a < 1 for a in levels):
        raise UsageError("levels must lie in [0, 1)")
    env = Environment(law, opts["seed"])
    state = WalkState.start(opts["seed"], "concentration")
    trace = X.concentration_trace(env, state, X.geometric_checkpoints(steps), levels)
    chash = config_hash(_params(opts))
    out = _outdir(opts)
    rows = [(a, p["n"], p["Y"], p["ratio"], p["running_max"])
            for a, pts in trace["series"].items() for p in pts]
    write_csv(out / "concentration.csv", ("a", "n", "Y", "ratio", "running_max"), rows, chash, opts["seed"])
    write_json(out / "concentration.json", trace, chash, opts["seed"])
    return EXIT_OK


COMMANDS = {"env": cmd_env, "valleys": cmd_valleys, "experiment": cmd_experiment,
            "validate": cmd_validate, "concentration": cmd_concentration}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        return COMMANDS[opts["command"]](opts)
    except (UsageError, ValueError) as exc:
        print(f"sinaiwalk: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"sinaiwalk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
