"""Command-line experiment runner.

Each subcommand reads an optional JSON config, applies flag overrides, runs
one computation and writes CSV (with a commented metadata header) or JSON.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
import argparse
import copy
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import approx1d as a1
from . import density1d as d1
from . import learning as lr
from . import multidim as md
from .errors import ConfigError, InvalidCounts, NumericalError
from .model import NoiseModel, make_input_dist, make_target, sample_dataset
from .numerics import RNG_ALGORITHM, RngStream

COMMANDS = ("density", "segment", "approx-error", "learn", "tradeoff", "quantizer", "mdbound")
THREADS_ENV = "MOEQUANT_THREADS"
U64_MAX = 2 ** 64 - 1

_spec = {"oneOf": [{"type": "string"},
                   {"type": "object", "required": ["name"], "properties": {"name": {"type": "string"}}}]}
_pos_int = {"type": "integer", "minimum": 1}
_pos_int_list = {"type": "array", "items": _pos_int, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "moequant experiment config",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "target": _spec,
        "distribution": _spec,
        "noise": {"oneOf": [
            {"type": "null"},
            {"type": "string", "enum": ["none"]},
            {"type": "object", "properties": {
                "kind": {"enum": ["none", "uniform-range", "gaussian"]},
                "range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "low": {"type": "number"}, "high": {"type": "number"},
                "std": {"type": "number", "minimum": 0}},
             "additionalProperties": False}]},
        "m": _pos_int,
        "m_range": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 3},
        "ms": _pos_int_list,
        "n": _pos_int,
        "n_list": _pos_int_list,
        "repeats": _pos_int,
        "seed": {"type": "integer", "minimum": 0, "maximum": U64_MAX},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "grid_size": {"type": "integer", "minimum": 3},
        "n_test": {"type": "integer", "minimum": 2},
        "segmentation": {"enum": ["optimal", "uniform", "quantizer"]},
        "d": _pos_int,
        "counts": _pos_int_list,
        "M_opt": {"type": "number", "exclusiveMinimum": 0},
        "n_mc": {"type": "integer", "minimum": 2},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "delta_tilde": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "bound_check": {"type": "boolean"},
        "out": {"type": ["string", "null"]},
        "format": {"enum": ["csv", "json"]},
    },
}

TRUNC_GAUSS = {"name": "truncated-gaussian", "mu": 0.5, "s": 0.2}

BASE_DEFAULTS = {
    "target": "cosine10pi",
    "distribution": TRUNC_GAUSS,
    "noise": {"kind": "uniform-range", "range": [-0.1, 0.1]},
    "seed": 0,
    "eps": d1.DEFAULT_EPS,
    "grid_size": d1.DEFAULT_GRID,
    "format": "csv",
    "out": None,
}

COMMAND_DEFAULTS = {
    "density": {"m": 20, "segmentation": "optimal"},
    "segment": {"m": 20, "segmentation": "optimal"},
    "approx-error": {"ms": [4, 8, 20, 50, 120], "segmentation": "optimal", "n_test": 5000},
    "learn": {"m": 10, "n": 500, "segmentation": "uniform", "bound_check": False,
              "gamma": 3.0, "delta_tilde": 1e-3, "repeats": 1000},
    "tradeoff": {"m_range": [2, 120], "n_list": [50, 200, 800], "repeats": 300,
                 "segmentation": "uniform"},
    "quantizer": {"ms": [10]},
    "mdbound": {"target": "sum-coords", "distribution": "uniform", "d": 2, "counts": [4, 4],
                "n_mc": md.MC_SAMPLES},
}


# -- config handling --------------------------------------------------------------

def load_config(path):
    """Read and validate a JSON config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    validate_config(cfg, source=str(p))
    return cfg


def validate_config(cfg, source="config"):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: invalid value at {where}: {exc.message}") from None


def resolve_config(command, file_cfg=None, overrides=None):
    """Merge defaults < config file < flags. Returns ``(config, defaulted_keys)``."""
    cfg = copy.deepcopy(BASE_DEFAULTS)
    cfg.update(copy.deepcopy(COMMAND_DEFAULTS[command]))
    given = {}
    given.update(file_cfg or {})
    given.update({k: v for k, v in (overrides or {}).items() if v is not None})
    # an explicit m list or range replaces any defaulted one
    if {"m", "ms", "m_range"} & set(given):
        for k in ("m", "ms", "m_range"):
            if k not in given and k in COMMAND_DEFAULTS[command]:
                cfg.pop(k, None)
    cfg.update(given)
    validate_config(cfg)
    defaulted = sorted(k for k in cfg if k not in given)
    return cfg, defaulted


def m_values(cfg):
    """List of m from ``ms``, ``m_range`` (inclusive, optional step) or ``m``."""
    if "ms" in cfg:
        return [int(m) for m in cfg["ms"]]
    if "m_range" in cfg:
        r = cfg["m_range"]
        step = r[2] if len(r) == 3 else 1
        if r[1] < r[0]:
            raise ConfigError(f"m_range {r} is empty")
        return list(range(r[0], r[1] + 1, step))
    return [int(cfg["m"])]


def single_m(cfg):
    ms = m_values(cfg)
    if len(ms) != 1:
        raise ConfigError(f"this command takes a single m, got {len(ms)} values")
    return ms[0]


def config_hash(cfg):
    body = {k: v for k, v in cfg.items() if k != "out"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def thread_cap():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _pmap(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(min(workers, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(v) for v in items]


# -- model construction -----------------------------------------------------------

def _setup(cfg, dim=1):
    target = make_target(cfg["target"], dim)
    dist = make_input_dist(cfg["distribution"], dim)
    noise = NoiseModel.from_spec(cfg["noise"])
    return target, dist, noise


def _density(kind, cfg, target, dist):
    if kind == "optimal":
        return d1.optimal_density_1d(target, dist, cfg["eps"], cfg["grid_size"])
    if kind == "quantizer":
        return d1.quantizer_density(dist, cfg["eps"], cfg["grid_size"])
    return d1.uniform_density(cfg["grid_size"])


def _segmentation(kind, m, density):
    if kind == "uniform":
        return d1.uniform_segmentation(m)
    return d1.segmentation_from_density(density, m)


# -- output -----------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.16e}"


def _meta(command, cfg, defaulted, extra_defaults=None):
    defaults = {"truncated_gaussian": {"mu": TRUNC_GAUSS["mu"], "s": TRUNC_GAUSS["s"]},
                "eps": cfg["eps"], "M_opt": md.default_m_opt(1)}
    defaults.update(extra_defaults or {})
    return {"tool": "moequant", "version": __version__, "command": command,
            "config_sha256": config_hash(cfg), "seed": cfg["seed"], "rng": RNG_ALGORITHM,
            "defaults": defaults, "defaulted_keys": defaulted,
            "config": {k: v for k, v in cfg.items() if k != "out"}}


def csv_text(meta, columns, rows):
    buf = io.StringIO()
    for key, val in meta.items():
        text = val if isinstance(val, str) else json.dumps(val, sort_keys=True)
        buf.write(f"# {key}: {text}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def json_text(meta, result):
    return json.dumps({"meta": meta, "result": _jsonable(result)}, indent=2, sort_keys=True) + "\n"


def sibling_path(out, tag, suffix=None):
    p = Path(out)
    return p.with_name(f"{p.stem}_{tag}{suffix or p.suffix or '.csv'}")


def _emit(cfg, payloads, stdout):
    """Write ``[(tag, text[, suffix]), ...]``; the first goes to ``out``, others to siblings."""
    out = cfg.get("out")
    if out is None:
        stdout.write("\n".join(p[1] for p in payloads))
        return []
    written = []
    for k, (tag, text, *suffix) in enumerate(payloads):
        path = Path(out) if k == 0 else sibling_path(out, tag, *suffix)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from None
        written.append(str(path))
    return written


# -- subcommands ------------------------------------------------------------------

def cmd_density(cfg, defaulted):
    target, dist, _ = _setup(cfg)
    m = single_m(cfg)
    kind = cfg["segmentation"]
    dens = _density(kind, cfg, target, dist)
    seg = _segmentation(kind, m, dens)
    meta = _meta("density", cfg, defaulted)
    if cfg["format"] == "json":
        res = {"density": {"x": dens.xs, "lambda": dens.values, "floor_applied": dens.floor_applied},
               "segmentation": {"m": m, "a": seg.breakpoints}}
        return [("density", json_text(meta, res))]
    return [("density", csv_text(meta, ["x", "lambda"], zip(dens.xs, dens.values))),
            ("segmentation", csv_text(meta, ["i", "a_i"], enumerate(seg.breakpoints)))]


def cmd_segment(cfg, defaulted):
    target, dist, _ = _setup(cfg)
    m = single_m(cfg)
    kind = cfg["segmentation"]
    seg = _segmentation(kind, m, None if kind == "uniform" else _density(kind, cfg, target, dist))
    meta = _meta("segment", cfg, defaulted)
    if cfg["format"] == "json":
        return [("segmentation", json_text(meta, {"m": m, "a": seg.breakpoints}))]
    return [("segmentation", csv_text(meta, ["i", "a_i"], enumerate(seg.breakpoints)))]


def cmd_approx_error(cfg, defaulted, workers=1):
    target, dist, noise = _setup(cfg)
    kind = cfg["segmentation"]
    dens = _density(kind, cfg, target, dist)
    s2 = noise.variance

    def one(m):
        seg = _segmentation(kind, m, dens)
        model = a1.optimal_model_1d(seg, target, dist)
        emp, se = a1.empirical_test_error(model, target, dist, noise, cfg["n_test"],
                                          RngStream(cfg["seed"], m))
        if kind == "optimal":
            theory = a1.optimal_error_1d(m, target, dist, s2, cfg["eps"]).total
        else:
            theory = a1.test_error_integral_1d(dens, m, target, dist, s2).total
        exact = a1.test_error_exact_1d(model, target, dist, s2).total
        return m, emp, se, theory, exact

    rows = _pmap(one, m_values(cfg), workers)
    meta = _meta("approx-error", cfg, defaulted)
    cols = ["m", "empirical", "empirical_stderr", "theoretical", "exact"]
    if cfg["format"] == "json":
        return [("curve", json_text(meta, {"noise_variance": s2,
                                           "rows": [dict(zip(cols, r)) for r in rows]}))]
    return [("curve", csv_text(meta, cols, rows))]


def cmd_learn(cfg, defaulted):
    target, dist, noise = _setup(cfg)
    m = single_m(cfg)
    kind = cfg["segmentation"]
    seg = _segmentation(kind, m, None if kind == "uniform" else _density(kind, cfg, target, dist))
    data = sample_dataset(dist, target, noise, cfg["n"], RngStream(cfg["seed"], 0))
    learned = lr.fit_constants(seg, data)
    rep = lr.decompose(seg, learned, target, dist, noise.variance)
    c_opt, _ = lr.optimal_constants(seg, target, dist)
    a = seg.breakpoints
    cols = ["i", "a_lo", "a_hi", "n_i", "c_learned", "c_opt", "rho"]
    rows = [(i, a[i], a[i + 1], learned.counts.counts[i], learned.constants[i], c_opt[i],
             rep.region_masses[i]) for i in range(m)]
    check = None
    if cfg["bound_check"]:
        check = lr.empirical_bound_check(seg, target, dist, noise, cfg["n"], cfg["gamma"],
                                         cfg["delta_tilde"], cfg["repeats"],
                                         RngStream(cfg["seed"], 1))
    meta = _meta("learn", cfg, defaulted)
    summary = {"test_error": rep.test_error, "approximation_error": rep.approximation_error,
               "estimation_error": rep.estimation_error, "identity_gap": rep.identity_gap,
               "fallback_regions": learned.fallback_regions, "fallback_value": learned.fallback_value}
    if cfg["format"] == "json":
        res = {"summary": summary, "regions": [dict(zip(cols, r)) for r in rows],
               "bound_check": check.to_dict() if check else None}
        return [("learn", json_text(meta, res))]
    payloads = [("learn", csv_text({**meta, "summary": _jsonable(summary)}, cols, rows))]
    if check:
        payloads.append(("bounds", json_text(meta, check.to_dict()), ".json"))
    return payloads


def cmd_tradeoff(cfg, defaulted, workers=1):
    target, dist, noise = _setup(cfg)
    kind = cfg["segmentation"]
    dens = None if kind == "uniform" else _density(kind, cfg, target, dist)
    curves = lr.tradeoff_curves(lambda m: _segmentation(kind, m, dens), target, dist, noise,
                                m_values(cfg), cfg["n_list"], cfg["repeats"],
                                RngStream(cfg["seed"], 0), workers=workers)
    meta = _meta("tradeoff", cfg, defaulted)
    cols = ["m", "n", "mean_test_error", "stderr", "approximation_error"]
    rows = [(m, c.n, c.mean_test_error[k], c.stderr[k], c.approximation_error[k])
            for c in curves for k, m in enumerate(c.ms)]
    if cfg["format"] == "json":
        res = {"argmin_m": {str(c.n): c.argmin_m for c in curves},
               "rows": [dict(zip(cols, r)) for r in rows]}
        return [("tradeoff", json_text(meta, res))]
    return [("tradeoff", csv_text({**meta, "argmin_m": {str(c.n): c.argmin_m for c in curves}},
                                  cols, rows))]


def cmd_quantizer(cfg, defaulted):
    dist = make_input_dist(cfg["distribution"], 1)
    rows = [(m, a1.quantizer_error_optimal(m, dist, cfg["eps"])) for m in m_values(cfg)]
    meta = _meta("quantizer", cfg, defaulted)
    cols = ["m", "quantizer_error"]
    if cfg["format"] == "json":
        return [("quantizer", json_text(meta, {"rows": [dict(zip(cols, r)) for r in rows]}))]
    return [("quantizer", csv_text(meta, cols, rows))]


def cmd_mdbound(cfg, defaulted):
    d = cfg["d"]
    if "m" in cfg and "counts" in defaulted:
        k = int(round(cfg["m"] ** (1.0 / d)))
        if k ** d != cfg["m"]:
            raise InvalidCounts(f"m={cfg['m']} is not a perfect {d}-th power; pass counts")
        cfg = {**cfg, "counts": [k] * d}
    counts = cfg["counts"]
    if len(counts) != d:
        raise InvalidCounts(f"counts {counts} do not match d={d}")
    target, dist, noise = _setup(cfg, d)
    m_opt = cfg.get("M_opt", md.default_m_opt(d))
    seg = md.grid_segmentation(d, counts)
    m = seg.m
    s2 = noise.variance
    c = md.optimal_constants_md(seg, target, dist, rng=RngStream(cfg["seed"], 1))
    bound_sum = md.error_bound_sum_md(seg, target, dist, s2)
    mc, mc_se = md.test_error_md_mc(seg, c, target, dist, noise, cfg["n_mc"],
                                    RngStream(cfg["seed"], 0))
    uniform = md.density_md_from_function(lambda x: np.ones(len(x)), d, "uniform") if d > 1 \
        else d1.uniform_density()
    cube_moment = float(np.mean(seg.normalized_moments)) if np.allclose(
        seg.normalized_moments, seg.normalized_moments[0]) else None
    integral = (md.error_bound_integral_md(uniform, cube_moment, m, target, dist, s2,
                                           rng=RngStream(cfg["seed"], 2))
                if cube_moment is not None else float("nan"))
    minimal = md.min_bound_md(m, d, m_opt, target, dist, s2, cfg["eps"])
    res = {"d": d, "m": m, "counts": list(counts), "noise_variance": s2,
           "bound_sum": bound_sum, "mc_test_error": mc, "mc_stderr": mc_se,
           "integral_bound": integral, "min_bound": minimal, "M_opt": m_opt}
    meta = _meta("mdbound", cfg, defaulted, {"M_opt": m_opt})
    if cfg["format"] == "json":
        return [("mdbound", json_text(meta, res))]
    cols = ["d", "m", "bound_sum", "mc_test_error", "mc_stderr", "integral_bound", "min_bound"]
    return [("mdbound", csv_text(meta, cols, [[res[k] for k in cols]]))]


HANDLERS = {
    "density": cmd_density, "segment": cmd_segment, "approx-error": cmd_approx_error,
    "learn": cmd_learn, "tradeoff": cmd_tradeoff, "quantizer": cmd_quantizer,
    "mdbound": cmd_mdbound,
}
PARALLEL = {"approx-error", "tradeoff"}


# -- argument parsing -------------------------------------------------------------

def _json_arg(text):
    """Accept a plain registry name or an inline JSON object."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise argparse.ArgumentTypeError(f"bad JSON: {exc}") from None
    return text


def build_parser():
    ap = argparse.ArgumentParser(prog="moequant", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"moequant {__version__}")
    ap.add_argument("--print-schema", action="store_true",
                    help="print the JSON schema for config files and exit")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file")
    common.add_argument("--seed", type=int, metavar="U64")
    common.add_argument("--out", metavar="PATH", help="output file (stdout if omitted)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--target", type=_json_arg, help="target name or JSON spec")
    common.add_argument("--dist", dest="distribution", type=_json_arg,
                        help="input distribution name or JSON spec")
    common.add_argument("--noise", type=_json_arg, help='"none" or JSON noise spec')
    common.add_argument("--m", type=int)
    common.add_argument("--ms", type=int, nargs="+", metavar="M")
    common.add_argument("--m-range", dest="m_range", type=int, nargs="+", metavar="M",
                        help="LO HI [STEP], inclusive")
    common.add_argument("--eps", type=float)
    common.add_argument("--grid-size", dest="grid_size", type=int)
    common.add_argument("--segmentation", choices=["optimal", "uniform", "quantizer"])

    helps = {
        "density": "segment density (x,lambda) and its breakpoints (i,a_i)",
        "segment": "breakpoints of a segmentation",
        "approx-error": "empirical vs theoretical test error over m",
        "learn": "fit experts on one dataset, optionally check deviation bounds",
        "tradeoff": "mean test error of learned experts over m and n",
        "quantizer": "high-rate error of the optimal scalar quantizer",
        "mdbound": "error bounds for a box grid in d dimensions",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "approx-error":
            p.add_argument("--n-test", dest="n_test", type=int)
        if name in ("learn", "tradeoff"):
            p.add_argument("--repeats", type=int)
        if name == "learn":
            p.add_argument("--n", type=int)
            p.add_argument("--bound-check", dest="bound_check", action="store_const", const=True)
            p.add_argument("--gamma", type=float)
            p.add_argument("--delta-tilde", dest="delta_tilde", type=float)
        if name == "tradeoff":
            p.add_argument("--n-list", dest="n_list", type=int, nargs="+", metavar="N")
        if name == "mdbound":
            p.add_argument("--d", type=int)
            p.add_argument("--counts", type=int, nargs="+")
            p.add_argument("--m-opt", dest="M_opt", type=float)
            p.add_argument("--n-mc", dest="n_mc", type=int)
    return ap


_NON_CONFIG = {"command", "config", "print_schema"}


def run(argv=None, stdout=None):
    """Parse ``argv``, run the command and return the list of written paths."""
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    if args.print_schema:
        stdout.write(json.dumps(CONFIG_SCHEMA, indent=2) + "\n")
        return []
    if args.command is None:
        raise ConfigError("no command given; choose from " + ", ".join(COMMANDS))
    file_cfg = load_config(args.config) if args.config else {}
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    cfg, defaulted = resolve_config(args.command, file_cfg, overrides)
    handler = HANDLERS[args.command]
    if args.command in PARALLEL:
        payloads = handler(cfg, defaulted, workers=thread_cap())
    else:
        payloads = handler(cfg, defaulted)
    return _emit(cfg, payloads, stdout)


def main(argv=None):
    try:
        run(argv)
    except ConfigError as exc:
        print(f"moequant: config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"moequant: numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
