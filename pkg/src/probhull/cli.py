"""Command-line driver: verify, oracle, plot, gridsearch, bench.

Settings come from built-in defaults, then an optional JSON config file
(``--config``), then command-line flags. See docs/formats.md for every
file format touched here.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import INTERMEDIATE_MODES
from .engine import STRATEGIES, TERMINATION_MODES, EngineConfig, VerificationResult, mc_oracle, verify
from .errors import ConfigError, ParseError, ProbHullError
from .gauss import GaussianInput
from .model import (
    Network,
    SafetySpec,
    acas_p2_gaussian,
    acas_p2_violation_spec,
    load_network,
    whiten,
)
from .subdivide import TreeConfig

log = logging.getLogger("probhull")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_CAP = 3

RESULT_SCHEMA_ID = "probhull-result/1"
ORACLE_SCHEMA_ID = "probhull-oracle/1"
ACAS_P2 = "acas-p2"

COLORS = {"safe": "#2e7d32", "unsafe": "#c62828", "unknown": "#f9a825"}

GRID_COLUMNS = [
    "cell", "w_uniform", "w_distribution", "depth", "beta", "alpha",
    "lower", "upper", "gap", "runtime_s", "verifier_calls", "iterations", "exit_reason", "error", "pareto",
]
BENCH_COLUMNS = [
    "strategy", "seed", "lower", "upper", "gap", "verifier_calls", "iterations", "wall_time_s", "exit_reason", "cap_exit",
]

# (name, type, default); None defaults mean "not set"
RUN_FIELDS = [
    ("net", str, None),
    ("format", str, None),
    ("spec", str, None),
    ("mean", str, None),
    ("std", str, None),
    ("cov", str, None),
    ("normalized", bool, False),
    ("epsilon", float, 0.01),
    ("termination", str, "sum"),
    ("pmin", float, 0.0),
    ("strategy", str, "boundary_aware"),
    ("intermediate", str, "ibp"),
    ("alpha", float, 0.05),
    ("beta", float, 0.75),
    ("depth", int, 5),
    ("weights", str, "0.5,0.5"),
    ("n_initial", int, 1000),
    ("n_iter", int, 100),
    ("max_attempts", int, 10),
    ("rank_scale", float, 1.0),
    ("delta_tail", float, 1e-5),
    ("seed", int, 0),
    ("workers", int, 1),
    ("deterministic", bool, False),
    ("time_cap", float, None),
    ("iter_cap", int, None),
    ("emit_hulls", bool, False),
    ("out", str, None),
]
PATH_FIELDS = ("net", "spec", "cov", "out")


# -- configuration ------------------------------------------------------------


def parse_floats(text, name: str) -> np.ndarray:
    """Comma-separated numbers (a JSON list is accepted too)."""
    if isinstance(text, (list, tuple)):
        values = text
    else:
        text = str(text).strip()
        if text.startswith("["):
            values = json.loads(text)
        else:
            values = [t for t in text.replace(" ", "").split(",") if t]
    try:
        out = np.array([float(v) for v in values], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--{name.replace('_', '-')}: expected comma-separated numbers, got {text!r}") from exc
    if out.size == 0:
        raise ConfigError(f"--{name.replace('_', '-')}: empty list")
    return out


def _read_json(path, what: str):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{what} file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{what} is not valid JSON: {exc.msg}", f"{path}:{exc.lineno}") from exc


def load_config_file(path) -> dict:
    """JSON object of run settings; relative paths resolve against the file."""
    data = _read_json(path, "config")
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", str(path))
    known = {name for name, _, _ in RUN_FIELDS}
    out = {}
    base = Path(path).resolve().parent
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown config key {key!r} in {path}")
        if name in ("mean", "std", "weights") and isinstance(value, list):
            value = ",".join(repr(float(v)) for v in value)
        if name in PATH_FIELDS and isinstance(value, str) and value != ACAS_P2 and not value.lstrip().startswith("{"):
            value = str(base / value) if not os.path.isabs(value) else value
        out[name] = value
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = {name: default for name, _, default in RUN_FIELDS}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for name, _, _ in RUN_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    return settings


@dataclass
class RunConfig:
    """Everything needed for one verification run, validated up front."""

    net: Network
    spec: SafetySpec
    gaussian: GaussianInput
    engine: EngineConfig
    complemented: bool
    coordinates: str
    settings: dict = field(repr=False)

    @property
    def out(self):
        return self.settings.get("out")


def load_spec(value) -> tuple[SafetySpec, bool]:
    if value is None:
        raise ConfigError("--spec is required (JSON file, inline JSON or 'acas-p2')")
    if value == ACAS_P2:
        return acas_p2_violation_spec(), True
    if isinstance(value, dict):
        data, where = value, "$"
    elif str(value).lstrip().startswith("{"):
        try:
            data = json.loads(value)
        except json.JSONDecodeError as exc:
            raise ParseError(f"inline spec is not valid JSON: {exc.msg}", "--spec") from exc
        where = "--spec"
    else:
        data, where = _read_json(value, "spec"), str(value)
    if not isinstance(data, dict) or "C" not in data or "a" not in data:
        raise ParseError("spec needs keys 'C' and 'a'", where)
    try:
        C = np.atleast_2d(np.asarray(data["C"], dtype=np.float64))
        a = np.atleast_1d(np.asarray(data["a"], dtype=np.float64))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"spec entries must be numeric: {exc}", where) from exc
    return SafetySpec(C, a), bool(data.get("complement", False))


def _load_cov(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"covariance file not found: {p}")
    if p.suffix == ".json":
        return np.asarray(_read_json(p, "covariance"), dtype=np.float64)
    try:
        return np.atleast_2d(np.loadtxt(p, delimiter="," if "," in p.read_text() else None))
    except ValueError as exc:
        raise ParseError(f"covariance is not a numeric matrix: {exc}", str(p)) from exc


def _load_network(path, fmt):
    if path is None:
        raise ConfigError("--net is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"network file not found: {p}")
    if fmt not in (None, "nnet", "json"):
        raise ConfigError(f"--format must be nnet or json, got {fmt!r}")
    return load_network(p, fmt)


def build_run_config(settings: dict) -> RunConfig:
    net = _load_network(settings["net"], settings["format"])
    spec, complemented = load_spec(settings["spec"])
    coordinates = "raw"
    if settings["normalized"]:
        norm = net.normalization
        net = net.without_normalization()
        coordinates = "normalized"
    else:
        norm = None
    spec.check(net)
    seed = int(settings["seed"])

    if settings["mean"] is None and settings["std"] is None and settings["spec"] == ACAS_P2:
        g = acas_p2_gaussian(seed)
        if norm is not None:
            g = GaussianInput((g.mean - norm.input_mean) / norm.input_range, g.std / norm.input_range, seed)
    else:
        if settings["mean"] is None:
            raise ConfigError("--mean is required")
        mean = parse_floats(settings["mean"], "mean")
        if mean.size == 1 and net.input_dim > 1:
            mean = np.full(net.input_dim, mean[0])
        if settings["cov"] is not None:
            if settings["std"] is not None:
                raise ConfigError("give either --std or --cov, not both")
            g, net = whiten(mean, _load_cov(settings["cov"]), net, seed)
            coordinates = "whitened"
        else:
            std = parse_floats(settings["std"] if settings["std"] is not None else "1", "std")
            if std.size == 1 and mean.size > 1:
                std = np.full(mean.size, std[0])
            g = GaussianInput(mean, std, seed)
    if g.dim != net.input_dim:
        raise ConfigError(f"Gaussian has {g.dim} dimensions, network expects {net.input_dim}")

    weights = tuple(parse_floats(settings["weights"], "weights"))
    if len(weights) != 2:
        raise ConfigError("--weights takes two numbers: uniform,distribution")
    tree = TreeConfig(
        max_depth=int(settings["depth"]),
        alpha=float(settings["alpha"]),
        beta=float(settings["beta"]),
        weights=weights,
        n_samples=int(settings["n_iter"]),
        max_attempts=int(settings["max_attempts"]),
        rank_scale=float(settings["rank_scale"]),
    )
    engine = EngineConfig(
        epsilon=float(settings["epsilon"]),
        termination=settings["termination"],
        p_min=float(settings["pmin"]),
        strategy=settings["strategy"],
        tree=tree,
        n_initial=int(settings["n_initial"]),
        n_iter=int(settings["n_iter"]),
        worker_count=int(settings["workers"]),
        iteration_cap=None if settings["iter_cap"] is None else int(settings["iter_cap"]),
        wall_clock_cap=None if settings["time_cap"] is None else float(settings["time_cap"]),
        tail_mass=float(settings["delta_tail"]),
        intermediate=settings["intermediate"],
    )
    return RunConfig(net, spec, g, engine, complemented, coordinates, settings)


# -- result emission ----------------------------------------------------------


def _flip(status: str) -> str:
    return {"safe": "unsafe", "unsafe": "safe"}.get(status, status)


def result_to_dict(run: RunConfig, result: VerificationResult) -> dict:
    """JSON-ready result document (schema ``probhull-result/1``)."""
    lower, upper = result.lower, result.upper
    sets = result.hulls
    masses = {"safe": sets.safe_mass, "unsafe": sets.unsafe_mass, "unknown": result.stats["unknown_mass"]}
    counts = {"safe": len(sets.safe), "unsafe": len(sets.unsafe), "unknown": len(sets.unknown)}
    if run.complemented:
        # the engine bracketed the violation set; report the property
        lower, upper = 1.0 - result.upper, 1.0 - result.lower
        masses["safe"], masses["unsafe"] = masses["unsafe"], masses["safe"]
        counts["safe"], counts["unsafe"] = counts["unsafe"], counts["safe"]
    stats = dict(result.stats)
    stats["trace"] = [list(row) for row in stats["trace"]]
    if run.settings.get("deterministic"):
        stats.pop("wall_time_s", None)
    doc = {
        "schema": RESULT_SCHEMA_ID,
        "lower": lower,
        "upper": upper,
        "gap": upper - lower,
        "complemented": run.complemented,
        "exit_reason": stats["exit_reason"],
        "cap_exit": result.cap_exit,
        "coordinates": run.coordinates,
        "dim": run.gaussian.dim,
        "hull_counts": counts,
        "masses": masses,
        "stats": stats,
        "config": echo_settings(run.settings),
    }
    if run.complemented:
        doc["verified_interval"] = [result.lower, result.upper]
    if run.settings.get("emit_hulls"):
        hulls = []
        for hull in itertools.chain(sets.safe, sets.unsafe, sets.unknown):
            entry = hull.to_dict()
            entry["lower"] = [float(v) for v in entry["lower"]]
            entry["upper"] = [float(v) for v in entry["upper"]]
            if run.complemented:
                entry["status"] = _flip(entry["status"])
            hulls.append(entry)
        doc["hulls"] = hulls
    return doc


def echo_settings(settings: dict) -> dict:
    # the output path is where the echo goes, not part of the run
    return {k: settings[k] for k, _, _ in RUN_FIELDS if k in settings and k != "out"}


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(text: str, out):
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def load_schema(name: str) -> dict:
    """Published schema ``name`` (result, oracle, grid_row or bench_row)."""
    return json.loads((Path(__file__).parent / "schemas" / f"{name}.schema.json").read_text())


def load_result_schema() -> dict:
    return load_schema("result")


# -- subcommands --------------------------------------------------------------


def cmd_verify(args) -> int:
    run = build_run_config(resolve_settings(args))
    result = verify(run.net, run.spec, run.gaussian, run.engine)
    doc = result_to_dict(run, result)
    _write(dump_json(doc), run.out)
    log.info("L_s=%.6f U_s=%.6f gap=%.3g exit=%s", doc["lower"], doc["upper"], doc["gap"], doc["exit_reason"])
    return EXIT_CAP if result.cap_exit else EXIT_OK


def cmd_oracle(args) -> int:
    run = build_run_config(resolve_settings(args))
    est = mc_oracle(run.net, run.spec, run.gaussian, int(args.n), float(args.confidence))
    doc = {"schema": ORACLE_SCHEMA_ID, **est.to_dict(), "complemented": run.complemented}
    if run.complemented:
        doc["estimate"], doc["lower"], doc["upper"] = 1.0 - est.estimate, 1.0 - est.upper, 1.0 - est.lower
        doc["successes"] = est.n - est.successes
    _write(dump_json(doc), run.out)
    return EXIT_OK


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def render_svg(doc: dict, dims=(0, 1), size: int = 480) -> str:
    """Hull map of ``doc['hulls']`` projected on ``dims``.

    Hulls are the only ``<rect>`` elements; axes and legend use paths and
    circles. Exact for 2-D results, translucent projections otherwise.
    """
    if "hulls" not in doc:
        raise ConfigError("result has no hull geometry; rerun verify with --emit-hulls")
    i, j = dims
    hulls = doc["hulls"]
    d = int(doc.get("dim", len(hulls[0]["lower"]) if hulls else 2))
    if not (0 <= i < d and 0 <= j < d) or i == j:
        raise ConfigError(f"--dims must name two distinct axes below {d}, got {i},{j}")
    if hulls:
        lo = np.array([[h["lower"][i], h["lower"][j]] for h in hulls]).min(axis=0)
        hi = np.array([[h["upper"][i], h["upper"][j]] for h in hulls]).max(axis=0)
    else:
        lo, hi = np.zeros(2), np.ones(2)
    span = np.where(hi > lo, hi - lo, 1.0)
    pad, plot = 50, size - 80
    legend_w = 120

    def px(x):
        return pad + (x - lo[0]) / span[0] * plot

    def py(y):
        return pad + plot - (y - lo[1]) / span[1] * plot

    opacity = "0.85" if d == 2 else "0.25"
    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + legend_w}" height="{size}" '
        f'viewBox="0 0 {size + legend_w} {size}" font-family="sans-serif" font-size="12">\n'
    )
    for h in hulls:
        x0, x1 = px(h["lower"][i]), px(h["upper"][i])
        y0, y1 = py(h["upper"][j]), py(h["lower"][j])
        out.write(
            f'<rect x="{_fmt(x0)}" y="{_fmt(y0)}" width="{_fmt(x1 - x0)}" height="{_fmt(y1 - y0)}" '
            f'fill="{COLORS[h["status"]]}" fill-opacity="{opacity}" stroke="#222222" stroke-width="0.3"/>\n'
        )
    x_end, y_end = pad + plot, pad + plot
    out.write(f'<path d="M{pad} {pad} L{pad} {y_end} L{x_end} {y_end}" fill="none" stroke="#000000"/>\n')
    for t in range(5):
        f = t / 4
        xv, yv = lo[0] + f * span[0], lo[1] + f * span[1]
        xt, yt = pad + f * plot, pad + plot - f * plot
        out.write(f'<path d="M{_fmt(xt)} {y_end} L{_fmt(xt)} {y_end + 5}" stroke="#000000"/>\n')
        out.write(f'<text x="{_fmt(xt)}" y="{y_end + 18}" text-anchor="middle">{xv:.3g}</text>\n')
        out.write(f'<path d="M{pad - 5} {_fmt(yt)} L{pad} {_fmt(yt)}" stroke="#000000"/>\n')
        out.write(f'<text x="{pad - 8}" y="{_fmt(yt + 4)}" text-anchor="end">{yv:.3g}</text>\n')
    out.write(f'<text x="{pad + plot / 2:.1f}" y="{size - 8}" text-anchor="middle">x{i}</text>\n')
    out.write(f'<text x="14" y="{pad + plot / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {pad + plot / 2:.1f})">x{j}</text>\n')
    for k, (name, color) in enumerate(COLORS.items()):
        y = pad + 20 * k
        out.write(f'<circle cx="{size + 10}" cy="{y}" r="6" fill="{color}"/>\n')
        out.write(f'<text x="{size + 22}" y="{y + 4}">{name}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def cmd_plot(args) -> int:
    doc = _read_json(args.result, "result")
    dims = tuple(int(v) for v in parse_floats(args.dims, "dims"))
    if len(dims) != 2:
        raise ConfigError("--dims takes two axis indices, e.g. 0,1")
    _write(render_svg(doc, dims), args.out)
    return EXIT_OK


# grid search


def load_grid(path) -> dict:
    data = _read_json(path, "grid")
    if not isinstance(data, dict):
        raise ParseError("grid must be a JSON object", str(path))
    grid = {
        "weights": [tuple(float(x) for x in w) for w in data.get("weights", [[0.5, 0.5]])],
        "depths": [int(x) for x in data.get("depths", [5])],
        "betas": [float(x) for x in data.get("betas", [0.75])],
        "alphas": [float(x) for x in data.get("alphas", [0.05])],
    }
    for key in ("epsilon", "time_cap", "iter_cap"):
        if key in data:
            grid[key] = data[key]
    if any(len(grid[k]) == 0 for k in ("weights", "depths", "betas", "alphas")):
        raise ConfigError("grid axes must be nonempty")
    return grid


def grid_cells(grid: dict):
    return list(itertools.product(grid["weights"], grid["depths"], grid["betas"], grid["alphas"]))


def _cell_settings(settings, grid, cell):
    (w_u, w_d), depth, beta, alpha = cell
    s = dict(settings)
    s.update(weights=f"{w_u!r},{w_d!r}", depth=depth, beta=beta, alpha=alpha, emit_hulls=False)
    for key in ("epsilon", "time_cap", "iter_cap"):
        if key in grid:
            s[key] = grid[key]
    return s


def _run_cell(index, settings):
    """One grid cell; failures are reported in the row instead of raised."""
    row = {"cell": index, "error": ""}
    start = time.perf_counter()
    try:
        run = build_run_config(settings)
        result = verify(run.net, run.spec, run.gaussian, run.engine)
        doc = result_to_dict(run, result)
        row.update(
            lower=doc["lower"], upper=doc["upper"], gap=doc["gap"],
            verifier_calls=result.stats["verifier_calls"], iterations=result.stats["iterations"],
            exit_reason=result.stats["exit_reason"],
        )
    except Exception as exc:  # recorded, the grid continues
        row.update(lower="", upper="", gap="", verifier_calls="", iterations="", exit_reason="error",
                   error=f"{type(exc).__name__}: {exc}")
    row["runtime_s"] = time.perf_counter() - start
    return row


def pareto_flags(rows) -> list:
    """True for rows not dominated in (gap, runtime); failed rows are never flagged."""
    pts = [(float(r["gap"]), float(r["runtime_s"])) if r.get("gap", "") != "" else None for r in rows]
    flags = []
    for p in pts:
        if p is None:
            flags.append(False)
            continue
        dominated = any(
            q is not None and q[0] <= p[0] and q[1] <= p[1] and (q[0] < p[0] or q[1] < p[1]) for q in pts
        )
        flags.append(not dominated)
    return flags


def _read_done(out, cells) -> dict:
    done = {}
    if out is None or not Path(out).is_file():
        return done
    with open(out, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                idx = int(row["cell"])
            except (KeyError, ValueError):
                continue
            if idx >= len(cells) or row.get("exit_reason") in (None, "", "error"):
                continue
            (w_u, w_d), depth, beta, alpha = cells[idx]
            same = (
                float(row["w_uniform"]) == w_u and float(row["w_distribution"]) == w_d
                and int(row["depth"]) == depth and float(row["beta"]) == beta and float(row["alpha"]) == alpha
            )
            if same:
                done[idx] = row
    return done


def write_csv(rows, columns, out):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row.get(c, "") for c in columns})
    _write(buf.getvalue(), out)


def cmd_gridsearch(args) -> int:
    settings = resolve_settings(args)
    grid = load_grid(args.grid)
    cells = grid_cells(grid)
    build_run_config(settings)  # validate the base config before any cell runs
    print(f"grid: {len(cells)} cells", file=sys.stderr)
    out = settings["out"]
    done = _read_done(out, cells)
    todo = [i for i in range(len(cells)) if i not in done]
    if done:
        print(f"grid: resuming, {len(done)} cells already complete", file=sys.stderr)
    results = dict(done)
    jobs = [(i, _cell_settings(settings, grid, cells[i])) for i in todo]
    if args.parallel_cells > 1:
        with ProcessPoolExecutor(args.parallel_cells) as pool:
            for i, row in zip(todo, pool.map(_run_cell, *zip(*jobs)) if jobs else []):
                results[i] = row
    else:
        for i, s in jobs:
            results[i] = _run_cell(i, s)
            # checkpoint after every cell so an interrupted grid can resume
            _write_grid(results, cells, out)
    _write_grid(results, cells, out)
    return EXIT_OK


def _write_grid(results, cells, out):
    rows = []
    for i in sorted(results):
        (w_u, w_d), depth, beta, alpha = cells[i]
        row = dict(results[i])
        row.update(cell=i, w_uniform=w_u, w_distribution=w_d, depth=depth, beta=beta, alpha=alpha)
        rows.append(row)
    for row, flag in zip(rows, pareto_flags(rows)):
        row["pareto"] = int(flag)
    write_csv(rows, GRID_COLUMNS, out)


def cmd_bench(args) -> int:
    settings = resolve_settings(args)
    strategies = [s for s in args.strategies.split(",") if s]
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")
    rows = []
    base_seed = int(settings["seed"])
    for seed in range(base_seed, base_seed + int(args.repeats)):
        for strategy in strategies:
            run = build_run_config({**settings, "strategy": strategy, "seed": seed, "emit_hulls": False})
            result = verify(run.net, run.spec, run.gaussian, run.engine)
            doc = result_to_dict(run, result)
            rows.append({
                "strategy": strategy, "seed": seed, "lower": doc["lower"], "upper": doc["upper"], "gap": doc["gap"],
                "verifier_calls": result.stats["verifier_calls"], "iterations": result.stats["iterations"],
                "wall_time_s": result.stats["wall_time_s"], "exit_reason": result.stats["exit_reason"],
                "cap_exit": int(result.cap_exit),
            })
    write_csv(rows, BENCH_COLUMNS, settings["out"])
    for strategy in strategies:
        calls = [r["verifier_calls"] for r in rows if r["strategy"] == strategy]
        print(f"bench: {strategy} median verifier calls {statistics.median(calls)}", file=sys.stderr)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------


def _run_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration (flags override --config)")
    g.add_argument("--config", help="JSON file of run settings")
    g.add_argument("--net", help="network file (.nnet or .json)")
    g.add_argument("--format", choices=["nnet", "json"], help="network format (default: by suffix)")
    g.add_argument("--spec", help="spec JSON file, inline JSON, or 'acas-p2'")
    g.add_argument("--mean", help="Gaussian mean, comma-separated")
    g.add_argument("--std", help="per-dimension standard deviations, comma-separated")
    g.add_argument("--cov", help="full covariance matrix file (JSON or text); whitened into the first layer")
    g.add_argument("--normalized", action="store_true", default=None,
                   help="verify in the network's normalized input coordinates (default: raw)")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--termination", choices=TERMINATION_MODES)
    g.add_argument("--pmin", type=float, help="skip unknown hulls lighter than this")
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--intermediate", choices=INTERMEDIATE_MODES,
                   help="neuron bounds feeding the relaxations (default: ibp)")
    g.add_argument("--alpha", type=float, help="impurity extent exponent")
    g.add_argument("--beta", type=float, help="longest-side scheduler threshold")
    g.add_argument("--depth", type=int, help="regression tree depth")
    g.add_argument("--weights", help="sampling weights uniform,distribution")
    g.add_argument("--n-initial", dest="n_initial", type=int)
    g.add_argument("--n-iter", dest="n_iter", type=int)
    g.add_argument("--max-attempts", dest="max_attempts", type=int)
    g.add_argument("--rank-scale", dest="rank_scale", type=float)
    g.add_argument("--delta-tail", dest="delta_tail", type=float, help="Gaussian mass left outside the root box")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--deterministic", action="store_true", default=None,
                   help="omit wall-clock fields so equal seeds give identical output")
    g.add_argument("--time-cap", dest="time_cap", type=float, help="seconds")
    g.add_argument("--iter-cap", dest="iter_cap", type=int)
    g.add_argument("--emit-hulls", dest="emit_hulls", action="store_true", default=None)
    g.add_argument("--out", help="output file (default: stdout)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probhull", description="Probabilistic safety bounds for neural networks.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _run_options()

    p = sub.add_parser("verify", parents=[common], help="bracket the safe probability")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("oracle", parents=[common], help="Monte-Carlo estimate with a Wilson interval")
    p.add_argument("--n", type=int, default=200_000)
    p.add_argument("--confidence", type=float, default=0.99)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plot", help="SVG hull map of a result file")
    p.add_argument("result")
    p.add_argument("--dims", default="0,1")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("gridsearch", parents=[common], help="sweep tree settings, CSV with Pareto flags")
    p.add_argument("--grid", required=True, help="grid JSON file")
    p.add_argument("--parallel-cells", dest="parallel_cells", type=int, default=1)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("bench", parents=[common], help="compare subdivision strategies")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--repeats", type=int, default=1, help="seeds seed..seed+repeats-1")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProbHullError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
