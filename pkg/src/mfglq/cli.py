"""Command-line entry point.

``mfglq {solve,verify,sweep,poa,reduce-check} CONFIG [--out DIR] [--seed U64] [--threads INT]``

Exit codes: 0 success, 2 configuration error, 3 solver or optimizer not
converged, 4 simulation divergence, 5 reduction check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .equilibrium import EquilibriumSolution, solve, solve_gmfg, solve_mfg, solve_mpmfg
from .errors import ConfigError, Divergence, MfglqError, SingularSystem
from .graphon import block_index, midpoints, step_from_weights
from .mfc import price_of_anarchy
from .model import GraphonModel, PopulationModel
from .simulate import convergence_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_DIVERGENCE = 4
EXIT_REDUCTION = 5

REDUCE_TOL = 1e-9
REDUCE_TOL_MFG = 1e-12
CSV_COLUMNS = ("t", "component_id", "p", "r", "s", "z", "variance")

log = logging.getLogger("mfglq")


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any float64."""
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def solution_csv(sol: EquilibriumSolution) -> str:
    lines = [",".join(CSV_COLUMNS)]
    t = sol.grid.times
    for k in range(sol.grid.n_steps + 1):
        for c in range(sol.dim):
            row = (fmt(t[k]), str(c), fmt(sol.p[k, c]), fmt(sol.r[k, c]), fmt(sol.s[k, c]), fmt(sol.z[k, c]), fmt(sol.variance[k, c]))
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def gap_csv(report) -> str:
    cols = ("N", "gap", "std_error", "raw_gap", "unpaired_std_error", "eq_cost", "dev_cost")
    lines = [",".join(cols)]
    for e in report.entries:
        lines.append(",".join([str(e.n_players)] + [fmt(v) for v in (e.gap, e.std_error, e.raw_gap, e.unpaired_std_error, e.eq_cost, e.dev_cost)]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands


def _solve_or_raise(cfg: RunConfig):
    model = cfg.model()
    grid = cfg.grid()
    opts = cfg.solver_options()
    return model, grid, solve(model, grid, opts)


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    model, grid, sol = _solve_or_raise(cfg)
    atomic_write(out / "solution.csv", solution_csv(sol))
    summary = {
        "class": sol.class_tag,
        "converged": sol.converged,
        "value": sol.value,
        "fb_meta": sol.fb_meta,
        "config": cfg.raw,
    }
    atomic_write(out / "summary.json", dumps(summary))
    if not sol.converged:
        log.error("forward-backward solver did not converge: %s", sol.fb_meta)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    ns = cfg.sweep()
    sim = cfg.sim_config(n_players=ns[0], threads=threads)
    model, grid, sol = _solve_or_raise(cfg)
    if not sol.converged:
        log.error("equilibrium did not converge; nothing to verify")
        return EXIT_NOT_CONVERGED
    report = convergence_sweep(model, sol, ns, sim)
    body = {
        "class": sol.class_tag,
        "value": sol.value,
        "report": report.to_dict(),
        "config": cfg.raw,
    }
    atomic_write(out / "nash_gap.json", dumps(body))
    atomic_write(out / "nash_gap.csv", gap_csv(report))
    return EXIT_OK


def cmd_poa(cfg: RunConfig, out: Path) -> int:
    if cfg.game_class != "mfg":
        raise ConfigError(f"price of anarchy is only supported for game_class mfg, not {cfg.game_class}")
    model = cfg.model()
    rep = price_of_anarchy(model, cfg.grid(), cfg.optimizer_options(), cfg.solver_options())
    body = rep.to_dict()
    body["config"] = cfg.raw
    atomic_write(out / "poa.json", dumps(body))
    if not rep.optimizer_meta.get("converged", False):
        log.error("social-cost optimizer did not converge: %s", rep.optimizer_meta)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _sup(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def reduction_diffs(model: PopulationModel, m_points: int, grid, opts) -> dict:
    """Solve ``model`` directly and as a step-graphon game; sup-norm gaps per block."""
    k = model.n_populations
    if m_points % k:
        raise ConfigError(f"m_points={m_points} is not a multiple of K={k}")
    direct = solve_mpmfg(model, grid, opts)
    gm = GraphonModel(model.coeffs, step_from_weights(model.weights), m_points)
    via = solve_gmfg(gm, grid, opts)
    blocks = block_index(midpoints(m_points), k)
    per_block = []
    for b in range(k):
        cols = np.flatnonzero(blocks == b)
        per_block.append(
            {
                "block": b,
                "z": _sup(via.z[:, cols], direct.z[:, [b]]),
                "r": _sup(via.r[:, cols], direct.r[:, [b]]),
                "p": _sup(via.p[:, cols], direct.p[:, [b]]),
                "value": _sup(via.value[cols], direct.value[b]),
            }
        )
    worst = max(max(d[f] for f in ("z", "r", "p", "value")) for d in per_block)
    out = {
        "graphon_vs_multi": per_block,
        "max_diff": worst,
        "tolerance": REDUCE_TOL,
        "converged": bool(direct.converged and via.converged),
        "passed": bool(worst <= REDUCE_TOL and direct.converged and via.converged),
    }
    if k == 1 and np.array_equal(model.weights, np.ones((1, 1))):
        single = solve_mfg(model, grid, opts)
        diffs = {f: _sup(getattr(single, f), getattr(direct, f)) for f in ("z", "r", "p", "value")}
        out["multi_vs_single"] = diffs
        out["single_tolerance"] = REDUCE_TOL_MFG
        out["passed"] = bool(out["passed"] and max(diffs.values()) <= REDUCE_TOL_MFG)
    return out


def cmd_reduce_check(cfg: RunConfig, out: Path) -> int:
    if cfg.game_class == "gmfg":
        raise ConfigError("reduce-check needs an mfg or mpmfg model plus [graphon] m_points")
    model = cfg.population_model()
    body = reduction_diffs(model, cfg.m_points, cfg.grid(), cfg.solver_options())
    body["config"] = cfg.raw
    atomic_write(out / "reduce_check.json", dumps(body))
    return EXIT_OK if body["passed"] else EXIT_REDUCTION


# ---------------------------------------------------------------------------
# argument handling


def _threads(arg: int | None, cfg: RunConfig) -> int:
    if arg is not None:
        n = arg
    elif (env := os.environ.get("MFGLQ_THREADS")):
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"MFGLQ_THREADS must be an integer, got {env!r}") from None
    else:
        n = cfg.config_threads() or 1
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfglq", description="Linear-quadratic mean field game solver and verifier.")
    ap.add_argument("command", choices=("solve", "verify", "sweep", "poa", "reduce-check"))
    ap.add_argument("config", help="path to the INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", help="master seed (overrides [simulate] seed)")
    ap.add_argument("--threads", type=int, help="worker threads for simulation")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_override("simulate", "seed", args.seed)
            cfg.seed()
        out = Path(args.out) if args.out else cfg.output_dir()
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command in ("verify", "sweep"):
            return cmd_verify(cfg, out, _threads(args.threads, cfg))
        if args.command == "poa":
            return cmd_poa(cfg, out)
        return cmd_reduce_check(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Divergence as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE if args.command in ("verify", "sweep") else EXIT_NOT_CONVERGED
    except SingularSystem as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (MfglqError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
