"""Experiment orchestration and artifact writers."""

from __future__ import annotations

import io
import json
import math
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, build_scenario, render, target_vector
from .control_synthesis import ControlProblem, approx_controllability_sweep, coupled_solve, grid_gramian
from .inclusion_select import SelectionStrategy, hypothesis_audit
from .mild_solver import MildSolver, contraction_certificate
from .spectral_model import FractionalFamilies, bound_constants


def format_number(x):
    return format(float(x), ".17g")


def dumps17(obj, indent=2, _level=0):
    """JSON text with every float written to 17 significant digits (non-finite -> null)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_string(str(k))}: {dumps17(v, indent, _level + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps17(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_number(obj) if math.isfinite(obj) else "null"
    return _string(str(obj))


def _string(s):
    return json.dumps(s)


def write_trajectories(path, traj, limit):
    """CSV rows ordered by (sample, node_index)."""
    grid = traj.grid
    n = traj.n_modes
    buf = io.StringIO()
    buf.write(",".join(["sample", "node_index", "time"] + [f"mode_{k}" for k in range(1, n + 1)] + ["is_post_impulse"]))
    buf.write("\n")
    times = [format_number(t) for t in grid.times]
    post = ["1" if p else "0" for p in grid.is_post]
    for s in range(min(limit, traj.samples)):
        idx = str(int(traj.sample_indices[s]))
        for i in range(grid.n_nodes):
            vals = ",".join(format_number(v) for v in traj.states[s, i])
            buf.write(f"{idx},{i},{times[i]},{vals},{post[i]}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def config_echo(cfg: RunConfig):
    data = asdict(cfg)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in data.items()}


def run_experiment(cfg: RunConfig, out_dir=None, workers=None):
    """Run ``cfg.experiment`` and write trajectories.csv / summary.json into ``out_dir``."""
    start = time.perf_counter()
    out = Path(out_dir or cfg.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    scn = build_scenario(cfg)
    summary = {
        "version": __version__,
        "experiment": cfg.experiment,
        "scenario": config_echo(cfg),
        "config_text": render(cfg),
    }
    solver = None
    traj = None
    strat = SelectionStrategy.parse(cfg.strategy)

    if cfg.experiment in ("simulate", "picard", "sweep"):
        solver = MildSolver(scn, cfg.steps, workers=workers)
        bounds = bound_constants(solver.fam, scn.b, scn.control)
    else:
        bounds = bound_constants(FractionalFamilies(scn.r, scn.n_modes), scn.b, scn.control)
    summary["bound_constants"] = bounds.as_dict()
    summary["constants"] = scn.constants.as_dict()
    summary["certificates"] = [contraction_certificate(scn, d, bounds).as_dict() for d in cfg.deltas]

    if cfg.experiment == "simulate":
        traj, report = solver.picard_solve(strat=strat, tol=cfg.tol, max_iter=cfg.max_iter,
                                           samples=cfg.samples, seed=cfg.seed, raise_on_failure=False)
        summary["picard"] = report.as_dict()
    elif cfg.experiment == "picard":
        prob = ControlProblem(target_vector(cfg), cfg.deltas[-1], resolvent=cfg.resolvent)
        traj, report = coupled_solve(solver, prob, strat, cfg.tol, cfg.max_iter, cfg.samples, cfg.seed,
                                     raise_on_failure=False)
        summary["picard"] = report.as_dict()
        miss = traj.terminal() - traj.targets
        summary["terminal_error"] = float(np.mean(np.sum(miss**2, axis=1)))
    elif cfg.experiment == "sweep":
        rep = approx_controllability_sweep(solver, target_vector(cfg), cfg.deltas, cfg.samples, cfg.seed, strat,
                                           cfg.tol, cfg.max_iter, resolvent=cfg.resolvent)
        summary["sweep"] = rep.as_dict()
        summary["picard"] = rep.reports[-1].as_dict()
        summary["gramian"] = grid_gramian(solver).as_dict()
        prob = ControlProblem(target_vector(cfg), cfg.deltas[-1], resolvent=cfg.resolvent)
        traj, _ = coupled_solve(solver, prob, strat, cfg.tol, cfg.max_iter,
                                max(1, min(cfg.samples, cfg.trajectory_samples)), cfg.seed, raise_on_failure=False)
    elif cfg.experiment == "audit":
        summary["audit"] = [c.as_dict() for c in hypothesis_audit(scn, seed=cfg.seed)]

    if traj is not None:
        write_trajectories(out / "trajectories.csv", traj, cfg.trajectory_samples)
    summary["wall_time"] = time.perf_counter() - start
    (out / "summary.json").write_text(dumps17(summary) + "\n", encoding="utf-8")
    return summary
