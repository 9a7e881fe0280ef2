"""Experiment orchestration: diagnostics, sweeps and deterministic reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .randsrc import SeededStream, sample_gaussian, sample_uv_marginal, streams_for_runs
from .retrieval import SignalProblem, init_stream, random_init, run_sgd_batch
from .state_chain import (
    drift_arr,
    event_A,
    increments,
    moment_a1a2_A,
    moment_a1sq_A,
    prob_A,
)
from .trajectory import StoppingConfig, Trajectory

SUCCESS_PSI = 1e-6
BUDGET_FACTOR = 50.0
MC_GRID = tuple((r2, s) for r2 in (0.5, 1.0, 1.5) for s in (-0.5, 0.0, 0.5 * math.sqrt(r2)))
MC_THETAS = (math.pi / 6, math.pi / 3, math.pi / 2, 2 * math.pi / 3)


# ---------------------------------------------------------------- reports

def _fmt(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_fmt(str(k), indent, 0)}: {_fmt(obj[k], indent, level + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + _fmt(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(obj, indent: int = 2) -> str:
    """JSON with sorted keys and every float written as .17g (NaN/inf -> null)."""
    return _fmt(obj, indent, 0) + "\n"


def write_report(obj, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_report(obj))


@dataclass
class RunReport:
    config: dict
    seeds: dict
    runs: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seeds": self.seeds,
            "runs": self.runs,
            "aggregate": self.aggregate,
            "version": __version__,
        }

    def to_json(self) -> str:
        return dumps_report(self.to_dict())


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment. Values stay strings."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, val = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


# ---------------------------------------------------------------- trajectory diagnostics

def doob_decompose(traj: Trajectory):
    """Split y_k - y_0 into summed drift and the martingale remainder.

    Returns two (n, 2) arrays indexed like the trajectory rows, columns (r2, s).
    """
    steps = np.asarray(traj.steps)
    if len(steps) == 0:
        raise ValueError("empty trajectory")
    if np.any(np.diff(steps) != 1):
        raise ValueError("Doob decomposition needs a trajectory recorded at every step")
    a, b = drift_arr(traj.r2[:-1], traj.s[:-1])
    inc = np.column_stack([np.atleast_1d(a), np.atleast_1d(b)]) / traj.d
    drift_path = np.vstack([np.zeros((1, 2)), np.cumsum(inc, axis=0)])
    y = np.column_stack([traj.r2, traj.s])
    fluct_path = (y - y[0]) - drift_path
    return drift_path, fluct_path


def fit_phase3_rate(traj: Trajectory, from_step: int) -> float:
    """Per-step contraction rho_hat from a least-squares fit of ln Psi on step."""
    psi = traj.psi
    sel = (np.asarray(traj.steps) >= from_step) & (psi > 0)
    if sel.sum() < max(5 * traj.d, 2):
        raise ValueError(f"need at least {5 * traj.d} recorded steps with Psi > 0 after step {from_step}")
    k = np.asarray(traj.steps, dtype=float)[sel]
    slope = np.polyfit(k - k[0], np.log(psi[sel]), 1)[0]
    return float(math.exp(slope))


def sup_radius_deviation(traj: Trajectory, horizon: int, start: int | None = None) -> float:
    """max |r^2 - 1| over recorded steps in [start, start + horizon]; start defaults to tau1."""
    k0 = traj.tau1 if start is None else start
    if k0 is None:
        return float("nan")
    steps = np.asarray(traj.steps)
    sel = (steps >= k0) & (steps <= k0 + horizon)
    if not sel.any():
        return float("nan")
    return float(np.max(np.abs(traj.r2[sel] - 1.0)))


# ---------------------------------------------------------------- Monte Carlo checks

def _zscore(samples, target) -> float:
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size))
    return 0.0 if se == 0 else (mean - target) / se


def mc_drift_check(d: int, samples: int, stream: SeededStream, grid=MC_GRID, thetas=MC_THETAS) -> dict:
    """z-scores of empirical increment means against the closed-form drift,
    plus the three sign-mismatch identities under Gaussian (u, v)."""
    if samples < 2:
        raise ValueError("need at least two samples")
    rows = []
    for i, (r2, s) in enumerate(grid):
        rng = stream.child(i).generator()
        u, v = sample_uv_marginal(d, rng, size=samples)
        a, b = increments(r2, s, u, v)
        abar, bbar = drift_arr(r2, s)
        rows.append({
            "r2": r2, "s": s,
            "alpha_bar": float(abar), "beta_bar": float(bbar),
            "alpha_mean": float(a.mean()), "beta_mean": float(b.mean()),
            "z_alpha": _zscore(a, float(abar)), "z_beta": _zscore(b, float(bbar)),
        })
    ids = []
    for j, th in enumerate(thetas):
        rng = stream.child(len(grid) + j).generator()
        g = sample_gaussian(rng, size=(2, samples))
        ind = event_A(th, g[0], g[1]).astype(float)
        ids.append({
            "theta": th,
            "z_prob_A": _zscore(ind, prob_A(th)),
            "z_a1sq_A": _zscore(g[0] ** 2 * ind, moment_a1sq_A(th)),
            "z_a1a2_A": _zscore(g[0] * g[1] * ind, moment_a1a2_A(th)),
        })
    zs = [abs(r[k]) for r in rows for k in ("z_alpha", "z_beta")]
    zi = [abs(r[k]) for r in ids for k in ("z_prob_A", "z_a1sq_A", "z_a1a2_A")]
    return {
        "config": {"d": d, "samples": samples, "seed": stream.base_seed},
        "drift": rows,
        "identities": ids,
        "max_abs_z_drift": max(zs),
        "max_abs_z_identities": max(zi),
        "version": __version__,
    }


def radius_concentration_probe(
    d: int,
    runs: int,
    r0sq: float,
    seed: int,
    horizon: int | None = None,
    ks=(50, 100, 200),
    multiplier: float = 10.0,
    stopping: StoppingConfig = StoppingConfig(),
) -> dict:
    """Mean radius recursion at fixed steps and the post-tau1 sup deviation."""
    if runs < 100:
        raise ValueError("radius probe needs at least 100 runs")
    if r0sq <= 0:
        raise ValueError("r0sq must be positive")
    horizon = int(math.ceil(d * math.log(d))) if horizon is None else int(horizon)
    margin = stopping.radius_margin(d)
    gap0 = abs(r0sq - 1.0)
    t1_guess = 0 if gap0 <= margin else int(math.ceil(2.0 * d * math.log(gap0 / margin))) + d
    max_steps = max(max(ks), t1_guess + horizon)
    problem = SignalProblem.basis(d)
    streams = streams_for_runs(seed, runs)
    inits = [random_init(d, init_stream(st), norm=math.sqrt(r0sq)) for st in streams]
    res = run_sgd_batch(problem, inits, 1.0, max_steps, streams, record_every=1, stopping=stopping)
    trajs = res.trajectories
    R2 = np.vstack([t.r2 for t in trajs])  # every run recorded at every step
    mean_rows = []
    for k in ks:
        dev = R2[:, k] - 1.0
        se = float(dev.std(ddof=1) / math.sqrt(runs))
        target = (r0sq - 1.0) * (1.0 - 1.0 / d) ** k
        mean_rows.append({
            "k": k, "mean": float(dev.mean()), "se": se, "closed_form": target,
            "z": 0.0 if se == 0 else (float(dev.mean()) - target) / se,
        })
    sups = []
    truncated = 0
    for t in trajs:
        if t.tau1 is not None and t.tau1 + horizon > max_steps:
            truncated += 1
        sups.append(sup_radius_deviation(t, horizon))
    sups = np.asarray(sups)
    mult = sups / margin
    ok = ~np.isnan(mult)
    return {
        "config": {"d": d, "runs": runs, "r0sq": r0sq, "seed": seed, "horizon": horizon,
                   "multiplier": multiplier, "radius_margin_scale": stopping.radius_margin_scale},
        "mean_recursion": mean_rows,
        "sup_deviation": {
            "runs_with_tau1": int(ok.sum()),
            "windows_truncated": truncated,
            "max_multiplier": float(mult[ok].max()) if ok.any() else None,
            "median_multiplier": float(np.median(mult[ok])) if ok.any() else None,
            "fraction_exceeding": float(np.mean(mult[ok] > multiplier)) if ok.any() else None,
        },
        "version": __version__,
    }


# ---------------------------------------------------------------- convergence

def step_budget(d: int, factor: float = BUDGET_FACTOR) -> int:
    return int(math.ceil(factor * d * math.log(d)))


def convergence_runs(
    d: int,
    runs: int,
    seed: int,
    stream_offset: int = 0,
    record: bool = False,
    psi_tol: float = SUCCESS_PSI,
    budget_factor: float = BUDGET_FACTOR,
    stopping: StoppingConfig = StoppingConfig(),
    inits=None,
):
    """Random unit-norm inits, step 1/d, stop at Psi <= psi_tol or the budget."""
    problem = SignalProblem.basis(d)
    streams = streams_for_runs(seed, runs, offset=stream_offset)
    if inits is None:
        inits = [random_init(d, init_stream(st)) for st in streams]
    return run_sgd_batch(
        problem, inits, 1.0, step_budget(d, budget_factor), streams,
        record_every=1 if record else None, stopping=stopping, stop_psi=psi_tol, record=record,
    )


def summarize_convergence(d: int, res) -> dict:
    t2b = np.array([t.tau2b if t.tau2b is not None else -1 for t in res.trajectories])
    hit = t2b >= 0
    med = float(np.median(t2b[hit])) if hit.any() else float("nan")
    return {
        "d": d,
        "runs": len(res.trajectories),
        "success_fraction": float(np.mean(res.success)),
        "tau2b_detected": int(hit.sum()),
        "median_tau2b": med,
        "ratio": med / (d * math.log(d)),
    }


def sweep_convergence(dims, runs: int, seed: int, **kw) -> list[dict]:
    dims = [int(x) for x in dims]
    if len(dims) < 2:
        raise ValueError("sweep needs at least two dimensions")
    # stream indices are keyed by d so adding a dimension leaves the others unchanged
    return [summarize_convergence(d, convergence_runs(d, runs, seed, stream_offset=d << 32, **kw)) for d in dims]


def write_sweep_csv(rows, path) -> None:
    cols = ["d", "runs", "success_fraction", "tau2b_detected", "median_tau2b", "ratio"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(cols)
        for r in rows:
            wr.writerow([format(r[c], ".17g") if isinstance(r[c], float) else r[c] for c in cols])


def phase3_rates(res) -> list[float | None]:
    """Fitted per-step rate for each converged run recorded at every step."""
    out = []
    for t, ok in zip(res.trajectories, res.success):
        if not ok or t.tau2b is None:
            out.append(None)
            continue
        try:
            out.append(fit_phase3_rate(t, t.tau2b))
        except ValueError:
            out.append(None)
    return out


def fluctuation_report(traj: Trajectory, k: int) -> dict:
    """Size of the drift and fluctuation parts at step k (diagnostic only)."""
    drift_path, fluct = doob_decompose(traj)
    k = min(k, len(traj) - 1)
    return {
        "k": int(traj.steps[k]),
        "drift_norm": float(np.linalg.norm(drift_path[k])),
        "fluct_norm": float(np.linalg.norm(fluct[k])),
        "sqrt_k_over_d": math.sqrt(traj.steps[k]) / traj.d,
    }
