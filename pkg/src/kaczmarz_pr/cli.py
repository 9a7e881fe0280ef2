"""Command-line entry point.

Every subcommand accepts ``--config PATH`` naming a flat ``key = value`` file
with the same keys as the flags (dashes or underscores); flags win.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import __version__
from .chain_sim import run_state_chain
from .dominance import (
    ComparisonConfig,
    default_epochs,
    moment_recursion_probe,
    one_step_dominance_probe,
)
from .drift_flow import integrate_drift, render_svg, vector_field_grid, write_field_csv
from .experiments import (
    mc_drift_check,
    parse_config_file,
    radius_concentration_probe,
    step_budget,
    sweep_convergence,
    write_report,
    write_sweep_csv,
)
from .randsrc import SeededStream
from .retrieval import SgdConfig, SignalProblem, init_stream, random_init, run_sgd
from .state_chain import StateY

REQUIRED = object()


def _u64(text) -> int:
    val = int(text)
    if not 0 <= val < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _dims(text) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _mode(text) -> str:
    if text not in ("coupled", "idealized"):
        raise argparse.ArgumentTypeError("mode must be coupled or idealized")
    return text


# name -> list of (flag, type, default); REQUIRED marks mandatory values
COMMANDS = {
    "run": [
        ("d", int, REQUIRED), ("eta0", float, 1.0), ("init", str, "random"),
        ("init-norm", float, 1.0), ("max-steps", int, None), ("record-every", int, None),
        ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "state-run": [
        ("d", int, REQUIRED), ("r2", float, REQUIRED), ("s", float, REQUIRED),
        ("steps", int, REQUIRED), ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "drift-field": [
        ("r2-min", float, REQUIRED), ("r2-max", float, REQUIRED), ("s-min", float, REQUIRED),
        ("s-max", float, REQUIRED), ("n", int, REQUIRED), ("out", str, REQUIRED), ("svg", str, None),
    ],
    "mc-check": [
        ("d", int, 2000), ("samples", int, 1_000_000), ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "dominance": [
        ("d", int, 4096), ("paths", int, 2000), ("gamma1", float, 0.1), ("kappa", float, 0.1),
        ("c-eps", float, 0.01), ("delta-budget", float, 0.05), ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "moments": [
        ("d", int, 10_000), ("paths", int, 10_000), ("epochs", int, None), ("mode", _mode, "idealized"),
        ("kappa", float, 0.1), ("c-eps", float, 0.01), ("gamma1", float, 0.1),
        ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "sweep": [
        ("dims", _dims, REQUIRED), ("runs", int, 200), ("seed", _u64, 0), ("out", str, REQUIRED),
    ],
    "radius-probe": [
        ("d", int, 100), ("runs", int, 5000), ("r0sq", float, 4.0), ("seed", _u64, 0),
        ("multiplier", float, 10.0), ("out", str, REQUIRED),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kaczmarz-pr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, flags in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key = value file")
        for flag, typ, default in flags:
            hint = "required" if default is REQUIRED else f"default {default}"
            sp.add_argument(f"--{flag}", type=typ, default=None, help=hint)
    return p


def resolve(parser, args) -> argparse.Namespace:
    """Merge flags over config file over defaults."""
    file_vals = parse_config_file(args.config) if args.config else {}
    out = argparse.Namespace(command=args.command)
    for flag, typ, default in COMMANDS[args.command]:
        key = flag.replace("-", "_")
        val = getattr(args, key)
        if val is None and key in file_vals:
            try:
                val = typ(file_vals[key])
            except (ValueError, argparse.ArgumentTypeError) as exc:
                parser.error(f"config value for {key}: {exc}")
        if val is None:
            if default is REQUIRED:
                parser.error(f"{args.command}: --{flag} is required")
            val = default
        setattr(out, key, val)
    return out


def _initial_point(a, problem: SignalProblem, stream: SeededStream) -> np.ndarray:
    if a.init == "random":
        return random_init(a.d, init_stream(stream), norm=a.init_norm)
    if a.init == "star":
        return problem.x_star.copy()
    if a.init == "minus-star":
        return -problem.x_star
    if a.init.startswith("file:"):
        with open(a.init[5:]) as fh:
            x = np.array(fh.read().replace(",", " ").split(), dtype=float)
        if x.size != a.d:
            raise SystemExit(f"init file has {x.size} entries, expected {a.d}")
        return x
    raise SystemExit(f"unknown init {a.init!r}")


def cmd_run(a):
    problem = SignalProblem.basis(a.d)
    stream = SeededStream(a.seed, 0)
    x0 = _initial_point(a, problem, stream)
    cfg = SgdConfig(
        max_steps=a.max_steps or step_budget(a.d), eta0=a.eta0, init=x0, record_every=a.record_every,
    )
    traj = run_sgd(problem, cfg, stream)
    traj.write_csv(a.out)
    print(f"final psi {traj.final_psi:.6g}; tau1={traj.tau1} tau2a={traj.tau2a} tau2b={traj.tau2b}")


def cmd_state_run(a):
    traj = run_state_chain(StateY(a.r2, a.s), a.d, a.steps, SeededStream(a.seed, 0))
    traj.write_csv(a.out)
    print(f"final psi {traj.final_psi:.6g}; tau1={traj.tau1} tau2a={traj.tau2a} tau2b={traj.tau2b}")


def cmd_drift_field(a):
    rows = vector_field_grid((a.r2_min, a.r2_max), (a.s_min, a.s_max), a.n)
    write_field_csv(rows, a.out)
    if a.svg:
        # overlay the integral curve started near the top edge, just off the equator
        r0 = a.r2_max
        s0 = min(max(0.05, a.s_min), a.s_max, math.sqrt(max(r0, 0.0)))
        curve = integrate_drift(StateY(r0, s0), dt=0.01, t_max=30.0)
        with open(a.svg, "w") as fh:
            fh.write(render_svg(rows, curve))
    print(f"{len(rows)} grid points")


def cmd_mc_check(a):
    rep = mc_drift_check(a.d, a.samples, SeededStream(a.seed, 0))
    write_report(rep, a.out)
    print(f"max |z| drift {rep['max_abs_z_drift']:.3f}, identities {rep['max_abs_z_identities']:.3f}")


def cmd_dominance(a):
    cfg = ComparisonConfig(a.d, kappa=a.kappa, c_eps=a.c_eps, gamma1=a.gamma1)
    y = StateY(1.0, 0.0)
    main_rep = one_step_dominance_probe(y, cfg, a.paths, SeededStream(a.seed, 0).generator(), a.delta_budget)
    neg = one_step_dominance_probe(
        y, cfg, a.paths, SeededStream(a.seed, 1).generator(), a.delta_budget, sigma_scale=2.0
    )
    shifted = one_step_dominance_probe(
        StateY(1.0, cfg.gamma1 / 2), cfg, a.paths, SeededStream(a.seed, 2).generator(), a.delta_budget
    )
    rep = {
        "config": dict(cfg.to_dict(), paths=a.paths, seed=a.seed, y=[y.r2, y.s], units="chain"),
        "per_epoch": [],
        "dominance": {
            "gap": main_rep["gap"],
            "delta_budget": a.delta_budget,
            "pass": main_rep["pass"],
            "permutation_floor_q95": main_rep["permutation_floor_q95"],
            "delta_reference_unit_c": main_rep["delta_reference_unit_c"],
            "epsilon": main_rep["epsilon"],
            "negative_control": {"sigma_scale": 2.0, "gap": neg["gap"], "pass": neg["pass"]},
            "shifted_state": {"y": shifted["y"], "gap": shifted["gap"], "pass": shifted["pass"]},
        },
        "version": __version__,
    }
    write_report(rep, a.out)
    print(f"gap {main_rep['gap']:.4f} (budget {a.delta_budget}); negative control gap {neg['gap']:.4f}")


def cmd_moments(a):
    cfg = ComparisonConfig(a.d, kappa=a.kappa, c_eps=a.c_eps, gamma1=a.gamma1)
    epochs = a.epochs if a.epochs is not None else default_epochs(cfg)
    res = moment_recursion_probe(cfg, epochs, a.paths, SeededStream(a.seed, 0).generator(), mode=a.mode)
    rep = {
        "config": dict(cfg.to_dict(), paths=a.paths, epochs=epochs, mode=a.mode, seed=a.seed, units="chain"),
        "per_epoch": res["per_epoch"],
        "dominance": None,
        "summary": {
            "final_ratio_m2_over_sqrt_m4": res["final_ratio_m2_over_sqrt_m4"],
            "strictly_increasing": res["strictly_increasing"],
            "growth_factor_per_epoch": res["growth_factor_per_epoch"],
            "increments": res["increments"],
            "m2_ratio_checks": res["m2_ratio_checks"],
        },
        "version": __version__,
    }
    write_report(rep, a.out)
    print(f"E s^2 / sqrt(E s^4) = {res['final_ratio_m2_over_sqrt_m4']:.4f} after {epochs} epochs")


def cmd_sweep(a):
    rows = sweep_convergence(a.dims, a.runs, a.seed)
    write_sweep_csv(rows, a.out)
    ratios = [r["ratio"] for r in rows]
    if all(math.isfinite(r) for r in ratios):
        print(f"max/min ratio {max(ratios) / min(ratios):.3f}")


def cmd_radius_probe(a):
    rep = radius_concentration_probe(a.d, a.runs, a.r0sq, a.seed, multiplier=a.multiplier)
    write_report(rep, a.out)
    print("max |z| " + format(max(abs(r["z"]) for r in rep["mean_recursion"]), ".3f"))


HANDLERS = {
    "run": cmd_run,
    "state-run": cmd_state_run,
    "drift-field": cmd_drift_field,
    "mc-check": cmd_mc_check,
    "dominance": cmd_dominance,
    "moments": cmd_moments,
    "sweep": cmd_sweep,
    "radius-probe": cmd_radius_probe,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = resolve(parser, parser.parse_args(argv))
    try:
        HANDLERS[args.command](args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
