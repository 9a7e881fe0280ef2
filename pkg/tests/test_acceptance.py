"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (also collected in the terminal summary)
before asserting, so a failing criterion still reports its numbers.
"""

import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from kaczmarz_pr.chain_sim import evolve_paths
from kaczmarz_pr.dominance import (
    ComparisonConfig,
    default_epochs,
    moment_recursion_probe,
    one_step_dominance_probe,
)
from kaczmarz_pr.drift_flow import closed_form_r2, integrate_drift
from kaczmarz_pr.experiments import (
    convergence_runs,
    mc_drift_check,
    phase3_rates,
    radius_concentration_probe,
    summarize_convergence,
    sweep_convergence,
)
from kaczmarz_pr.randsrc import SeededStream, sample_gaussian, streams_for_runs
from kaczmarz_pr.retrieval import SignalProblem, init_stream, random_init, run_sgd_batch
from kaczmarz_pr.state_chain import StateY, beta_variance, increments

pytestmark = pytest.mark.slow
SEED = 2026


@pytest.fixture(scope="module")
def mc_report():
    t0 = time.perf_counter()
    rep = mc_drift_check(2000, 1_000_000, SeededStream(SEED, 1))
    rep["elapsed"] = time.perf_counter() - t0
    return rep


@pytest.fixture(scope="module")
def d128_runs():
    t0 = time.perf_counter()
    res = convergence_runs(128, 200, seed=SEED + 6, record=True)
    return res, time.perf_counter() - t0


def test_c01_drift_closed_forms(mc_report):
    z = mc_report["max_abs_z_drift"]
    ok = z <= 4 and mc_report["elapsed"] <= 60
    record_criterion(1, ok, f"max |z| over 9 states = {z:.3f} (<= 4), {mc_report['elapsed']:.1f}s")
    assert ok


def test_c02_angle_identities(mc_report):
    z = mc_report["max_abs_z_identities"]
    ok = z <= 4 and len(mc_report["identities"]) == 4
    record_criterion(2, ok, f"max |z| over 4 angles x 3 identities = {z:.3f} (<= 4)")
    assert ok


def test_c03_beta_variance():
    t0 = time.perf_counter()
    target = 4 * (math.pi - 2) / math.pi
    quad = beta_variance(StateY(1.0, 0.0))
    rng = SeededStream(SEED, 3).generator()
    n, chunk = 10_000_000, 1_000_000
    s1 = s2 = s3 = s4 = 0.0
    for _ in range(n // chunk):
        g = sample_gaussian(rng, size=(2, chunk))
        _, b = increments(1.0, 0.0, g[0], g[1])
        s1 += b.sum()
        s2 += (b * b).sum()
        s3 += (b**3).sum()
        s4 += (b**4).sum()
    m = s1 / n
    var = s2 / n - m * m
    mu4 = s4 / n - 4 * m * s3 / n + 6 * m * m * s2 / n - 3 * m**4
    se = math.sqrt((mu4 - var * var) / n)
    elapsed = time.perf_counter() - t0
    ok = abs(quad - target) <= 1e-8 and abs(var - quad) <= 4 * se and elapsed <= 30
    record_criterion(
        3, ok, f"quadrature {quad:.12f} vs 4(pi-2)/pi (err {abs(quad - target):.1e}); "
        f"MC {var:.5f}, z = {(var - quad) / se:.2f}; {elapsed:.1f}s",
    )
    assert ok


def test_c04_state_chain_faithfulness():
    d, runs, ks = 64, 2000, (64, 320)
    prob = SignalProblem.basis(d)
    streams = streams_for_runs(SEED + 4, runs)
    inits = np.array([random_init(d, init_stream(st), norm=2.0) for st in streams])
    res = run_sgd_batch(prob, inits, 1.0, max(ks), streams, record_every=64)
    steps = res.trajectories[0].steps
    r2_0, s_0 = np.einsum("rd,rd->r", inits, inits), inits @ prob.x_star
    _, _, snaps = evolve_paths(r2_0, s_0, d, max(ks), SeededStream(SEED + 4, 1 << 40).generator(), record_at=ks)
    worst = 0.0
    for k in ks:
        row = int(np.flatnonzero(steps == k)[0])
        full = {"r2": np.array([t.r2[row] for t in res.trajectories]), "s": np.array([t.s[row] for t in res.trajectories])}
        chain = {"r2": snaps[k][0], "s": snaps[k][1]}
        for key in ("r2", "s"):
            a, b = full[key], chain[key]
            se_mean = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
            worst = max(worst, abs(a.mean() - b.mean()) / se_mean)

            def var_se(x):
                c = x - x.mean()
                return math.sqrt((np.mean(c**4) - np.mean(c**2) ** 2) / x.size)

            se_var = math.sqrt(var_se(a) ** 2 + var_se(b) ** 2)
            worst = max(worst, abs(a.var(ddof=1) - b.var(ddof=1)) / se_var)
    ok = worst <= 3
    record_criterion(4, ok, f"max standardized gap (means and variances, k in {ks}) = {worst:.3f} (<= 3)")
    assert ok


def test_c05_radius_recursion():
    t0 = time.perf_counter()
    rep = radius_concentration_probe(100, 5000, 4.0, seed=SEED + 5)
    elapsed = time.perf_counter() - t0
    z = max(abs(r["z"]) for r in rep["mean_recursion"])
    ok = z <= 4 and elapsed <= 120
    record_criterion(5, ok, f"max |z| at k in (50, 100, 200) = {z:.3f} (<= 4), {elapsed:.1f}s")
    assert ok


def test_c06_global_convergence(d128_runs):
    res, elapsed = d128_runs
    frac = float(res.success.mean())
    ok = frac >= 0.8 and elapsed <= 300
    record_criterion(6, ok, f"success fraction at d=128 = {frac:.3f} (>= 0.8), {elapsed:.1f}s")
    assert ok


def test_c07_time_scaling():
    rows = sweep_convergence([32, 64, 128, 256], 200, seed=SEED + 7)
    ratios = [r["ratio"] for r in rows]
    spread = max(ratios) / min(ratios)
    ok = all(math.isfinite(r) for r in ratios) and spread <= 3
    record_criterion(7, ok, "median tau2b/(d ln d) = " + ", ".join(f"{r:.3f}" for r in ratios) + f"; max/min = {spread:.3f} (<= 3)")
    assert ok


def test_c08_phase3_rate(d128_runs):
    res, _ = d128_runs
    d = 128
    rates = [r for r in phase3_rates(res) if r is not None]
    inside = [0.25 / d <= 1 - r <= 1.5 / d for r in rates]
    frac = float(np.mean(inside)) if rates else 0.0
    med = float(np.median([(1 - r) * d for r in rates])) if rates else float("nan")
    ok = len(rates) > 0 and frac >= 0.9
    record_criterion(8, ok, f"{frac:.3f} of {len(rates)} converged runs inside [0.25/d, 1.5/d] (>= 0.9); median d(1-rho) = {med:.3f}")
    assert ok


def test_c09_flow():
    dt = 1e-3
    y0 = StateY(4.0, 0.05)
    path = integrate_drift(y0, dt=dt, t_max=30.0)
    err = max(abs(r - closed_form_r2(t, 4.0)) for t, r in zip(path.times, path.r2))

    def err_at(h):
        p = integrate_drift(y0, dt=h, t_max=30.0)
        return max(abs(r - closed_form_r2(t, 4.0)) for t, r in zip(p.times, p.r2))

    order = err_at(0.01) / err_at(0.005)
    ends = []
    for s0, target in ((0.05, 1.0), (-0.05, -1.0)):
        p = integrate_drift(StateY(4.0, s0), dt=dt, t_max=30.0)
        ends.append((p.psi[-1], p.s[-1], target))
    conv = all(psi <= 0.01 and abs(s - tgt) < 0.1 for psi, s, tgt in ends)
    ok = err <= 10 * dt**4 and order >= 8 and conv
    record_criterion(
        9, ok, f"max r2 error {err:.2e} (<= {10 * dt**4:.0e}); halving ratio {order:.1f} (>= 8); "
        f"final Psi {ends[0][0]:.1e} / {ends[1][0]:.1e} (<= 0.01)",
    )
    assert ok


def test_c10_one_step_dominance():
    t0 = time.perf_counter()
    cfg = ComparisonConfig(4096)
    y = StateY(1.0, 0.0)
    rep = one_step_dominance_probe(y, cfg, 2000, SeededStream(SEED + 10, 0).generator(), 0.05)
    neg = one_step_dominance_probe(y, cfg, 2000, SeededStream(SEED + 10, 1).generator(), 0.05, sigma_scale=2.0)
    elapsed = time.perf_counter() - t0
    ok = rep["gap"] <= 0.05 and not neg["pass"] and elapsed <= 300
    record_criterion(
        10, ok, f"gap {rep['gap']:.4f} (<= 0.05, permutation q95 {rep['permutation_floor_q95']:.4f}); "
        f"doubled-sigma control gap {neg['gap']:.4f} (must fail); {elapsed:.1f}s",
    )
    assert ok


def test_c11_moment_recursion():
    cfg = ComparisonConfig(10_000)
    T = default_epochs(cfg)
    rep = moment_recursion_probe(cfg, T, 10_000, SeededStream(SEED + 11).generator(), mode="idealized")
    ratio = rep["final_ratio_m2_over_sqrt_m4"]
    ok = ratio >= 0.1 and rep["strictly_increasing"]
    lo = min(i["ci95_lo"] for i in rep["increments"])
    record_criterion(11, ok, f"T = {T}: E s^2 / sqrt(E s^4) = {ratio:.4f} (>= 0.1); smallest increment CI lower end {lo:.2e} (> 0)")
    assert ok


PROPERTY_TESTS = [
    "test_randsrc.py::test_sphere_norm_property",
    "test_randsrc.py::test_reproducible_and_distinct_streams",
    "test_randsrc.py::test_chunking_does_not_change_draws",
    "test_randsrc.py::test_marginal_matches_full_vector",
    "test_retrieval.py::test_phase_symmetry",
    "test_retrieval.py::test_rotation_invariance_statistical",
    "test_retrieval.py::test_projection_consistency_of_records",
    "test_retrieval.py::test_batch_records_equal_projection_for_every_run",
    "test_retrieval.py::test_hyperplane_projection_property",
    "test_state_chain.py::test_drift_symmetries",
    "test_state_chain.py::test_drift_examples",
    "test_state_chain.py::test_state_step_matches_projected_sgd",
    "test_retrieval.py::test_lyapunov_equals_squared_distance",
    "test_drift_flow.py::test_rk4_order",
    "test_drift_flow.py::test_phase1_duration_bound",
    "test_drift_flow.py::test_basin_dichotomy",
    "test_dominance.py::test_soft_threshold_contraction_and_odd",
    "test_dominance.py::test_batch_kernel_moments",
    "test_dominance.py::test_dominance_reflexive_and_transitive",
    "test_dominance.py::test_dominance_transitive_constructed_triple",
    "test_dominance.py::test_truncated_gaussian_ordering",
    "test_trajectory.py::test_stopping_monotone_on_chains",
    "test_experiments.py::test_doob_reconstruction_exact",
    "test_experiments.py::test_rate_fit_fixtures",
    "test_experiments.py::test_rate_fit_recovers_geometric_rates",
    "test_experiments.py::test_sweep_report_deterministic",
    "test_cli.py::test_json_reports_deterministic",
    "test_cli.py::test_drift_field",
    "test_cli.py::test_run_and_determinism",
]


def test_c12_property_suite():
    here = Path(__file__).parent
    ids = [str(here / p) for p in PROPERTY_TESTS]
    res = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
        capture_output=True, text=True, cwd=here.parent,
    )
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    ok = res.returncode == 0
    record_criterion(12, ok, f"{len(ids)} invariant tests: {tail}")
    assert ok, res.stdout[-3000:]
