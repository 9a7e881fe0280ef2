"""Epoch-batched comparison process and empirical stochastic dominance.

Everything here is in chain units: one step moves the state by (alpha, beta)/d.
An epoch of B frozen-state increments therefore has mean (B/d) beta_bar(y) and
standard deviation sqrt(B)/d * sigma0(y), where sigma0^2 = Var beta(y) is the
raw per-step variance from :func:`state_chain.beta_moments_arr` (Gaussian
limit of (u, v); the sphere marginal differs by O(1/d)).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .randsrc import as_generator, sample_gaussian, sample_uv_marginal
from .state_chain import (
    StateY,
    beta_moments_arr,
    drift_arr,
    increments,
    state_step_arr,
)
from .trajectory import StoppingConfig


class RegionError(ValueError):
    """State outside the region where the one-epoch comparison applies."""


def default_epoch_length(d: int) -> int:
    return int(math.ceil(d ** (2.0 / 3.0) * math.log(d)))


@dataclass(frozen=True)
class ComparisonConfig:
    d: int
    B: int | None = None
    kappa: float = 0.1
    c_eps: float = 0.01
    gamma1: float = 0.1

    def __post_init__(self):
        if self.d < 3:
            raise ValueError("d must be >= 3")
        if self.B is None:
            object.__setattr__(self, "B", default_epoch_length(self.d))
        if self.B < 1:
            raise ValueError("B must be positive")
        if not 0 <= self.kappa < 1:
            raise ValueError("kappa must lie in [0, 1)")
        if self.c_eps < 0:
            raise ValueError("c_eps must be nonnegative")
        if not 0 < self.gamma1 < 0.5:
            raise ValueError("gamma1 must lie in (0, 1/2)")

    def to_dict(self) -> dict:
        return asdict(self)


def soft_threshold(x, a):
    """sign(x) * max(|x| - a, 0)."""
    a = np.asarray(a, dtype=float)
    if np.any(a < 0):
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - a, 0.0)
    return float(out) if out.ndim == 0 else out


def epsilon_err(s, cfg: ComparisonConfig):
    d, B = cfg.d, cfg.B
    ld = math.log(d)
    floor = math.sqrt(ld / B)
    out = cfg.c_eps * (B * B * ld / (d * d)) * np.maximum(np.abs(np.asarray(s, dtype=float)), floor)
    return float(out) if out.ndim == 0 else out


def drift_b(s, cfg: ComparisonConfig):
    out = (1.0 + cfg.kappa * cfg.B / cfg.d) * np.asarray(s, dtype=float)
    return float(out) if out.ndim == 0 else out


def sigma0(y_r2, y_s):
    """Raw per-step standard deviation of beta at y (Gaussian limit)."""
    _, var = beta_moments_arr(y_r2, y_s)
    return np.sqrt(var)


def batch_kernel_Q(y: StateY, cfg: ComparisonConfig, rng, reps: int | None = None):
    """y plus (1/d) times the sum of B i.i.d. increments evaluated at frozen y.

    With ``reps`` set, returns arrays (r2, s) of that many independent draws.
    """
    rng = as_generator(rng)
    n = 1 if reps is None else reps
    tot_a = np.zeros(n)
    tot_b = np.zeros(n)
    chunk = max(1, (1 << 22) // n)
    done = 0
    while done < cfg.B:
        m = min(chunk, cfg.B - done)
        u, v = sample_uv_marginal(cfg.d, rng, size=(m, n))
        a, b = increments(y.r2, y.s, u, v)
        tot_a += a.sum(axis=0)
        tot_b += b.sum(axis=0)
        done += m
    r2 = y.r2 + tot_a / cfg.d
    s = y.s + tot_b / cfg.d
    if reps is None:
        return StateY(float(r2[0]), float(s[0]))
    return r2, s


def hat_s_step(s_hat, y: StateY | None, cfg: ComparisonConfig, rng, sigma=None):
    """One step of the comparison kernel L(s, y) = rho_{eps(s)}[b(s) + sqrt(B) sigma(y) g].

    In chain units the noise is sqrt(B)/d * sigma0(y).  Passing ``sigma``
    (scalar or per-path array of raw sigma0 values) skips the quadrature and
    ignores ``y``.
    """
    s_hat = np.asarray(s_hat, dtype=float)
    if sigma is None:
        sigma = sigma0(y.r2, y.s)
    g = sample_gaussian(as_generator(rng), size=s_hat.shape if s_hat.ndim else None)
    x = drift_b(s_hat, cfg) + math.sqrt(cfg.B) / cfg.d * np.asarray(sigma) * g
    return soft_threshold(x, epsilon_err(s_hat, cfg))


def empirical_dominance_check(samples_x, samples_y, delta: float = 0.0):
    """Does X stochastically dominate Y up to delta?

    Uses the CDF criterion F_X <= F_Y + delta, evaluated at every sample
    point. Returns (passes, gap) with gap = sup_a (F_X(a) - F_Y(a)) >= 0.
    """
    x = np.sort(np.asarray(samples_x, dtype=float).ravel())
    y = np.sort(np.asarray(samples_y, dtype=float).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    pts = np.concatenate([x, y])
    fx = np.searchsorted(x, pts, side="right") / x.size
    fy = np.searchsorted(y, pts, side="right") / y.size
    gap = float(max(0.0, np.max(fx - fy)))
    return gap <= delta, gap


def permutation_gap_floor(samples_x, samples_y, rng, n_perm: int = 200, q: float = 0.95) -> float:
    """Quantile of the dominance gap when both samples come from the pooled law."""
    rng = as_generator(rng)
    pool = np.concatenate([np.ravel(samples_x), np.ravel(samples_y)])
    nx = np.size(samples_x)
    gaps = np.empty(n_perm)
    for i in range(n_perm):
        perm = rng.permutation(pool)
        gaps[i] = empirical_dominance_check(perm[:nx], perm[nx:])[1]
    return float(np.quantile(gaps, q))


def in_comparison_region(y: StateY, cfg: ComparisonConfig, radius_scale: float = 1.0) -> bool:
    margin = radius_scale * math.log(cfg.d) / math.sqrt(cfg.d)
    return abs(y.r2 - 1.0) <= margin and abs(y.s) < cfg.gamma1


def chain_epoch(y: StateY, cfg: ComparisonConfig, rng, paths: int):
    """s after B true chain steps from y, for ``paths`` independent copies."""
    rng = as_generator(rng)
    r2 = np.full(paths, y.r2)
    s = np.full(paths, y.s)
    for _ in range(cfg.B):
        u, v = sample_uv_marginal(cfg.d, rng, size=paths)
        r2, s = state_step_arr(r2, s, u, v, cfg.d)
    return r2, s


def surrogate_epoch(y: StateY, cfg: ComparisonConfig, rng, paths: int, sigma_scale: float = 1.0):
    """Thresholded Gaussian epoch rho_{eps(s)}[s + (B/d) beta_bar + sqrt(B)/d sigma0 g]."""
    rng = as_generator(rng)
    _, bb = drift_arr(y.r2, y.s)
    sig = float(sigma0(y.r2, y.s)[0]) * sigma_scale
    g = sample_gaussian(rng, size=paths)
    x = y.s + cfg.B / cfg.d * float(bb) + math.sqrt(cfg.B) / cfg.d * sig * g
    return soft_threshold(x, epsilon_err(y.s, cfg))


def one_step_dominance_probe(
    y: StateY,
    cfg: ComparisonConfig,
    paths: int,
    rng,
    delta_budget: float = 0.05,
    sigma_scale: float = 1.0,
    radius_scale: float = 1.0,
    n_perm: int = 200,
) -> dict:
    """Compare s(P^B(y))^2 against the squared thresholded Gaussian surrogate."""
    if not in_comparison_region(y, cfg, radius_scale):
        raise RegionError(f"y={y.as_tuple()} outside the comparison region")
    rng = as_generator(rng)
    _, s_chain = chain_epoch(y, cfg, rng, paths)
    s_sur = surrogate_epoch(y, cfg, rng, paths, sigma_scale=sigma_scale)
    chain_sq, sur_sq = s_chain**2, s_sur**2
    ok, gap = empirical_dominance_check(chain_sq, sur_sq, delta_budget)
    floor = permutation_gap_floor(chain_sq, sur_sq, rng, n_perm=n_perm)
    return {
        "y": [y.r2, y.s],
        "gap": gap,
        "delta_budget": delta_budget,
        "pass": bool(ok),
        "permutation_floor_q95": floor,
        "delta_reference_unit_c": 1.0 / cfg.d**2 + 1.0 / math.sqrt(cfg.B),
        "sigma_scale": sigma_scale,
        "epsilon": epsilon_err(y.s, cfg),
        "chain_mean_s2": float(np.mean(chain_sq)),
        "surrogate_mean_s2": float(np.mean(sur_sq)),
        "paths": paths,
    }


def coupling_error_probe(y: StateY, cfg: ComparisonConfig, rng, paths: int, q: float = 0.99) -> dict:
    """Measure |s(Q(y)) - s(P^B(y))| under shared draws.

    Reports the q-quantile and the implied constant in eps(s), i.e. the
    smallest c_eps for which eps(s(y)) covers that quantile.
    """
    rng = as_generator(rng)
    r2 = np.full(paths, y.r2)
    s = np.full(paths, y.s)
    sum_q = np.zeros(paths)
    for _ in range(cfg.B):
        u, v = sample_uv_marginal(cfg.d, rng, size=paths)
        _, bq = increments(y.r2, y.s, u, v)
        sum_q += bq
        r2, s = state_step_arr(r2, s, u, v, cfg.d)
    err = np.abs((y.s + sum_q / cfg.d) - s)
    unit = epsilon_err(y.s, ComparisonConfig(cfg.d, cfg.B, cfg.kappa, 1.0, cfg.gamma1))
    qv = float(np.quantile(err, q))
    return {"quantile": q, "error_quantile": qv, "implied_c_eps": qv / unit, "mean_error": float(err.mean())}


def moment_recursion_probe(
    cfg: ComparisonConfig,
    epochs: int,
    paths: int,
    rng,
    mode: str = "idealized",
    y_fixed: StateY = StateY(1.0, 0.0),
    y0: StateY | None = None,
    n_boot: int = 200,
    stopping: StoppingConfig | None = None,
) -> dict:
    """Simulate the comparison process from s_hat = 0 and track E s^2, E s^4.

    mode "idealized" freezes y at ``y_fixed`` for every epoch.  Mode "coupled"
    runs a true chain per path from ``y0`` (default ``y_fixed``) and feeds the
    comparison kernel the chain state at min(kB, tau2a).
    """
    if mode not in ("idealized", "coupled"):
        raise ValueError("mode must be 'idealized' or 'coupled'")
    rng = as_generator(rng)
    s_hat = np.zeros(paths)
    history = [s_hat.copy()]
    if mode == "idealized":
        sig = np.full(paths, float(sigma0(y_fixed.r2, y_fixed.s)[0]))
        for _ in range(epochs):
            s_hat = hat_s_step(s_hat, None, cfg, rng, sigma=sig)
            history.append(s_hat.copy())
    else:
        gamma1 = (stopping.gamma1 if stopping else cfg.gamma1)
        start = y0 or y_fixed
        r2 = np.full(paths, start.r2)
        s = np.full(paths, start.s)
        frozen = np.abs(s) >= gamma1
        for _ in range(epochs):
            sig = sigma0(r2, s)
            s_hat = hat_s_step(s_hat, None, cfg, rng, sigma=sig)
            history.append(s_hat.copy())
            for _ in range(cfg.B):
                u, v = sample_uv_marginal(cfg.d, rng, size=paths)
                nr2, ns = state_step_arr(r2, s, u, v, cfg.d)
                r2 = np.where(frozen, r2, nr2)
                s = np.where(frozen, s, ns)
                frozen |= np.abs(s) >= gamma1

    H = np.vstack(history)  # (epochs + 1, paths)
    boot_idx = rng.integers(0, paths, size=(n_boot, paths))
    per_epoch = []
    m2_boot_all = []
    for k in range(H.shape[0]):
        col = H[k]
        m2 = float(np.mean(col**2))
        m4 = float(np.mean(col**4))
        b2 = np.mean(col[boot_idx] ** 2, axis=1)
        b4 = np.mean(col[boot_idx] ** 4, axis=1)
        m2_boot_all.append(b2)
        per_epoch.append({"k": k, "m2": m2, "m2_se": float(b2.std(ddof=1)), "m4": m4, "m4_se": float(b4.std(ddof=1))})

    # paired bootstrap of successive increments of E s^2
    increases = []
    for k in range(1, H.shape[0]):
        diff = m2_boot_all[k] - m2_boot_all[k - 1]
        lo = float(np.quantile(diff, 0.025))
        increases.append({"k": k, "delta_m2": per_epoch[k]["m2"] - per_epoch[k - 1]["m2"], "ci95_lo": lo})

    last = per_epoch[-1]
    ratio = last["m2"] / math.sqrt(last["m4"]) if last["m4"] > 0 else 0.0
    growth = (1 + cfg.kappa * cfg.B / cfg.d) ** 2
    ratio_checks = []
    for k in range(1, H.shape[0]):
        prev = per_epoch[k - 1]["m2"]
        if prev > 0:
            ratio_checks.append({"k": k, "m2_ratio": per_epoch[k]["m2"] / prev, "lower_bound": growth * 0.9})
    return {
        "mode": mode,
        "epochs": epochs,
        "paths": paths,
        "per_epoch": per_epoch,
        "increments": increases,
        "strictly_increasing": all(e["ci95_lo"] > 0 for e in increases),
        "final_ratio_m2_over_sqrt_m4": ratio,
        "growth_factor_per_epoch": growth,
        "m2_ratio_checks": ratio_checks,
    }


def default_epochs(cfg: ComparisonConfig) -> int:
    return int(math.ceil(cfg.d / cfg.B * math.log(cfg.d)))
