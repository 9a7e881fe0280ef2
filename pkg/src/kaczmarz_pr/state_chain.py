"""Two-dimensional summary chain y = (r^2, s) of the SGD iterates.

With x* a unit vector, r^2 = |x|^2 and s = <x, x*>.  All kernel formulas are
written in terms of s = r cos(theta) and w = r sin(theta) = sqrt(r^2 - s^2) so
that r = 0 needs no special casing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

MEMBERSHIP_SLACK = 1e-12

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


class StateSpaceError(ValueError):
    """A state left {s^2 <= r^2} by more than the round-off slack."""


def sign0(x):
    """sign with sign(0) = +1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def enforce_membership(r2, s):
    """Clamp round-off violations of s^2 <= r^2; raise on real ones."""
    r2 = np.asarray(r2, dtype=float)
    s = np.asarray(s, dtype=float)
    excess = s * s - r2
    if np.any(excess > MEMBERSHIP_SLACK) or np.any(r2 < -MEMBERSHIP_SLACK):
        bad = np.argmax(excess) if excess.ndim else ()
        raise StateSpaceError(
            f"state outside Y: r2={np.ravel(r2)[bad] if r2.ndim else float(r2)!r}, "
            f"s={np.ravel(s)[bad] if s.ndim else float(s)!r}"
        )
    r2 = np.maximum(r2, 0.0)
    if np.any(excess > 0):
        s = np.where(excess > 0, np.sign(s) * np.sqrt(r2), s)
    return r2, s


@dataclass(frozen=True)
class StateY:
    r2: float
    s: float

    def __post_init__(self):
        r2, s = enforce_membership(float(self.r2), float(self.s))
        object.__setattr__(self, "r2", float(r2))
        object.__setattr__(self, "s", float(s))

    @property
    def theta(self) -> float:
        return theta_of(self)

    @property
    def psi(self) -> float:
        return lyapunov(self)

    def as_tuple(self) -> tuple[float, float]:
        return (self.r2, self.s)


@dataclass(frozen=True)
class DriftVector:
    alpha_bar: float
    beta_bar: float


def _cos_ratio(r2, s):
    r2 = np.asarray(r2, dtype=float)
    s = np.asarray(s, dtype=float)
    r = np.sqrt(np.maximum(r2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(r > 0, s / np.where(r > 0, r, 1.0), 0.0)
    return np.clip(c, -1.0, 1.0)


def theta_arr(r2, s):
    return np.arccos(_cos_ratio(r2, s))


def theta_of(y: StateY) -> float:
    """Angle between iterate and signal; pi/2 at the origin by convention."""
    return float(theta_arr(y.r2, y.s))


def psi_arr(r2, s):
    return np.asarray(r2) - 2.0 * np.abs(s) + 1.0


def lyapunov(y: StateY) -> float:
    return float(psi_arr(y.r2, y.s))


def event_A(theta, u, v):
    """Sign-mismatch event: sign(cos(theta) u + sin(theta) v) != sign(u)."""
    lhs = np.cos(theta) * np.asarray(u) + np.sin(theta) * np.asarray(v)
    out = sign0(lhs) != sign0(u)
    return bool(out) if np.ndim(out) == 0 else out


def increments(r2, s, u, v):
    """Unscaled state increments (alpha, beta) for measurement marginals (u, v).

    alpha = u^2 - (s u + w v)^2 is the exact norm change under eta |a|^2 = 1;
    beta = (1 - s - 2 1_A) u^2 - w u v.
    """
    r2 = np.asarray(r2, dtype=float)
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    w = np.sqrt(np.maximum(r2 - s * s, 0.0))
    ax = s * u + w * v  # <a, x>
    uu = u * u
    mismatch = sign0(ax) != sign0(u)
    alpha = uu - ax * ax
    beta = (1.0 - s - 2.0 * mismatch) * uu - w * u * v
    return alpha, beta


def state_step_arr(r2, s, u, v, d: int):
    alpha, beta = increments(r2, s, u, v)
    return enforce_membership(np.asarray(r2) + alpha / d, np.asarray(s) + beta / d)


def state_step(y: StateY, u: float, v: float, d: int) -> StateY:
    r2, s = state_step_arr(y.r2, y.s, u, v, d)
    return StateY(float(r2), float(s))


def drift_arr(r2, s):
    r2 = np.asarray(r2, dtype=float)
    s = np.asarray(s, dtype=float)
    # evaluate on |s| and restore the sign so that beta_bar is exactly odd in s
    a = np.abs(s)
    th = theta_arr(r2, a)
    return 1.0 - r2, np.sign(s) * (1.0 - a - (2.0 * th - np.sin(2.0 * th)) / math.pi)


def drift(y: StateY) -> DriftVector:
    a, b = drift_arr(y.r2, y.s)
    return DriftVector(float(a), float(b))


def prob_A(theta):
    return np.asarray(theta) / math.pi if np.ndim(theta) else float(theta) / math.pi


def moment_a1sq_A(theta):
    """E[a1^2 1_A(theta)] under the 2-D Gaussian limit."""
    theta = np.asarray(theta, dtype=float)
    out = (2.0 * theta - np.sin(2.0 * theta)) / (2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def moment_a1a2_A(theta):
    """E[a1 a2 1_A(theta)] under the 2-D Gaussian limit."""
    theta = np.asarray(theta, dtype=float)
    out = (np.cos(2.0 * theta) - 1.0) / (2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def _polar_segments(theta):
    # one period starting at pi/2; wedge pieces are flagged True
    half = math.pi / 2
    return [
        (half, half + theta, True),
        (half + theta, 3 * half, False),
        (3 * half, 3 * half + theta, True),
        (3 * half + theta, 5 * half, False),
    ]


def beta_moments_arr(r2, s):
    """Mean and variance of beta(y) with (u, v) standard Gaussian.

    beta = R^2 h(t) in polar form; R^2 ~ chi^2_2 is independent of t, so
    E beta = 2 <h> and Var beta = 8 <h^2> - (2 <h>)^2 where <.> averages over
    t uniform on one period.  h is a trigonometric polynomial on each piece
    between wedge edges, integrated by Gauss-Legendre.
    """
    r2 = np.atleast_1d(np.asarray(r2, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r2, s = np.broadcast_arrays(r2, s)
    th = theta_arr(r2, s)[..., None]
    ss = s[..., None]
    w = np.sqrt(np.maximum(r2 - s * s, 0.0))[..., None]
    mean_h = np.zeros(r2.shape)
    mean_h2 = np.zeros(r2.shape)
    for lo, hi, wedge in _polar_segments(th):
        half_len = (hi - lo) / 2.0
        t = lo + half_len * (_GL_NODES + 1.0)
        ct, st = np.cos(t), np.sin(t)
        coef = (1.0 - ss - 2.0) if wedge else (1.0 - ss)
        h = coef * ct * ct - w * ct * st
        mean_h += np.sum(_GL_WEIGHTS * h, axis=-1) * half_len[..., 0]
        mean_h2 += np.sum(_GL_WEIGHTS * h * h, axis=-1) * half_len[..., 0]
    mean_h /= 2 * math.pi
    mean_h2 /= 2 * math.pi
    mean = 2.0 * mean_h
    var = np.maximum(8.0 * mean_h2 - mean * mean, 0.0)
    return mean, var


def beta_variance(y: StateY) -> float:
    _, var = beta_moments_arr(y.r2, y.s)
    return float(var[0])


def drift_bounds_scan(epsilon: float, eta: float, grid_step: float, r_max: float = 4.0):
    """Grid extrema of beta_bar / s.

    b_max is the sup over {r >= 1/2, 0 < s <= r} (r truncated at r_max);
    b_min is the inf over {|s| <= 1 - epsilon, |r^2 - 1| <= eta} with s != 0.
    beta_bar / s is even in s, so only s > 0 is scanned.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    rs = np.arange(0.5, r_max + grid_step / 2, grid_step)
    r_grid, s_frac = np.meshgrid(rs, np.arange(grid_step, 1.0 + grid_step / 2, grid_step))
    s_grid = np.minimum(s_frac, 1.0) * r_grid
    _, bb = drift_arr(r_grid**2, s_grid)
    ratio_max = bb / s_grid

    r2s = np.arange(max(1.0 - eta, 0.0), 1.0 + eta + grid_step / 2, grid_step)
    ss = np.arange(grid_step, 1.0 - epsilon + grid_step / 2, grid_step)
    ss = ss[ss <= 1.0 - epsilon + 1e-12]
    R2, S = np.meshgrid(r2s, ss)
    inside = S * S <= R2
    if ratio_max.size == 0 or not np.any(inside):
        raise ValueError("empty scan grid")
    _, bb_d = drift_arr(R2[inside], S[inside])
    return float(np.min(bb_d / S[inside])), float(np.max(ratio_max))


def grid_scan(r2_range, s_range, n: int):
    """Drift and fluctuation variance on an n x n grid, points outside Y dropped."""
    r2v = np.linspace(r2_range[0], r2_range[1], n)
    sv = np.linspace(s_range[0], s_range[1], n)
    R2, S = np.meshgrid(r2v, sv, indexing="ij")
    keep = S * S <= R2
    r2, s = R2[keep], S[keep]
    ab, bb = drift_arr(r2, s)
    _, var = beta_moments_arr(r2, s)
    return np.column_stack([r2, s, ab, bb, var])


def write_grid_scan_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["r2", "s", "alpha_bar", "beta_bar", "sigma2"])
        for row in rows:
            wr.writerow([format(float(x), ".17g") for x in row])
