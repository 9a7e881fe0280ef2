"""Deterministic flow of the mean field dy/dt = (alpha_bar(y), beta_bar(y))."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .state_chain import MEMBERSHIP_SLACK, StateSpaceError, StateY, drift_arr

TAU1_BAND = 0.1
TAU2_PSI = 0.2


def _field(r2: float, s: float) -> tuple[float, float]:
    r = math.sqrt(r2) if r2 > 0 else 0.0
    c = min(1.0, max(-1.0, s / r)) if r > 0 else 0.0
    th = math.acos(c)
    return 1.0 - r2, 1.0 - s - (2.0 * th - math.sin(2.0 * th)) / math.pi


@dataclass
class FlowPath:
    times: np.ndarray
    r2: np.ndarray
    s: np.ndarray
    tau1_bar: float | None
    tau2_bar: float | None

    @property
    def psi(self) -> np.ndarray:
        return self.r2 - 2.0 * np.abs(self.s) + 1.0

    @property
    def states(self) -> list[StateY]:
        return [StateY(a, b) for a, b in zip(self.r2, self.s)]

    def contraction_rate(self, psi_floor: float = 1e-12) -> float | None:
        """Least-squares rate c in Psi(t) ~ exp(-c t) after tau2_bar."""
        if self.tau2_bar is None:
            return None
        psi = self.psi
        sel = (self.times >= self.tau2_bar) & (psi > psi_floor)
        if sel.sum() < 3:
            return None
        slope = np.polyfit(self.times[sel], np.log(psi[sel]), 1)[0]
        return float(-slope)


def integrate_drift(y0: StateY, dt: float = 1e-3, t_max: float = 30.0) -> FlowPath:
    """Fixed-step RK4; stopping times reported at grid resolution dt."""
    if not 0 < dt <= 0.01:
        raise ValueError("dt must lie in (0, 0.01]")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if y0.s * y0.s - y0.r2 > MEMBERSHIP_SLACK:
        raise StateSpaceError("initial state outside Y")
    n = int(math.ceil(t_max / dt - 1e-9))
    times = np.arange(n + 1) * dt
    R2 = np.empty(n + 1)
    S = np.empty(n + 1)
    r2, s = y0.r2, y0.s
    R2[0], S[0] = r2, s
    tau1 = tau2 = None
    for i in range(n + 1):
        if i:
            k1 = _field(r2, s)
            k2 = _field(r2 + 0.5 * dt * k1[0], s + 0.5 * dt * k1[1])
            k3 = _field(r2 + 0.5 * dt * k2[0], s + 0.5 * dt * k2[1])
            k4 = _field(r2 + dt * k3[0], s + dt * k3[1])
            r2 += dt * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
            s += dt * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
            # the flow hugs s = r near the attractors; pull round-off back in
            if s * s > r2:
                s = math.copysign(math.sqrt(r2), s)
            R2[i], S[i] = r2, s
        if tau1 is None and abs(r2 - 1.0) <= TAU1_BAND:
            tau1 = float(times[i])
        if tau2 is None and r2 - 2.0 * abs(s) + 1.0 <= TAU2_PSI:
            tau2 = float(times[i])
    return FlowPath(times, R2, S, tau1, tau2)


def closed_form_r2(t: float, r0_sq: float) -> float:
    return 1.0 + math.exp(-t) * (r0_sq - 1.0)


def vector_field_grid(r2_range, s_range, n: int):
    """Drift on an n x n grid; points with s^2 > r^2 are dropped.

    Returns an array of rows (r2, s, alpha_bar, beta_bar).
    """
    if n < 1:
        raise ValueError("grid size must be positive")
    R2, S = np.meshgrid(
        np.linspace(r2_range[0], r2_range[1], n),
        np.linspace(s_range[0], s_range[1], n),
        indexing="ij",
    )
    keep = S * S <= R2
    if not keep.any():
        raise ValueError("grid does not intersect the state space")
    r2, s = R2[keep], S[keep]
    a, b = drift_arr(r2, s)
    return np.column_stack([r2, s, a, b])


def write_field_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["r2", "s", "alpha_bar", "beta_bar"])
        for row in rows:
            wr.writerow([format(float(x), ".17g") for x in row])


def render_svg(rows, curve: FlowPath | None = None, size: int = 600, margin: int = 50) -> str:
    """Arrow plot with s on the horizontal axis and r^2 vertical.

    Arrow lengths are normalized per plot; output depends only on inputs.
    """
    rows = np.asarray(rows, dtype=float)
    s_lo, s_hi = rows[:, 1].min(), rows[:, 1].max()
    r_lo, r_hi = rows[:, 0].min(), rows[:, 0].max()
    if curve is not None:
        s_lo, s_hi = min(s_lo, curve.s.min()), max(s_hi, curve.s.max())
        r_lo, r_hi = min(r_lo, curve.r2.min()), max(r_hi, curve.r2.max())
    span_s = (s_hi - s_lo) or 1.0
    span_r = (r_hi - r_lo) or 1.0
    inner = size - 2 * margin

    def px(s, r2):
        return margin + (s - s_lo) / span_s * inner, size - margin - (r2 - r_lo) / span_r * inner

    n_side = max(2.0, math.sqrt(len(rows)))
    cell = inner / n_side
    mags = np.hypot(rows[:, 2] / span_r, rows[:, 3] / span_s)
    top = mags.max() or 1.0

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<defs><marker id="h" markerWidth="6" markerHeight="6" refX="5" refY="3" '
        'orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="#333"/></marker></defs>',
        f'<rect x="{margin}" y="{margin}" width="{inner}" height="{inner}" '
        'fill="none" stroke="#999"/>',
    ]
    for r2, s, a, b in rows:
        x0, y0 = px(s, r2)
        m = math.hypot(a / span_r, b / span_s)
        if m == 0:
            out.append(f'<circle cx="{x0:.3f}" cy="{y0:.3f}" r="2" fill="#c00"/>')
            continue
        length = 0.8 * cell * (0.3 + 0.7 * m / top)
        dx = (b / span_s) / m * length
        dy = -(a / span_r) / m * length
        out.append(
            f'<line x1="{x0:.3f}" y1="{y0:.3f}" x2="{x0 + dx:.3f}" y2="{y0 + dy:.3f}" '
            'stroke="#333" stroke-width="1" marker-end="url(#h)"/>'
        )
    if curve is not None:
        pts = " ".join(
            "{:.3f},{:.3f}".format(*px(s, r2))
            for s, r2 in zip(curve.s[:: max(1, len(curve.s) // 2000)], curve.r2[:: max(1, len(curve.s) // 2000)])
        )
        out.append(f'<polyline points="{pts}" fill="none" stroke="#c2185b" stroke-width="2"/>')
    out.append(
        f'<text x="{size / 2:.0f}" y="{size - 10}" text-anchor="middle" font-size="14">s</text>'
    )
    out.append(
        f'<text x="15" y="{size / 2:.0f}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 15 {size / 2:.0f})">r^2</text>'
    )
    for val, (x, y) in ((s_lo, px(s_lo, r_lo)), (s_hi, px(s_hi, r_lo))):
        out.append(f'<text x="{x:.3f}" y="{y + 16:.3f}" text-anchor="middle" font-size="11">{val:.3g}</text>')
    for val, (x, y) in ((r_lo, px(s_lo, r_lo)), (r_hi, px(s_lo, r_hi))):
        out.append(f'<text x="{x - 6:.3f}" y="{y + 4:.3f}" text-anchor="end" font-size="11">{val:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
