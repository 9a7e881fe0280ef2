"""Recorded trajectories in the summary state space and their stopping times."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .state_chain import StateY, psi_arr

GAMMA2_DEFAULT = math.pi**2 / 320


@dataclass(frozen=True)
class StoppingConfig:
    """Thresholds for the three phase boundaries.

    tau1: first k with |r_k^2 - 1| <= radius_margin_scale * ln(d) / sqrt(d)
    tau2a: first k >= tau1 with |s_k| >= gamma1
    tau2b: first k >= tau2a with Psi(y_k) <= gamma2
    """

    gamma1: float = 0.1
    gamma2: float = GAMMA2_DEFAULT
    radius_margin_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma1 < 0.5:
            raise ValueError("gamma1 must lie in (0, 1/2)")
        if self.gamma2 <= 0 or self.radius_margin_scale <= 0:
            raise ValueError("gamma2 and radius_margin_scale must be positive")

    def radius_margin(self, d: int) -> float:
        return self.radius_margin_scale * math.log(d) / math.sqrt(d)


@dataclass
class Trajectory:
    steps: np.ndarray
    r2: np.ndarray
    s: np.ndarray
    d: int
    tau1: int | None = None
    tau2a: int | None = None
    tau2b: int | None = None
    seed: int | None = None
    stream_index: int | None = None
    record_every: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        self.r2 = np.asarray(self.r2, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        if not (len(self.steps) == len(self.r2) == len(self.s)):
            raise ValueError("steps, r2 and s must have equal length")

    def __len__(self):
        return len(self.steps)

    @property
    def psi(self) -> np.ndarray:
        return psi_arr(self.r2, self.s)

    @property
    def states(self) -> list[StateY]:
        return [StateY(a, b) for a, b in zip(self.r2, self.s)]

    @property
    def final_psi(self) -> float:
        return float(self.psi[-1])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["step", "r2", "s", "psi"])
            for k, a, b, p in zip(self.steps, self.r2, self.s, self.psi):
                wr.writerow([int(k), format(a, ".17g"), format(b, ".17g"), format(p, ".17g")])

    @classmethod
    def read_csv(cls, path, d: int) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(steps=data[:, 0].astype(np.int64), r2=data[:, 1], s=data[:, 2], d=d)


class StoppingDetector:
    """Online tau1/tau2a/tau2b detection for a batch of chains.

    Each call to ``update`` sees the states at one step index; conditions
    are evaluated in order so tau1 <= tau2a <= tau2b by construction.
    """

    def __init__(self, n: int, d: int, cfg: StoppingConfig):
        self.cfg = cfg
        self.margin = cfg.radius_margin(d)
        self.tau1 = np.full(n, -1, dtype=np.int64)
        self.tau2a = np.full(n, -1, dtype=np.int64)
        self.tau2b = np.full(n, -1, dtype=np.int64)

    def update(self, k: int, r2, s, idx=None):
        sel = slice(None) if idx is None else idx
        t1, t2a, t2b = self.tau1[sel], self.tau2a[sel], self.tau2b[sel]
        hit1 = (t1 < 0) & (np.abs(r2 - 1.0) <= self.margin)
        t1 = np.where(hit1, k, t1)
        hit2a = (t1 >= 0) & (t2a < 0) & (np.abs(s) >= self.cfg.gamma1)
        t2a = np.where(hit2a, k, t2a)
        hit2b = (t2a >= 0) & (t2b < 0) & (psi_arr(r2, s) <= self.cfg.gamma2)
        t2b = np.where(hit2b, k, t2b)
        self.tau1[sel], self.tau2a[sel], self.tau2b[sel] = t1, t2a, t2b

    def get(self, i: int):
        return tuple(None if t[i] < 0 else int(t[i]) for t in (self.tau1, self.tau2a, self.tau2b))


def detect_stopping_times(traj: Trajectory, cfg: StoppingConfig = StoppingConfig()):
    """Scan recorded states in order; returns (tau1, tau2a, tau2b) as step indices or None."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    det = StoppingDetector(1, traj.d, cfg)
    for k, a, b in zip(traj.steps, traj.r2, traj.s):
        det.update(int(k), np.array([a]), np.array([b]))
        if det.tau2b[0] >= 0:
            break
    return det.get(0)
