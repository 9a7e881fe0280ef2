"""Online SGD (randomized Kaczmarz) for real phase retrieval.

The update with step eta = eta0 / d is

    x <- x + eta * (sign(<a, x>) * b - <a, x>) * a,     b = |<a, x*>|,

with fresh a uniform on sqrt(d) S^{d-1} at every step.  With eta |a|^2 = 1 this
projects x onto the nearer of the two hyperplanes |<a, x>| = b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .randsrc import SeededStream, sample_sphere_vector
from .state_chain import StateY, sign0
from .trajectory import StoppingConfig, StoppingDetector, Trajectory


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SignalProblem:
    x_star: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_star, dtype=float)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("x_star must be a non-empty vector")
        if not np.linalg.norm(x) > 0:
            raise ValueError("x_star must be nonzero")
        object.__setattr__(self, "x_star", x)

    @property
    def d(self) -> int:
        return self.x_star.size

    @property
    def direction(self) -> np.ndarray:
        return self.x_star / np.linalg.norm(self.x_star)

    @classmethod
    def basis(cls, d: int) -> "SignalProblem":
        x = np.zeros(d)
        x[0] = 1.0
        return cls(x)


@dataclass(frozen=True)
class Measurement:
    a: np.ndarray
    b: float


@dataclass
class SgdConfig:
    max_steps: int
    eta0: float = 1.0
    init: np.ndarray | None = None
    record_every: int | None = None

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.record_every is not None and self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    def thinning(self, d: int) -> int:
        return self.record_every if self.record_every is not None else max(1, d // 10)


def _check_dims(x, y):
    if np.shape(x) != np.shape(y):
        raise DimensionMismatchError(f"shape {np.shape(x)} != {np.shape(y)}")


def measure(problem: SignalProblem, a) -> Measurement:
    a = np.asarray(a, dtype=float)
    _check_dims(a, problem.x_star)
    return Measurement(a, float(abs(a @ problem.x_star)))


def sgd_step(x, m: Measurement, eta: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dims(x, m.a)
    ax = float(m.a @ x)
    sgn = 1.0 if ax >= 0 else -1.0
    return x + eta * (sgn * m.b - ax) * m.a


def dist_to_signal(x, x_star) -> float:
    """Distance to the nearer of +x*, -x*."""
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    _check_dims(x, x_star)
    return float(min(np.linalg.norm(x - x_star), np.linalg.norm(x + x_star)))


def _summary_rows(X, u):
    """(|x|^2, <x, u>) per row; shared by project_state and the batch engine
    so recorded states are bit-identical to projecting the iterate."""
    return np.einsum("rd,rd->r", X, X), np.einsum("rd,d->r", X, u)


def project_state(x, x_star) -> StateY:
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    _check_dims(x, x_star)
    if abs(np.linalg.norm(x_star) - 1.0) > 1e-12:
        raise ValueError("project_state needs a unit-norm x_star")
    r2, s = _summary_rows(x[None, :], x_star)
    return StateY(float(r2[0]), float(s[0]))


def random_init(d: int, rng, norm: float = 1.0) -> np.ndarray:
    """Gaussian direction scaled to the requested norm."""
    g = np.asarray(sample_sphere_vector(d, rng), dtype=float)
    return g * (norm / math.sqrt(d))


@dataclass
class BatchResult:
    trajectories: list[Trajectory]
    final_x: np.ndarray
    steps_run: np.ndarray
    success_step: np.ndarray  # first step with Psi <= stop_psi, -1 if never

    @property
    def success(self) -> np.ndarray:
        return self.success_step >= 0


def run_sgd_batch(
    problem: SignalProblem,
    inits,
    eta0: float,
    max_steps: int,
    streams: list[SeededStream],
    record_every: int | None = None,
    stopping: StoppingConfig = StoppingConfig(),
    stop_psi: float | None = None,
    record: bool = True,
) -> BatchResult:
    """Advance several independent SGD runs in lock-step.

    Run i consumes only ``streams[i]`` (measurement vectors drawn in blocks
    from its own generator), so results do not depend on batch composition.
    A run with ``stop_psi`` set freezes at the first step where its Lyapunov
    value drops to or below the threshold.
    """
    X = np.array(inits, dtype=float, ndmin=2)
    R, d = X.shape
    if d != problem.d:
        raise DimensionMismatchError(f"init dimension {d} != problem dimension {problem.d}")
    if len(streams) != R:
        raise ValueError("need one stream per run")
    thin = record_every if record_every is not None else max(1, d // 10)
    eta = eta0 / d
    xs = problem.x_star
    us = problem.direction
    xs_norm = float(np.linalg.norm(xs))
    rngs = [st.generator() for st in streams]

    det = StoppingDetector(R, d, stopping)
    r2, s = _summary_rows(X, us)
    det.update(0, r2, s)
    psi0 = r2 - 2 * np.abs(s) * xs_norm + xs_norm**2
    success_step = np.where(psi0 <= stop_psi, 0, -1) if stop_psi is not None else np.full(R, -1)
    finished = success_step >= 0 if stop_psi is not None else np.zeros(R, dtype=bool)
    steps_run = np.zeros(R, dtype=np.int64)

    rec_k, rec_r2, rec_s = [0], [r2.copy()], [s.copy()]
    last_r2, last_s = r2.copy(), s.copy()

    block = int(min(512, max(1, (1 << 21) // max(1, R * d))))
    k = 0
    while k < max_steps and not finished.all():
        n = min(block, max_steps - k)
        idx = np.flatnonzero(~finished)
        G = np.stack([rngs[i].standard_normal((n, d)) for i in idx])
        A = G * (math.sqrt(d) / np.linalg.norm(G, axis=-1, keepdims=True))
        Bm = np.abs(A @ xs)
        Xa = X[idx]
        live = np.ones(idx.size, dtype=bool)
        for j in range(n):
            step = k + j + 1
            a = A[:, j, :]
            ax = np.einsum("rd,rd->r", a, Xa)
            coef = eta * (sign0(ax) * Bm[:, j] - ax) * live
            Xa += coef[:, None] * a
            r2a, sa = _summary_rows(Xa, us)
            det.update(step, r2a, sa, idx)
            last_r2[idx] = np.where(live, r2a, last_r2[idx])
            last_s[idx] = np.where(live, sa, last_s[idx])
            steps_run[idx] += live
            newly = None
            if stop_psi is not None:
                psi = r2a - 2 * np.abs(sa) * xs_norm + xs_norm**2
                newly = live & (psi <= stop_psi)
                if newly.any():
                    success_step[idx[newly]] = step
            if record and (step % thin == 0 or (newly is not None and newly.any())):
                keep = np.full(R, np.nan)
                keep_s = np.full(R, np.nan)
                mask = live if step % thin == 0 else newly
                keep[idx[mask]] = r2a[mask]
                keep_s[idx[mask]] = sa[mask]
                rec_k.append(step)
                rec_r2.append(keep)
                rec_s.append(keep_s)
            if newly is not None:
                live &= ~newly
            if not live.any():
                break
        X[idx] = Xa
        finished[idx] |= ~live
        k += n

    trajectories = []
    if record:
        K = np.asarray(rec_k)
        M2 = np.vstack(rec_r2)
        MS = np.vstack(rec_s)
        for i in range(R):
            ok = ~np.isnan(M2[:, i])
            steps, r2i, si = K[ok], M2[ok, i], MS[ok, i]
            if steps[-1] != steps_run[i]:
                steps = np.append(steps, steps_run[i])
                r2i = np.append(r2i, last_r2[i])
                si = np.append(si, last_s[i])
            t1, t2a, t2b = det.get(i)
            trajectories.append(
                Trajectory(
                    steps=steps, r2=r2i, s=si, d=d, tau1=t1, tau2a=t2a, tau2b=t2b,
                    seed=streams[i].base_seed, stream_index=streams[i].stream_index,
                    record_every=thin,
                )
            )
    else:
        for i in range(R):
            t1, t2a, t2b = det.get(i)
            trajectories.append(
                Trajectory(
                    steps=[steps_run[i]], r2=[last_r2[i]], s=[last_s[i]], d=d,
                    tau1=t1, tau2a=t2a, tau2b=t2b, seed=streams[i].base_seed,
                    stream_index=streams[i].stream_index, record_every=thin,
                )
            )
    return BatchResult(trajectories, X, steps_run, np.asarray(success_step, dtype=np.int64))


def init_stream(stream: SeededStream) -> SeededStream:
    """Stream reserved for drawing a run's random initialization."""
    return stream.child(0)


def run_sgd(
    problem: SignalProblem,
    config: SgdConfig,
    stream: SeededStream,
    stopping: StoppingConfig = StoppingConfig(),
    stop_psi: float | None = None,
) -> Trajectory:
    init = config.init
    if init is None:
        init = random_init(problem.d, init_stream(stream))
    res = run_sgd_batch(
        problem, [init], config.eta0, config.max_steps, [stream],
        record_every=config.thinning(problem.d), stopping=stopping, stop_psi=stop_psi,
    )
    traj = res.trajectories[0]
    traj.meta["final_x"] = res.final_x[0]
    return traj
