"""Simulating the summary chain directly from (u, v) marginals."""

from __future__ import annotations

import numpy as np

from .randsrc import SeededStream, as_generator, sample_uv_marginal
from .state_chain import StateY, enforce_membership, state_step_arr
from .trajectory import StoppingConfig, StoppingDetector, Trajectory


def run_state_chain(
    y0: StateY,
    d: int,
    steps: int,
    stream: SeededStream,
    record_every: int = 1,
    stopping: StoppingConfig = StoppingConfig(),
) -> Trajectory:
    rng = stream.generator()
    u, v = sample_uv_marginal(d, rng, size=steps)
    r2, s = np.array([y0.r2]), np.array([y0.s])
    det = StoppingDetector(1, d, stopping)
    det.update(0, r2, s)
    ks, r2s, ss = [0], [y0.r2], [y0.s]
    for k in range(steps):
        r2, s = state_step_arr(r2, s, u[k], v[k], d)
        det.update(k + 1, r2, s)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            ks.append(k + 1)
            r2s.append(float(r2[0]))
            ss.append(float(s[0]))
    t1, t2a, t2b = det.get(0)
    return Trajectory(
        steps=ks, r2=r2s, s=ss, d=d, tau1=t1, tau2a=t2a, tau2b=t2b,
        seed=stream.base_seed, stream_index=stream.stream_index, record_every=record_every,
    )


def evolve_paths(r2, s, d: int, steps: int, rng, record_at=()):
    """Advance many independent chains; returns final (r2, s) and snapshots.

    ``record_at`` lists step indices whose states are returned in a dict.
    """
    rng = as_generator(rng)
    r2, s = enforce_membership(np.array(r2, dtype=float), np.array(s, dtype=float))
    r2, s = np.broadcast_arrays(r2, s)
    r2, s = r2.copy(), s.copy()
    want = set(int(k) for k in record_at)
    snaps = {}
    if 0 in want:
        snaps[0] = (r2.copy(), s.copy())
    for k in range(1, steps + 1):
        u, v = sample_uv_marginal(d, rng, size=r2.shape)
        r2, s = state_step_arr(r2, s, u, v, d)
        if k in want:
            snaps[k] = (r2.copy(), s.copy())
    return r2, s, snaps
