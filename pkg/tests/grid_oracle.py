"""Exhaustive grid search over two-step input sequences (oracle for the MPC solver)."""
from __future__ import annotations

import itertools

import numpy as np

from greenhouse_bench.model import measure, rk4_step
from greenhouse_bench.mpc import output_bounds


def channel_grid(prev, cfg, points):
    lo = np.maximum(cfg.lower, prev - cfg.rate)
    hi = np.minimum(cfg.upper, prev + cfg.rate)
    axes = [np.linspace(lo[i], hi[i], points) for i in range(3)]
    return np.array(list(itertools.product(*axes)))


def grid_optimum(x0, window, prev_u, cfg, p, points=5):
    """Best objective over a rate-feasible grid for a 2-step horizon (brute force)."""
    assert cfg.N_p == 2
    ymin, ymax = output_bounds(window, cfg)
    first = channel_grid(np.asarray(prev_u, float), cfg, points)
    x1 = rk4_step(np.tile(x0, (len(first), 1)), first, np.tile(window[0], (len(first), 1)), p, cfg.h)
    best = np.inf
    q_u = np.asarray(cfg.q_u)
    for i, u0 in enumerate(first):
        second = channel_grid(u0, cfg, points)
        n = len(second)
        x2 = rk4_step(np.tile(x1[i], (n, 1)), second, np.tile(window[1], (n, 1)), p, cfg.h)
        y1 = measure(x1[i], p)
        y2 = measure(x2, p)
        s1 = np.maximum(y1 - ymax[0], 0) + np.maximum(ymin[0] - y1, 0)
        s2 = np.maximum(y2 - ymax[1], 0) + np.maximum(ymin[1] - y2, 0)
        obj = (-cfg.q_y1 * y2[:, 0] + q_u @ u0 + second @ q_u
               + cfg.slack_weight * (np.sum(s1 * s1) + np.sum(s2 * s2, axis=1)))
        best = min(best, float(obj.min()))
    return best
