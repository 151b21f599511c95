"""Receding-horizon nonlinear MPC by direct single shooting.

The decision variables are the N_p future inputs. States are obtained by
forward RK4 simulation and the objective gradient by an adjoint sweep over
the stored step sensitivities. Output bounds are soft (quadratic penalty on
the violation), input box and rate bounds are hard.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import clarabel
from scipy import sparse

from .model import (DEFAULT_H, DEFAULT_MODEL_PARAMS, NU, NY, U0, U_MAX, U_MIN,
                    ModelError, ModelParams, measure, measure_jacobian,
                    rk4_step, rk4_step_jacobians)

log = logging.getLogger(__name__)

NIGHT_BAND = (10.0, 15.0)
DAY_BAND = (15.0, 20.0)
DAY_RADIATION = 10.0  # W m^-2


def temperature_band(d1_ref):
    """Indoor temperature limits (min, max) for a reference radiation level."""
    d1 = np.asarray(d1_ref, dtype=float)
    if np.any(d1 < 0):
        raise ValueError("radiation must be nonnegative")
    night = d1 < DAY_RADIATION
    lo = np.where(night, NIGHT_BAND[0], DAY_BAND[0])
    hi = np.where(night, NIGHT_BAND[1], DAY_BAND[1])
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


@dataclass
class MpcConfig:
    N_p: int = 24
    q_y1: float = 1e3
    q_u: tuple = (10.0, 1.0, 1.0)
    u_min: tuple = tuple(U_MIN)
    u_max: tuple = tuple(U_MAX)
    du: tuple | None = None            # defaults to u_max / 10
    slack_weight: float = 1e6
    y_min: tuple = (0.0, 0.0, math.nan, 0.0)        # nan: day/night temperature band
    y_max: tuple = (math.inf, 1.6, math.nan, 70.0)
    band_at_k0: bool = False
    h: float = DEFAULT_H
    max_iter: int = 100
    ftol: float = 1e-9
    objective_scale: float = 1e3

    def __post_init__(self):
        self.q_u = tuple(float(v) for v in self.q_u)
        self.u_min = tuple(float(v) for v in self.u_min)
        self.u_max = tuple(float(v) for v in self.u_max)
        if self.du is None:
            self.du = tuple(v / 10.0 for v in self.u_max)
        self.du = tuple(float(v) for v in self.du)
        self.y_min = tuple(float(v) for v in self.y_min)
        self.y_max = tuple(float(v) for v in self.y_max)
        if self.N_p < 1:
            raise ValueError("N_p must be >= 1")
        if self.q_y1 < 0 or min(self.q_u) < 0 or self.slack_weight < 0:
            raise ValueError("weights must be nonnegative")
        if any(lo > hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must not exceed u_max")
        if min(self.du) <= 0:
            raise ValueError("rate bounds must be positive")

    @classmethod
    def from_dict(cls, cfg: dict) -> "MpcConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise KeyError(f"unknown mpc keys: {sorted(unknown)}")
        return cls(**cfg)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.u_min)

    @property
    def upper(self) -> np.ndarray:
        return np.array(self.u_max)

    @property
    def rate(self) -> np.ndarray:
        return np.array(self.du)


@dataclass
class HorizonSolution:
    u_seq: np.ndarray        # (N_p, 3)
    y_seq: np.ndarray        # (N_p, 4) predicted y(k0+1) .. y(k0+N_p)
    slack_seq: np.ndarray    # (N_p, 4) output bound violations
    objective: float
    status: str
    iterations: int
    solve_time: float
    gradient: np.ndarray = field(repr=False, default=None)

    @property
    def success(self) -> bool:
        return self.status == "optimal"


def _window(weather_window, n: int) -> np.ndarray:
    w = np.asarray(weather_window, dtype=float).reshape(-1, 4)
    if len(w) == 0:
        raise ValueError("empty weather window")
    if len(w) < n:
        w = np.vstack([w, np.repeat(w[-1:], n - len(w), axis=0)])
    return w[:n]


def output_bounds(weather_window, config: MpcConfig):
    """Bounds (y_min, y_max), each (N_p, 4), for the predicted outputs y(k0+1..k0+N_p).

    The temperature band for y(k0+j) uses d1(k0+j), or d1(k0) throughout
    when ``config.band_at_k0`` is set.
    """
    n = config.N_p
    w = _window(weather_window, n + 1)
    d1 = np.full(n, w[0, 0]) if config.band_at_k0 else w[1:, 0]
    lo3, hi3 = temperature_band(d1)
    ymin = np.tile(config.y_min, (n, 1))
    ymax = np.tile(config.y_max, (n, 1))
    ymin[:, 2] = np.where(np.isnan(ymin[:, 2]), lo3, ymin[:, 2])
    ymax[:, 2] = np.where(np.isnan(ymax[:, 2]), hi3, ymax[:, 2])
    return ymin, ymax


def _violations(y, ymin, ymax):
    up = np.maximum(y - ymax, 0.0)
    lo = np.maximum(ymin - y, 0.0)
    return up, lo


def rollout_cost(u_seq, x0, weather_window, config: MpcConfig, p: ModelParams = DEFAULT_MODEL_PARAMS,
                 gradient: bool = False):
    """Objective of an input sequence by forward simulation.

    Returns ``(objective, y_seq, violations)`` and, with ``gradient=True``,
    additionally d(objective)/d(u_seq) of shape (N_p, 3).
    """
    n = config.N_p
    u_seq = np.asarray(u_seq, dtype=float).reshape(n, NU)
    dwin = _window(weather_window, n + 1)
    ymin, ymax = output_bounds(dwin, config)
    q_u = np.array(config.q_u)
    W = config.slack_weight

    x = np.asarray(x0, dtype=float)
    xs, Fxs, Fus = [], [], []
    for j in range(n):
        if gradient:
            x, Fx, Fu = rk4_step_jacobians(x, u_seq[j], dwin[j], p, config.h)
            Fxs.append(Fx)
            Fus.append(Fu)
        else:
            x = rk4_step(x, u_seq[j], dwin[j], p, config.h)
        xs.append(x)
    xs = np.array(xs)
    y_seq = measure(xs, p)
    up, lo = _violations(y_seq, ymin, ymax)
    slack = up + lo
    objective = (-config.q_y1 * y_seq[-1, 0] + float(np.sum(u_seq * q_u))
                 + W * float(np.sum(slack * slack)))
    if not gradient:
        return objective, y_seq, slack

    grad = np.empty((n, NU))
    lam = np.zeros(4)
    for j in range(n - 1, -1, -1):
        dy = 2.0 * W * (up[j] - lo[j])
        if j == n - 1:
            dy[0] -= config.q_y1
        if np.any(dy):
            lam = lam + measure_jacobian(xs[j], p).T @ dy
        grad[j] = q_u + Fus[j].T @ lam
        lam = Fxs[j].T @ lam
    return objective, y_seq, slack, grad


def rate_feasible(u_seq, prev_u, config: MpcConfig) -> bool:
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, NU)
    full = np.vstack([np.asarray(prev_u, dtype=float), u_seq])
    return bool(np.all(u_seq >= config.lower) and np.all(u_seq <= config.upper)
                and np.all(np.abs(np.diff(full, axis=0)) <= config.rate))


def project_feasible(u_seq, prev_u, config: MpcConfig) -> np.ndarray:
    """Sequentially clip to the rate band around the previous input and the box.

    The result satisfies the box and rate bounds exactly in floating point.
    """
    lo, hi, du = config.lower, config.upper, config.rate
    out = np.array(u_seq, dtype=float).reshape(-1, NU)
    prev = np.clip(np.asarray(prev_u, dtype=float), lo, hi)
    for j in range(len(out)):
        u = np.clip(np.clip(out[j], prev - du, prev + du), lo, hi)
        for i in range(NU):
            while u[i] - prev[i] > du[i]:
                u[i] = np.nextafter(u[i], -np.inf)
            while prev[i] - u[i] > du[i]:
                u[i] = np.nextafter(u[i], np.inf)
        out[j] = u
        prev = u
    return out


def _sensitivities(u_seq, x0, dwin, config: MpcConfig, p: ModelParams):
    """Predicted outputs (N_p, 4) and their Jacobian w.r.t. the flattened inputs (N_p*4, N_p*3)."""
    n = config.N_p
    m = n * NU
    x = np.asarray(x0, dtype=float)
    S = np.zeros((4, m))
    xs = np.empty((n, 4))
    G = np.empty((n * NY, m))
    for j in range(n):
        x, Fx, Fu = rk4_step_jacobians(x, u_seq[j], dwin[j], p, config.h)
        S = Fx @ S
        S[:, j * NU:(j + 1) * NU] += Fu
        xs[j] = x
        G[j * NY:(j + 1) * NY] = measure_jacobian(x, p) @ S
    return measure(xs, p), G


def _rate_operator(n: int) -> sparse.csc_matrix:
    """Consecutive differences z_j - z_{j-1} of the flattened (n, 3) sequence (z_{-1} = 0)."""
    m = n * NU
    return sparse.csc_matrix(sparse.eye(m) - sparse.eye(m, k=-NU))


class _SqpSolver:
    """Gauss-Newton SQP on scaled inputs z in [0, 1].

    Each iteration linearizes the predicted outputs, solves a QP with explicit
    output slacks and a proximal term, then backtracks on the exact
    (slack-penalized) objective.
    """

    def __init__(self, x0, dwin, prev_u, config: MpcConfig, p: ModelParams):
        self.x0, self.dwin, self.cfg, self.p = x0, dwin, config, p
        n = config.N_p
        self.n, self.m = n, n * NU
        self.lo, self.hi = config.lower, config.upper
        self.span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        self.scale = config.objective_scale
        self.ymin, self.ymax = output_bounds(dwin, config)
        rows = np.isfinite(self.ymin.ravel()) | np.isfinite(self.ymax.ravel())
        self.rows = np.flatnonzero(rows)
        self.D = _rate_operator(n)
        seam = np.zeros(self.m)
        seam[:NU] = (prev_u - self.lo) / self.span
        self.seam = seam
        self.dz = np.tile(config.rate / self.span, n)

    def u_of(self, z):
        return self.lo + z.reshape(self.n, NU) * self.span

    def merit(self, z) -> float:
        return rollout_cost(self.u_of(z), self.x0, self.dwin, self.cfg, self.p)[0] / self.scale

    def qp_step(self, z, mu):
        cfg, m = self.cfg, self.m
        u = self.u_of(z)
        y, G = _sensitivities(u, self.x0, self.dwin, cfg, self.p)
        G = G * np.tile(self.span, self.n)  # d y / d z
        W = cfg.slack_weight / self.scale
        c = np.tile(np.asarray(cfg.q_u) * self.span, self.n)
        c = c - cfg.q_y1 * G[(self.n - 1) * NY]
        c = c / self.scale
        r = len(self.rows)
        Gr = G[self.rows]
        yr = y.ravel()[self.rows]
        lo_r = self.ymin.ravel()[self.rows] - yr
        hi_r = self.ymax.ravel()[self.rows] - yr
        P = sparse.block_diag([mu * sparse.eye(m), 2.0 * W * sparse.eye(r)], format="csc")
        q = np.concatenate([c, np.zeros(r)])
        eye_r = sparse.eye(r)
        A = sparse.vstack([
            sparse.hstack([sparse.csc_matrix(Gr), eye_r]),         # G dz + e >= ymin - y
            sparse.hstack([sparse.csc_matrix(Gr), -eye_r]),        # G dz - e <= ymax - y
            sparse.hstack([sparse.csc_matrix((r, m)), eye_r]),     # e >= 0
            sparse.hstack([sparse.eye(m), sparse.csc_matrix((m, r))]),
            sparse.hstack([self.D, sparse.csc_matrix((m, r))]),
        ], format="csc")
        Dz = self.D @ z
        inf = np.full(r, np.inf)
        low = np.concatenate([lo_r, -inf, np.zeros(r), -z, -self.dz + self.seam - Dz])
        upp = np.concatenate([inf, hi_r, inf, 1.0 - z, self.dz + self.seam - Dz])
        # l <= A v <= u  as  [A; -A] v + s = [u; -l], s >= 0
        keep_u, keep_l = np.isfinite(upp), np.isfinite(low)
        A_ineq = sparse.vstack([A[keep_u], -A[keep_l]], format="csc")
        b_ineq = np.concatenate([upp[keep_u], -low[keep_l]])
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = 1e-9
        res = clarabel.DefaultSolver(sparse.triu(P, format="csc"), q, A_ineq, b_ineq,
                                     [clarabel.NonnegativeConeT(len(b_ineq))], settings).solve()
        # the exact-merit line search guards any inaccuracy of an unconverged QP
        if str(res.status) not in ("Solved", "AlmostSolved", "InsufficientProgress"):
            raise FloatingPointError(f"QP subproblem: {res.status}")
        res_x = np.asarray(res.x)
        step = res_x[:m]
        slack = res_x[m:]
        viol = np.maximum(lo_r, 0.0) + np.maximum(-hi_r, 0.0)
        model_change = c @ step + 0.5 * mu * step @ step + W * (slack @ slack - viol @ viol)
        return np.clip(z + step, 0.0, 1.0) - z, model_change

    def solve(self, z0):
        cfg = self.cfg
        z = z0.copy()
        f = self.merit(z)
        mu = 1e-2
        it = 0
        status = "max_iterations"
        while it < cfg.max_iter:
            it += 1
            try:
                step, model_change = self.qp_step(z, mu)
            except FloatingPointError as exc:
                log.debug("QP subproblem failed: %s", exc)
                status = "qp_failed"
                break
            if not np.all(np.isfinite(step)):
                status = "qp_failed"
                break
            pred = -model_change
            if pred <= cfg.ftol * max(1.0, abs(f)) or np.max(np.abs(step)) < 1e-10:
                status = "optimal"
                break
            alpha, accepted = 1.0, False
            for _ in range(12):
                z_new = z + alpha * step
                try:
                    f_new = self.merit(z_new)
                except ModelError:
                    f_new = np.inf
                if f_new <= f - 1e-4 * alpha * pred:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                mu *= 10.0
                if mu > 1e8:
                    status = "line_search_failed"
                    break
                continue
            z, f = z_new, f_new
            mu = max(mu * 0.25, 1e-6) if alpha == 1.0 else mu * 4.0
        return z, status, it


def solve_ocp(x0, weather_window, prev_u, warm_start, config: MpcConfig,
              p: ModelParams = DEFAULT_MODEL_PARAMS) -> HorizonSolution:
    """Locally optimal input sequence over the horizon from state ``x0``."""
    tic = time.perf_counter()
    n = config.N_p
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    prev_u = np.asarray(prev_u, dtype=float)
    lo, hi = config.lower, config.upper
    if np.any(prev_u < lo) or np.any(prev_u > hi):
        raise ValueError("previous input outside box bounds")
    dwin = _window(weather_window, n + 1)

    if warm_start is None:
        warm_start = np.tile(prev_u, (n, 1))
    warm_start = np.asarray(warm_start, dtype=float).reshape(n, NU)
    start = project_feasible(warm_start, prev_u, config)

    sqp = _SqpSolver(x0, dwin, prev_u, config, p)
    candidates = []
    status, iterations = "failed", 0
    try:
        z, status, iterations = sqp.solve(((start - lo) / sqp.span).ravel())
        candidates.append(sqp.u_of(z))
    except (ModelError, FloatingPointError, ValueError) as exc:
        log.warning("NLP solve failed: %s", exc)

    # never return worse than the feasible starting points
    candidates.append(start)
    if rate_feasible(warm_start, prev_u, config):
        candidates.append(warm_start)
    zero = np.tile(lo, (n, 1))
    if rate_feasible(zero, prev_u, config):
        candidates.append(zero)

    best = None
    for cand in candidates:
        u = project_feasible(cand, prev_u, config)
        try:
            obj, y_seq, slack, g = rollout_cost(u, x0, dwin, config, p, gradient=True)
        except ModelError:
            continue
        if best is None or obj < best[0]:
            best = (obj, u, y_seq, slack, g)
    if best is None:
        raise ModelError("no candidate input sequence could be evaluated")
    obj, u, y_seq, slack, g = best
    return HorizonSolution(u_seq=u, y_seq=y_seq, slack_seq=slack, objective=float(obj),
                           status=status, iterations=iterations,
                           solve_time=time.perf_counter() - tic, gradient=g)


SOLVE_LOG_HEADER = ["k", "status", "objective", "iterations", "solve_time_s", "slack_max"]


class MpcController:
    """Receding-horizon controller usable as a :func:`model.simulate` callback.

    Applies the first optimized input, shifts the solution one step
    (repeating the last entry) as the next warm start, and keeps a per-step
    solve log.
    """

    def __init__(self, config: MpcConfig | None = None, p: ModelParams = DEFAULT_MODEL_PARAMS,
                 u0=U0):
        self.config = config or MpcConfig()
        self.p = p
        self.u0 = np.array(u0, dtype=float)
        self.reset()

    def reset(self):
        self.prev_u = self.u0.copy()
        self.warm = np.tile(self.u0, (self.config.N_p, 1))
        self.log: list[dict] = []
        self.solve_times: list[float] = []

    def __call__(self, k, x, y, window):
        tic = time.perf_counter()
        try:
            sol = solve_ocp(x, window, self.prev_u, self.warm, self.config, self.p)
        except Exception as exc:  # hold the last input on any solver failure
            log.error("step %d: MPC solve failed (%s); holding previous input", k, exc)
            elapsed = time.perf_counter() - tic
            self.solve_times.append(elapsed)
            self.log.append({"k": k, "status": "failed", "objective": math.nan, "iterations": 0,
                             "solve_time_s": elapsed, "slack_max": math.nan})
            self.warm = np.tile(self.prev_u, (self.config.N_p, 1))
            return self.prev_u.copy()
        u = sol.u_seq[0].copy()
        self.warm = np.vstack([sol.u_seq[1:], sol.u_seq[-1:]])
        self.prev_u = u
        self.solve_times.append(sol.solve_time)
        self.log.append({"k": k, "status": sol.status, "objective": sol.objective,
                         "iterations": sol.iterations, "solve_time_s": sol.solve_time,
                         "slack_max": float(sol.slack_seq.max())})
        return u

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SOLVE_LOG_HEADER)
            w.writeheader()
            for row in self.log:
                w.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


def mpc_controller(config: MpcConfig | None = None, p: ModelParams = DEFAULT_MODEL_PARAMS) -> MpcController:
    return MpcController(config, p)
