"""Lettuce greenhouse climate model and its fixed-step simulation.

States, inputs and disturbances are plain float arrays whose last axis holds
the components, so every function here also works on stacked batches:

    x = (dry matter [kg m^-2], indoor CO2 [kg m^-3], air temp [C], humidity [kg m^-3])
    u = (CO2 supply [mg m^-2 s^-1], ventilation [mm s^-1], heating [W m^-2])
    d = (radiation [W m^-2], outdoor CO2 [kg m^-3], outdoor temp [C], outdoor humidity [kg m^-3])
    y = (dry matter [g m^-2], CO2 [ppm 10^3], air temp [C], relative humidity [%])
"""
from __future__ import annotations

import csv
import logging
import math
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

import numpy as np

log = logging.getLogger(__name__)

NX, NU, ND, NY = 4, 3, 4, 4

X0 = np.array([0.0035, 0.001, 15.0, 0.008])
U0 = np.zeros(NU)
U_MIN = np.zeros(NU)
U_MAX = np.array([1.2, 7.5, 150.0])

DEFAULT_H = 900.0  # 15 minutes
DENOM_EPS = 1e-12

_TABLE = {
    (1, 1): 0.544, (1, 2): 2.65e-7, (1, 3): 53.0, (1, 4): 3.55e-9,
    (1, 5): 5.11e-6, (1, 6): 2.3e-4, (1, 7): 6.29e-4, (1, 8): 5.2e-5,
    (2, 1): 4.1, (2, 2): 4.87e-7, (2, 3): 7.5e-6, (2, 4): 8.31,
    (2, 5): 273.15, (2, 6): 101325.0, (2, 7): 0.044,
    (3, 1): 3.0e4, (3, 2): 1290.0, (3, 3): 6.1, (3, 4): 0.2,
    (4, 1): 4.1, (4, 2): 0.0036, (4, 3): 9348.0, (4, 4): 8314.0,
    (4, 5): 273.15, (4, 6): 17.4, (4, 7): 239.0, (4, 8): 17.269, (4, 9): 238.3,
}
PARAM_NAMES: tuple[str, ...] = tuple(f"p_{{{i},{j}}}" for i, j in _TABLE)
DEFAULT_PARAMS: dict[str, float] = {f"p_{{{i},{j}}}": v for (i, j), v in _TABLE.items()}


class ModelError(Exception):
    """Base class for model evaluation failures."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class DegenerateDenominator(ModelError):
    pass


class NonFiniteState(ModelError):
    pass


def _key(k) -> str:
    if isinstance(k, tuple):
        return f"p_{{{k[0]},{k[1]}}}"
    return k


class ModelParams(Mapping):
    """Immutable table of the 28 model parameters keyed ``"p_{i,j}"``.

    Lookups also accept ``(i, j)`` tuples. Overrides are validated against the
    known names and must be strictly positive.
    """

    def __init__(self, overrides: Mapping | None = None):
        values = dict(DEFAULT_PARAMS)
        for k, v in (overrides or {}).items():
            name = _key(k)
            if name not in values:
                raise KeyError(f"unknown model parameter {name!r}")
            values[name] = float(v)
        bad = [k for k, v in values.items() if not (v > 0 and math.isfinite(v))]
        if bad:
            raise ValueError(f"model parameters must be finite and > 0: {bad}")
        self._values = values
        self.vector = tuple(values[n] for n in PARAM_NAMES)

    def __getitem__(self, k) -> float:
        return self._values[_key(k)]

    def __iter__(self) -> Iterator[str]:
        return iter(PARAM_NAMES)

    def __len__(self) -> int:
        return len(PARAM_NAMES)

    def __repr__(self) -> str:
        changed = {k: v for k, v in self._values.items() if v != DEFAULT_PARAMS[k]}
        return f"ModelParams({changed})"

    def to_dict(self) -> dict[str, float]:
        return dict(self._values)


DEFAULT_MODEL_PARAMS = ModelParams()


class FluxSet(NamedTuple):
    phot_c: np.ndarray    # gross canopy photosynthesis
    vent_c: np.ndarray    # CO2 exchange through the vents
    vent_h: np.ndarray    # H2O exchange through the vents
    transp_h: np.ndarray  # canopy transpiration
    denom: np.ndarray     # photosynthesis denominator


def _split(a, n):
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != n:
        raise ValueError(f"expected last axis of length {n}, got shape {a.shape}")
    return [a[..., i] for i in range(n)]


def canopy_fluxes(x, u, d, p: ModelParams = DEFAULT_MODEL_PARAMS, eps: float = DENOM_EPS) -> FluxSet:
    x1, x2, x3, x4 = _split(x, NX)
    _, u2, _ = _split(u, NU)
    d1, d2, _, d4 = _split(d, ND)

    light = p[1, 4] * d1
    co2_term = (-p[1, 5] * x3**2 + p[1, 6] * x3 - p[1, 7]) * (x2 - p[1, 8])
    denom = light + co2_term
    if np.any(np.abs(denom) < eps):
        raise DegenerateDenominator(f"photosynthesis denominator below {eps:g}: {denom}")
    cover = 1.0 - np.exp(-p[1, 3] * x1)
    phot_c = cover * light * co2_term / denom

    vent = u2 * 1e-3 + p[2, 3]
    vent_c = vent * (x2 - d2)
    vent_h = vent * (x4 - d4)

    sat = p[4, 3] / (p[4, 4] * (x3 + p[4, 5])) * np.exp(p[4, 6] * x3 / (x3 + p[4, 7]))
    transp_h = p[4, 2] * cover * (sat - x4)
    return FluxSet(phot_c, vent_c, vent_h, transp_h, denom)


def state_derivative(x, u, d, p: ModelParams = DEFAULT_MODEL_PARAMS, eps: float = DENOM_EPS) -> np.ndarray:
    """Continuous-time right-hand side dx/dt, in per-second rates."""
    x1, _, x3, _ = _split(x, NX)
    u1, u2, u3 = _split(u, NU)
    d1, _, d3, _ = _split(d, ND)
    fl = canopy_fluxes(x, u, d, p, eps)

    resp = x1 * 2.0 ** (x3 / 10.0 - 2.5)
    dx1 = p[1, 1] * fl.phot_c - p[1, 2] * resp
    dx2 = (-fl.phot_c + p[2, 2] * resp + u1 * 1e-6 - fl.vent_c) / p[2, 1]
    dx3 = (u3 - (p[3, 2] * u2 * 1e-3 + p[3, 3]) * (x3 - d3) + p[3, 4] * d1) / p[3, 1]
    dx4 = (fl.transp_h - fl.vent_h) / p[4, 1]
    return np.stack([dx1, dx2, dx3, dx4], axis=-1)


def _rhs_floats(x1, x2, x3, x4, u1, u2, u3, d1, d2, d3, d4, pv, eps):
    # same expressions as state_derivative, on Python floats (hot path of the MPC)
    (p11, p12, p13, p14, p15, p16, p17, p18,
     p21, p22, p23, _, _, _, _,
     p31, p32, p33, p34,
     p41, p42, p43, p44, p45, p46, p47, _, _) = pv
    light = p14 * d1
    co2_term = (-p15 * x3**2 + p16 * x3 - p17) * (x2 - p18)
    denom = light + co2_term
    if abs(denom) < eps:
        raise DegenerateDenominator(f"photosynthesis denominator below {eps:g}: {denom}")
    cover = 1.0 - math.exp(-p13 * x1)
    phot_c = cover * light * co2_term / denom
    vent = u2 * 1e-3 + p23
    sat = p43 / (p44 * (x3 + p45)) * math.exp(p46 * x3 / (x3 + p47))
    transp_h = p42 * cover * (sat - x4)
    resp = x1 * 2.0 ** (x3 / 10.0 - 2.5)
    return (p11 * phot_c - p12 * resp,
            (-phot_c + p22 * resp + u1 * 1e-6 - vent * (x2 - d2)) / p21,
            (u3 - (p32 * u2 * 1e-3 + p33) * (x3 - d3) + p34 * d1) / p31,
            (transp_h - vent * (x4 - d4)) / p41)


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise NonFiniteState(f"non-finite {what}: {a}")


def _rk4_floats(x, u, d, p: ModelParams, h: float) -> np.ndarray:
    pv = p.vector
    u1, u2, u3 = (float(v) for v in u)
    d1, d2, d3, d4 = (float(v) for v in d)
    a1, a2, a3, a4 = (float(v) for v in x)
    half = 0.5 * h
    stages = []
    s = (a1, a2, a3, a4)
    for i, c in enumerate((half, half, h, None)):
        try:
            k = _rhs_floats(*s, u1, u2, u3, d1, d2, d3, d4, pv, DENOM_EPS)
        except (OverflowError, ZeroDivisionError) as exc:
            raise NonFiniteState(f"RK4 stage {i + 1}: {exc}") from None
        if not all(math.isfinite(v) for v in k):
            raise NonFiniteState(f"non-finite RK4 stage {i + 1}: {k}")
        stages.append(k)
        if c is not None:
            s = (a1 + c * k[0], a2 + c * k[1], a3 + c * k[2], a4 + c * k[3])
    k1, k2, k3, k4 = stages
    out = np.array([a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                    for a, b1, b2, b3, b4 in zip((a1, a2, a3, a4), k1, k2, k3, k4)])
    _check_finite(out, "state")
    return out


def rk4_step(x, u, d, p: ModelParams = DEFAULT_MODEL_PARAMS, h: float = DEFAULT_H) -> np.ndarray:
    """One classical RK4 step of length ``h`` seconds with u and d held constant."""
    if not h > 0:
        raise ValueError("step length h must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and np.ndim(u) == 1 and np.ndim(d) == 1:
        return _rk4_floats(x, u, d, p, h)
    k1 = state_derivative(x, u, d, p)
    _check_finite(k1, "RK4 stage 1")
    k2 = state_derivative(x + 0.5 * h * k1, u, d, p)
    _check_finite(k2, "RK4 stage 2")
    k3 = state_derivative(x + 0.5 * h * k2, u, d, p)
    _check_finite(k3, "RK4 stage 3")
    k4 = state_derivative(x + h * k3, u, d, p)
    _check_finite(k4, "RK4 stage 4")
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(out, "state")
    return out


def measure(x, p: ModelParams = DEFAULT_MODEL_PARAMS) -> np.ndarray:
    x1, x2, x3, x4 = _split(x, NX)
    if np.any(x3 <= -p[2, 5]):
        raise ValueError("air temperature at or below absolute zero")
    y1 = 1e3 * x1
    y2 = 1e3 * p[2, 4] * (x3 + p[2, 5]) / (p[2, 6] * p[2, 7]) * x2
    y3 = x3 + 0.0
    y4 = 1e2 * p[2, 4] * (x3 + p[2, 5]) / (11.0 * np.exp(p[4, 8] * x3 / (x3 + p[4, 9]))) * x4
    return np.stack([y1, y2, y3, y4], axis=-1)


# -- analytic sensitivities (single trajectory, plain floats) -----------------

def derivative_jacobians(x, u, d, p: ModelParams = DEFAULT_MODEL_PARAMS, eps: float = DENOM_EPS):
    """Return ``(f, df/dx, df/du)`` at one point as numpy arrays (4,), (4,4), (4,3)."""
    (p11, p12, p13, p14, p15, p16, p17, p18,
     p21, p22, p23, p24, p25, p26, p27,
     p31, p32, p33, p34,
     p41, p42, p43, p44, p45, p46, p47, p48, p49) = p.vector
    x1, x2, x3, x4 = (float(v) for v in x)
    u1, u2, u3 = (float(v) for v in u)
    d1, d2, d3, d4 = (float(v) for v in d)

    ecov = math.exp(-p13 * x1)
    cover = 1.0 - ecov
    dcover = p13 * ecov
    poly = -p15 * x3 * x3 + p16 * x3 - p17
    dpoly = -2.0 * p15 * x3 + p16
    light = p14 * d1
    co2_term = poly * (x2 - p18)
    denom = light + co2_term
    if abs(denom) < eps:
        raise DegenerateDenominator(f"photosynthesis denominator below {eps:g}: {denom}")
    frac = light * co2_term / denom
    dfrac_db = (light / denom) ** 2
    phot = cover * frac
    phot_x = (dcover * frac, cover * dfrac_db * poly, cover * dfrac_db * dpoly * (x2 - p18), 0.0)

    g = 2.0 ** (x3 / 10.0 - 2.5)
    resp = x1 * g
    resp_x = (g, 0.0, x1 * g * math.log(2.0) / 10.0, 0.0)

    vent = u2 * 1e-3 + p23
    vent_c = vent * (x2 - d2)
    vent_h = vent * (x4 - d4)

    tk = x3 + p45
    ex = math.exp(p46 * x3 / (x3 + p47))
    sat = p43 / (p44 * tk) * ex
    dsat = sat * (-1.0 / tk + p46 * p47 / (x3 + p47) ** 2)
    transp = p42 * cover * (sat - x4)
    transp_x = (p42 * dcover * (sat - x4), 0.0, p42 * cover * dsat, -p42 * cover)

    hloss = p32 * u2 * 1e-3 + p33
    f = np.array([
        p11 * phot - p12 * resp,
        (-phot + p22 * resp + u1 * 1e-6 - vent_c) / p21,
        (u3 - hloss * (x3 - d3) + p34 * d1) / p31,
        (transp - vent_h) / p41,
    ])
    A = np.empty((4, 4))
    for j in range(4):
        A[0, j] = p11 * phot_x[j] - p12 * resp_x[j]
        A[1, j] = (-phot_x[j] + p22 * resp_x[j]) / p21
        A[3, j] = transp_x[j] / p41
    A[1, 1] -= vent / p21
    A[2, :] = (0.0, 0.0, -hloss / p31, 0.0)
    A[3, 3] -= vent / p41
    B = np.zeros((4, 3))
    B[1, 0] = 1e-6 / p21
    B[1, 1] = -1e-3 * (x2 - d2) / p21
    B[2, 1] = -p32 * 1e-3 * (x3 - d3) / p31
    B[2, 2] = 1.0 / p31
    B[3, 1] = -1e-3 * (x4 - d4) / p41
    return f, A, B


def rk4_step_jacobians(x, u, d, p: ModelParams = DEFAULT_MODEL_PARAMS, h: float = DEFAULT_H):
    """RK4 step plus its sensitivities ``d x_next/dx`` (4,4) and ``d x_next/du`` (4,3)."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(4)
    try:
        k1, A1, B1 = derivative_jacobians(x, u, d, p)
        k2, A2, B2 = derivative_jacobians(x + 0.5 * h * k1, u, d, p)
        k3, A3, B3 = derivative_jacobians(x + 0.5 * h * k2, u, d, p)
        k4, A4, B4 = derivative_jacobians(x + h * k3, u, d, p)
    except (OverflowError, ZeroDivisionError) as exc:
        raise NonFiniteState(f"RK4 sensitivities: {exc}") from None
    # stage sensitivities
    K1x, K1u = A1, B1
    K2x = A2 @ (eye + 0.5 * h * K1x)
    K2u = B2 + 0.5 * h * (A2 @ K1u)
    K3x = A3 @ (eye + 0.5 * h * K2x)
    K3u = B3 + 0.5 * h * (A3 @ K2u)
    K4x = A4 @ (eye + h * K3x)
    K4u = B4 + h * (A4 @ K3u)
    out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _check_finite(out, "state")
    Fx = eye + (h / 6.0) * (K1x + 2.0 * K2x + 2.0 * K3x + K4x)
    Fu = (h / 6.0) * (K1u + 2.0 * K2u + 2.0 * K3u + K4u)
    return out, Fx, Fu


def measure_jacobian(x, p: ModelParams = DEFAULT_MODEL_PARAMS) -> np.ndarray:
    """``dy/dx`` at one state, shape (4, 4)."""
    _, x2, x3, x4 = (float(v) for v in x)
    c2 = 1e3 * p[2, 4] / (p[2, 6] * p[2, 7])
    tk = x3 + p[2, 5]
    ex = math.exp(p[4, 8] * x3 / (x3 + p[4, 9]))
    c4 = 1e2 * p[2, 4] / 11.0
    rh_coef = c4 * tk / ex
    drh_coef = c4 / ex * (1.0 - tk * p[4, 8] * p[4, 9] / (x3 + p[4, 9]) ** 2)
    J = np.zeros((4, 4))
    J[0, 0] = 1e3
    J[1, 1] = c2 * tk
    J[1, 2] = c2 * x2
    J[2, 2] = 1.0
    J[3, 2] = drh_coef * x4
    J[3, 3] = rh_coef
    return J


# -- closed-loop simulation ---------------------------------------------------

CSV_HEADER = ["k", "t", "x1", "x2", "x3", "x4", "u1", "u2", "u3",
              "d1", "d2", "d3", "d4", "y1", "y2", "y3", "y4"]

Controller = Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class Trajectory:
    """Closed-loop record.

    Row ``k`` holds x(k), y(k), d(k) and the input u(k) applied over
    [k, k+1). The final row has no applied input (NaN).
    """

    t: np.ndarray  # (n+1,)
    x: np.ndarray  # (n+1, 4)
    u: np.ndarray  # (n+1, 3), last row NaN
    d: np.ndarray  # (n+1, 4)
    y: np.ndarray  # (n+1, 4)
    h: float = DEFAULT_H
    step_time: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    @property
    def applied_u(self) -> np.ndarray:
        return self.u[:-1]

    def to_csv(self, path) -> None:
        rows = np.column_stack([np.arange(len(self.t)), self.t, self.x, self.u, self.d, self.y])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for k, row in enumerate(rows):
                w.writerow([str(k)] + [format(v, ".17g") for v in row[1:]])

    @classmethod
    def from_csv(cls, path, h: float | None = None) -> "Trajectory":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: unexpected trajectory header {header}")
            data = np.array([[float(v) for v in row] for row in reader], dtype=float)
        data = data.reshape(-1, len(CSV_HEADER))
        t = data[:, 1]
        if h is None:
            h = float(t[1] - t[0]) if len(t) > 1 else DEFAULT_H
        return cls(t=t, x=data[:, 2:6], u=data[:, 6:9], d=data[:, 9:13], y=data[:, 13:17], h=h)


def clamp_state(x: np.ndarray, step: int | None = None) -> np.ndarray:
    """Clip dry matter, CO2 and humidity at zero, logging when it happens."""
    neg = x[[0, 1, 3]] < 0
    if np.any(neg):
        log.warning("step %s: clamping negative state components %s", step, x)
        x = x.copy()
        for i in (0, 1, 3):
            x[i] = max(x[i], 0.0)
    return x


def simulate(x0, controller: Controller, weather, p: ModelParams = DEFAULT_MODEL_PARAMS,
             n_steps: int | None = None, h: float | None = None,
             u_min=U_MIN, u_max=U_MAX) -> Trajectory:
    """Roll the plant forward under ``controller``.

    ``controller(k, x, y, window)`` gets the disturbance rows from step ``k``
    onwards and returns an input, which is clipped to the box before use.
    ``weather`` is anything with ``.d`` (disturbance rows), ``.t`` and
    ``.sample_period``.
    """
    d_all = np.asarray(weather.d, dtype=float)
    if h is None:
        h = float(getattr(weather, "sample_period", DEFAULT_H))
    if n_steps is None:
        n_steps = len(d_all) - 1
    if len(d_all) < n_steps:
        raise ValueError(f"weather covers {len(d_all)} steps, {n_steps} requested")
    t0 = float(weather.t[0]) if len(weather.t) else 0.0

    xs = np.empty((n_steps + 1, NX))
    us = np.full((n_steps + 1, NU), np.nan)
    ys = np.empty((n_steps + 1, NY))
    ds = np.full((n_steps + 1, ND), np.nan)
    step_time = np.zeros(n_steps)
    x = np.array(x0, dtype=float)
    xs[0] = x
    ys[0] = measure(x, p)
    for k in range(n_steps):
        ds[k] = d_all[k]
        tic = time.perf_counter()
        u = controller(k, x.copy(), ys[k].copy(), d_all[k:])
        step_time[k] = time.perf_counter() - tic
        u = np.clip(np.asarray(u, dtype=float), u_min, u_max)
        us[k] = u
        try:
            x = rk4_step(x, u, d_all[k], p, h)
        except ModelError as exc:
            raise type(exc)(str(exc), step=k) from exc
        x = clamp_state(x, k)
        xs[k + 1] = x
        ys[k + 1] = measure(x, p)
    if len(d_all) > n_steps:
        ds[n_steps] = d_all[n_steps]
    t = t0 + h * np.arange(n_steps + 1)
    return Trajectory(t=t, x=xs, u=us, d=ds, y=ys, h=h, step_time=step_time)


def constant_controller(u) -> Controller:
    u = np.asarray(u, dtype=float)

    def ctrl(k, x, y, window):
        return u

    return ctrl
