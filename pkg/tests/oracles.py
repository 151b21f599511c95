"""Independent reference implementations used as test oracles.

Nothing here imports the package's physics: the equations are transcribed
afresh with their own parameter table so that a shared typo cannot hide.
"""
from __future__ import annotations

import math

import numpy as np

# parameter table, keyed (i, j)
P = {
    (1, 1): 0.544, (1, 2): 2.65e-7, (1, 3): 53.0, (1, 4): 3.55e-9, (1, 5): 5.11e-6,
    (1, 6): 2.3e-4, (1, 7): 6.29e-4, (1, 8): 5.2e-5,
    (2, 1): 4.1, (2, 2): 4.87e-7, (2, 3): 7.5e-6, (2, 4): 8.31, (2, 5): 273.15,
    (2, 6): 101325.0, (2, 7): 0.044,
    (3, 1): 3e4, (3, 2): 1290.0, (3, 3): 6.1, (3, 4): 0.2,
    (4, 1): 4.1, (4, 2): 0.0036, (4, 3): 9348.0, (4, 4): 8314.0, (4, 5): 273.15,
    (4, 6): 17.4, (4, 7): 239.0, (4, 8): 17.269, (4, 9): 238.3,
}


def fluxes(x, u, d, p=P):
    """(phot_c, vent_c, vent_h, transp_h, denominator); works elementwise on arrays."""
    x1, x2, x3, x4 = x
    _, u2, _ = u
    d1, d2, _, d4 = d
    exp = np.exp
    a = p[1, 4] * d1
    b = (-p[1, 5] * x3 ** 2 + p[1, 6] * x3 - p[1, 7]) * (x2 - p[1, 8])
    phi = a + b
    phot = (1 - exp(-p[1, 3] * x1)) * (a * b) / phi
    vent_c = (u2 * 1e-3 + p[2, 3]) * (x2 - d2)
    vent_h = (u2 * 1e-3 + p[2, 3]) * (x4 - d4)
    transp = p[4, 2] * (1 - exp(-p[1, 3] * x1)) * (
        p[4, 3] / (p[4, 4] * (x3 + p[4, 5])) * exp(p[4, 6] * x3 / (x3 + p[4, 7])) - x4)
    return phot, vent_c, vent_h, transp, phi


def rhs(x, u, d, p=P):
    x1, x2, x3, x4 = x
    u1, u2, u3 = u
    d1, _, d3, _ = d
    phot, vent_c, vent_h, transp, _ = fluxes(x, u, d, p)
    r = 2.0 ** (x3 / 10 - 5 / 2)
    return (
        p[1, 1] * phot - p[1, 2] * x1 * r,
        (1 / p[2, 1]) * (-phot + p[2, 2] * x1 * r + u1 * 1e-6 - vent_c),
        (1 / p[3, 1]) * (u3 - (p[3, 2] * u2 * 1e-3 + p[3, 3]) * (x3 - d3) + p[3, 4] * d1),
        (1 / p[4, 1]) * (transp - vent_h),
    )


def euler(x, u, d, h, dt=0.1, p=P):
    """Explicit Euler over [0, h] with substep ``dt``; x, u, d may hold arrays per component."""
    n = int(round(h / dt))
    x = [np.asarray(v, dtype=float) for v in x]
    for _ in range(n):
        f = rhs(x, u, d, p)
        x = [xi + dt * fi for xi, fi in zip(x, f)]
    return np.array(x)


def rk4_many(x, u, d, h, steps, p=P):
    """``steps`` classical RK4 steps of size h (reference for order studies)."""
    x = np.array(x, dtype=float)
    for _ in range(steps):
        k1 = np.array(rhs(x, u, d, p))
        k2 = np.array(rhs(x + 0.5 * h * k1, u, d, p))
        k3 = np.array(rhs(x + 0.5 * h * k2, u, d, p))
        k4 = np.array(rhs(x + h * k3, u, d, p))
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def measure(x, p=P):
    x1, x2, x3, x4 = x
    y2 = 1e3 * p[2, 4] * (x3 + p[2, 5]) / (p[2, 6] * p[2, 7]) * x2
    y4 = 1e2 * p[2, 4] * (x3 + p[2, 5]) / (11 * math.exp(p[4, 8] * x3 / (x3 + p[4, 9]))) * x4
    return np.array([1e3 * x1, y2, x3, y4])


def epi_bruteforce(x1_final, u_rows, h, c_co2=0.42, c_q=6.35e-9, c_pri1=1.8, c_pri2=16.0):
    """Term-by-term accumulation of harvest income minus input costs."""
    total = 0.0
    for u in u_rows:
        total += c_q * float(u[2]) * h
        total += c_co2 * (float(u[0]) / 1e6) * h
    return c_pri1 + c_pri2 * x1_final - total


def band_check(y_rows, d1_rows, threshold=1e-3):
    """Loop-based count of steps outside CO2 <= 1.6, the day/night temperature band and RH <= 70."""
    counts = {"co2": 0, "temperature": 0, "humidity": 0}
    worst = {"co2": 0.0, "temperature": 0.0, "humidity": 0.0}
    for y, d1 in zip(y_rows, d1_rows):
        t_lo, t_hi = (10.0, 15.0) if d1 < 10 else (15.0, 20.0)
        ex = {
            "co2": max(y[1] - 1.6, 0.0 - y[1], 0.0),
            "temperature": max(y[2] - t_hi, t_lo - y[2], 0.0),
            "humidity": max(y[3] - 70.0, 0.0 - y[3], 0.0),
        }
        for k, v in ex.items():
            if v > threshold:
                counts[k] += 1
            worst[k] = max(worst[k], v)
    n = len(y_rows)
    return {k: counts[k] / n for k in counts}, worst


def central_diff(f, theta, eps=1e-6):
    theta = np.array(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = eps
        g.flat[i] = (f(theta + e) - f(theta - e)) / (2 * eps)
    return g


def reward(dy1, y2, y3, u, day, literal=False):
    """Per-step reward written out branch by branch with the tabulated constants."""
    c_u = [-4.5360e-4, -0.0075, -8.5725e-4]
    if day:
        c_lo, c_hi, t_lo, t_hi = 0.8, 1.6, 15.0, 20.0
    else:
        c_lo, c_hi, t_lo, t_hi = 0.4, 0.8, 10.0, 15.0
    if y2 < c_lo:
        r_c = -0.1 * (y2 - c_lo) ** 2
    elif y2 > c_hi:
        r_c = -0.1 * (y2 - c_hi) ** 2
    else:
        r_c = 0.0005
    if y3 < t_lo:
        r_t = -0.001 * (y3 - t_lo) ** 2
    elif y3 > t_hi:
        r_t = -0.001 * (y3 - t_hi) ** 2
    else:
        r_t = 0.0005
    pen = sum((c if literal else abs(c)) * uj for c, uj in zip(c_u, u))
    return 16.0 * dy1 + r_c + r_t - pen
