"""Greenhouse environment for the agent: observation, reward and episode logic."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..model import (DEFAULT_H, DEFAULT_MODEL_PARAMS, U0, U_MAX, U_MIN, X0, ModelError,
                     ModelParams, clamp_state, measure, rk4_step)
from ..mpc import DAY_RADIATION, temperature_band
from ..weather import WeatherSeries, perturb

N_OBS = 10
N_ACT = 3


@dataclass
class ReferenceSchedule:
    """Day/night bands and references keyed on d1 >= 10 W m^-2.

    CO2 values are in ppm 10^3, temperatures in C. References sit at the
    band midpoints.
    """

    co2_night: tuple = (0.4, 0.8)
    co2_day: tuple = (0.8, 1.6)

    def bands(self, d1):
        """Return (co2_min, co2_max, t_min, t_max) for radiation ``d1``."""
        day = np.asarray(d1) >= DAY_RADIATION
        co2_min = np.where(day, self.co2_day[0], self.co2_night[0])
        co2_max = np.where(day, self.co2_day[1], self.co2_night[1])
        t_min, t_max = temperature_band(d1)
        if np.ndim(d1) == 0:
            return float(co2_min), float(co2_max), t_min, t_max
        return co2_min, co2_max, t_min, t_max

    def refs(self, d1):
        """Return (y2_ref, y3_ref)."""
        co2_min, co2_max, t_min, t_max = self.bands(d1)
        return 0.5 * (co2_min + co2_max), 0.5 * (t_min + t_max)


@dataclass
class RewardConfig:
    c_r1: float = 16.0
    c_ru: tuple = (-4.5360e-4, -0.0075, -8.5725e-4)
    c_co2_1: float = 0.1
    c_co2_2: float = 0.0005
    c_T_1: float = 0.001
    c_T_2: float = 0.0005
    literal_reward_sign: bool = False
    failure_reward: float = -10.0  # step reward when the model leaves its valid domain

    def __post_init__(self):
        self.c_ru = tuple(float(v) for v in self.c_ru)

    def to_dict(self) -> dict:
        return asdict(self)


def _band_reward(v, lo, hi, c_out, c_in):
    if v < lo:
        return -c_out * (v - lo) ** 2
    if v > hi:
        return -c_out * (v - hi) ** 2
    return c_in


def reward(dy1: float, y, u_prev, refs: ReferenceSchedule, d1: float,
           cfg: RewardConfig | None = None) -> float:
    """Per-step reward from the dry-matter increment, band terms and input use.

    ``dy1`` is in g m^-2, ``y`` the current measurement, ``u_prev`` the input
    applied over the last step and ``d1`` the radiation selecting day/night
    bands.
    """
    cfg = cfg or RewardConfig()
    co2_min, co2_max, t_min, t_max = refs.bands(d1)
    r_co2 = _band_reward(float(y[1]), co2_min, co2_max, cfg.c_co2_1, cfg.c_co2_2)
    r_t = _band_reward(float(y[2]), t_min, t_max, cfg.c_T_1, cfg.c_T_2)
    c_u = np.asarray(cfg.c_ru)
    if not cfg.literal_reward_sign:
        c_u = np.abs(c_u)
    penalty = float(np.dot(c_u, np.asarray(u_prev, dtype=float)))
    return cfg.c_r1 * float(dy1) + r_co2 + r_t - penalty


# physically plausible ranges used for the fixed affine observation scaling
DEFAULT_OBS_RANGES = (
    (-0.2, 0.8),         # dry matter increment, g m^-2 per step
    (-1.5, 1.5),         # CO2 error, ppm 10^3
    (-10.0, 10.0),       # temperature error, C
    (40.0, 100.0),       # relative humidity, %
    (0.0, 500.0),        # radiation, W m^-2
    (4e-4, 1.1e-3),      # outdoor CO2, kg m^-3
    (-5.0, 25.0),        # outdoor temperature, C
    (0.0, float(U_MAX[0])),
    (0.0, float(U_MAX[1])),
    (0.0, float(U_MAX[2])),
)


@dataclass
class StateScaler:
    """Maps each observation range onto [-1, 1]; values are clipped to +-clip."""

    ranges: tuple = DEFAULT_OBS_RANGES
    clip: float = 5.0

    def __post_init__(self):
        r = np.asarray(self.ranges, dtype=float)
        self.ranges = tuple(map(tuple, r.tolist()))
        self._center = 0.5 * (r[:, 0] + r[:, 1])
        self._half = 0.5 * (r[:, 1] - r[:, 0])

    def normalize(self, s):
        return np.clip((np.asarray(s, dtype=float) - self._center) / self._half, -self.clip, self.clip)

    def denormalize(self, z):
        return np.asarray(z, dtype=float) * self._half + self._center

    def to_dict(self) -> dict:
        return {"ranges": [list(r) for r in self.ranges], "clip": self.clip}


def build_state(y, y_prev, d, u_prev, refs: ReferenceSchedule) -> np.ndarray:
    """Raw 10-element agent observation."""
    y2_ref, y3_ref = refs.refs(float(d[0]))
    return np.array([
        y[0] - y_prev[0],
        y2_ref - y[1],
        y3_ref - y[2],
        y[3],
        d[0], d[1], d[2],
        *np.asarray(u_prev, dtype=float),
    ])


def action_to_input(a, u_min=U_MIN, u_max=U_MAX) -> np.ndarray:
    """Affine map of tanh outputs in [-1, 1] onto the input box."""
    return u_min + (np.asarray(a, dtype=float) + 1.0) * 0.5 * (u_max - u_min)


def input_to_action(u, u_min=U_MIN, u_max=U_MAX) -> np.ndarray:
    return 2.0 * (np.asarray(u, dtype=float) - u_min) / (u_max - u_min) - 1.0


class GreenhouseEnv:
    """Episodic wrapper around the model: ``reset()`` then ``step(u)`` n_steps times."""

    def __init__(self, weather: WeatherSeries, p: ModelParams = DEFAULT_MODEL_PARAMS,
                 x0=X0, n_steps: int = 96, refs: ReferenceSchedule | None = None,
                 reward_cfg: RewardConfig | None = None, h: float | None = None):
        if len(weather) < n_steps + 1:
            raise ValueError(f"weather has {len(weather)} records, need {n_steps + 1}")
        self.weather = weather
        self.p = p
        self.x0 = np.array(x0, dtype=float)
        self.n_steps = n_steps
        self.refs = refs or ReferenceSchedule()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.h = float(h if h is not None else weather.sample_period or DEFAULT_H)

    def reset(self) -> np.ndarray:
        self.k = 0
        self.x = self.x0.copy()
        self.y = measure(self.x, self.p)
        self.u_prev = U0.copy()
        return build_state(self.y, self.y, self.weather.d[0], self.u_prev, self.refs)

    def step(self, u):
        u = np.clip(np.asarray(u, dtype=float), U_MIN, U_MAX)
        d = self.weather.d[self.k]
        try:
            x = clamp_state(rk4_step(self.x, u, d, self.p, self.h), self.k)
            y = measure(x, self.p)
        except ModelError as exc:
            # e.g. the photosynthesis denominator vanishing above ~42 C
            self.k = self.n_steps
            s = build_state(self.y, self.y, d, u, self.refs)
            return s, self.reward_cfg.failure_reward, True, {"x": self.x, "y": self.y,
                                                             "failure": str(exc)}
        self.k += 1
        d_next = self.weather.d[self.k]
        r = reward(y[0] - self.y[0], y, u, self.refs, float(d_next[0]), self.reward_cfg)
        s_next = build_state(y, self.y, d_next, u, self.refs)
        self.x, self.y, self.u_prev = x, y, u
        done = self.k >= self.n_steps
        return s_next, r, done, {"x": x, "y": y}


@dataclass
class EpisodeSampler:
    """Builds training episodes: a random day window of ``base`` weather,
    per-channel scaled by U(kappa_low, kappa_high), and x0 scaled by
    U(x0_low, x0_high) componentwise."""

    base: WeatherSeries
    p: ModelParams = DEFAULT_MODEL_PARAMS
    n_steps: int = 96
    kappa_low: float = 0.7
    kappa_high: float = 1.3
    x0_low: float = 0.8
    x0_high: float = 1.2
    refs: ReferenceSchedule = field(default_factory=ReferenceSchedule)
    reward_cfg: RewardConfig = field(default_factory=RewardConfig)

    def __call__(self, rng: np.random.Generator) -> GreenhouseEnv:
        per_day = self.n_steps
        n_days = (len(self.base) - 1) // per_day
        if n_days < 1:
            raise ValueError("base weather shorter than one episode")
        start = int(rng.integers(n_days)) * per_day
        window = self.base.slice(start, start + self.n_steps + 1)
        window = perturb(window, rng, self.kappa_low, self.kappa_high)
        x0 = X0 * rng.uniform(self.x0_low, self.x0_high, size=4)
        return GreenhouseEnv(window, self.p, x0, self.n_steps, self.refs, self.reward_cfg)
