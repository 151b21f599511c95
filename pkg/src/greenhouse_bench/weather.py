"""Disturbance series: CSV loading, block resampling, synthetic weather and
the per-episode multiplicative perturbation used during agent training."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("t", "rad_Wm2", "co2_kgm3", "temp_C", "hum_kgm3")
DEFAULT_COLUMN_MAP = dict(zip(("t", "d1", "d2", "d3", "d4"), CSV_COLUMNS))

# loose plausibility limits used as a unit check on loaded data
_UNIT_LIMITS = {
    "d1": (0.0, 2000.0),   # W m^-2
    "d2": (0.0, 1e-2),     # kg m^-3, catches ppm-valued columns
    "d3": (-60.0, 70.0),   # C, catches Kelvin-valued columns
    "d4": (0.0, 0.1),      # kg m^-3
}


class WeatherError(Exception):
    pass


class ParseError(WeatherError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class GapError(WeatherError):
    def __init__(self, t_before: float, t_after: float, period: float):
        super().__init__(f"gap between t={t_before:g} and t={t_after:g} exceeds sample period {period:g}")
        self.t_before = t_before
        self.t_after = t_after


class IncompatiblePeriod(WeatherError):
    pass


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    """Evenly spaced disturbance records; ``d[k] = (d1, d2, d3, d4)`` at ``t[k]``."""

    t: np.ndarray
    d: np.ndarray
    sample_period: float

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        d = np.array(self.d, dtype=float).reshape(-1, 4)
        if len(t) != len(d):
            raise ValueError("t and d must have the same length")
        if len(t) > 1:
            if not np.allclose(np.diff(t), self.sample_period, rtol=0, atol=1e-6 * self.sample_period):
                raise ValueError("timestamps must be strictly increasing with constant spacing")
        if not np.all(np.isfinite(d)):
            raise ValueError("disturbances must be finite")
        if np.any(d[:, [0, 1, 3]] < 0):
            raise ValueError("radiation, CO2 and humidity must be nonnegative")
        t.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "sample_period", float(self.sample_period))

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeatherSeries):
            return NotImplemented
        return (self.sample_period == other.sample_period
                and np.array_equal(self.t, other.t) and np.array_equal(self.d, other.d))

    def slice(self, start: int, stop: int | None = None) -> "WeatherSeries":
        return WeatherSeries(self.t[start:stop], self.d[start:stop], self.sample_period)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for tk, dk in zip(self.t, self.d):
                w.writerow([format(v, ".17g") for v in (tk, *dk)])


def load_csv(path, column_map: dict[str, str] | None = None) -> WeatherSeries:
    """Read a weather file.

    ``column_map`` maps the logical names ``t, d1..d4`` to header names; the
    default expects ``t,rad_Wm2,co2_kgm3,temp_C,hum_kgm3``. The sample period
    is taken from the first two rows.
    """
    cmap = dict(DEFAULT_COLUMN_MAP)
    cmap.update(column_map or {})
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        try:
            idx = {name: header.index(col) for name, col in cmap.items()}
        except ValueError as exc:
            raise ParseError(f"{path}: missing column ({exc})", line=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = {name: float(row[i]) for name, i in idx.items()}
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            for name, (lo, hi) in _UNIT_LIMITS.items():
                v = vals[name]
                if not (lo <= v <= hi):
                    raise ParseError(f"{path}: {name}={v:g} outside plausible range [{lo:g}, {hi:g}]", line=lineno)
            rows.append((lineno, vals))

    if not rows:
        raise ParseError(f"{path}: no data rows", line=2)
    t = np.array([v["t"] for _, v in rows])
    d = np.array([[v["d1"], v["d2"], v["d3"], v["d4"]] for _, v in rows])
    if len(t) == 1:
        return WeatherSeries(t, d, 1.0)
    period = t[1] - t[0]
    if period <= 0:
        raise ParseError(f"{path}: timestamps not increasing", line=rows[1][0])
    tol = 1e-6 * period
    for i in range(1, len(t)):
        step = t[i] - t[i - 1]
        if step <= 0:
            raise ParseError(f"{path}: timestamps not increasing ({t[i - 1]:g} -> {t[i]:g})", line=rows[i][0])
        if step > period + tol:
            raise GapError(t[i - 1], t[i], period)
        if step < period - tol:
            raise ParseError(f"{path}: irregular spacing {step:g} (expected {period:g})", line=rows[i][0])
    return WeatherSeries(t, d, period)


def resample(series: WeatherSeries, target_period: float) -> WeatherSeries:
    """Downsample by averaging consecutive blocks; an incomplete tail block is dropped."""
    ratio = target_period / series.sample_period
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise IncompatiblePeriod(
            f"target period {target_period:g} is not an integer multiple of {series.sample_period:g}")
    if factor == 1:
        return series
    n = len(series) // factor
    d = series.d[: n * factor].reshape(n, factor, 4).mean(axis=1)
    t = series.t[: n * factor : factor]
    return WeatherSeries(t, d, target_period)


@dataclass
class WeatherProfile:
    peak_radiation: float = 400.0        # W m^-2, clear-sky maximum at solar noon
    day_length_h: float = 12.0
    solar_noon_h: float = 12.0
    daily_variation: float = 0.1         # daily cloud attenuation drawn from U(0, this)
    radiation_noise: float = 0.05        # relative per-sample attenuation noise
    temp_min: float = 5.0                # C
    temp_max: float = 15.0               # C
    temp_lag_h: float = 2.0              # outdoor temperature peak after solar noon
    temp_noise: float = 0.3              # C, OU noise std
    co2_mean: float = 7.2e-4             # kg m^-3
    co2_rel_std: float = 0.05
    hum_mean: float = 0.006              # kg m^-3
    hum_rel_std: float = 0.1
    reversion_h: float = 3.0             # OU correlation time

    @property
    def daily_light_integral(self) -> float:
        """Radiation energy per day (J m^-2) of the noise-free half-sine."""
        return self.peak_radiation * self.day_length_h * 3600.0 * 2.0 / math.pi

    @classmethod
    def from_dict(cls, cfg: dict) -> "WeatherProfile":
        names = {f.name for f in fields(cls)}
        unknown = set(cfg) - names
        if unknown:
            raise KeyError(f"unknown weather profile keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in cfg.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def _ou(rng: np.random.Generator, n: int, dt: float, tau: float, std: float) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples with unit mean reversion time ``tau``."""
    a = math.exp(-dt / tau)
    out = np.empty(n)
    out[0] = rng.normal(0.0, std)
    eps = rng.normal(0.0, std * math.sqrt(1.0 - a * a), size=n)
    for k in range(1, n):
        out[k] = a * out[k - 1] + eps[k]
    return out


def synthesize(days: int, seed: int = 0, profile: WeatherProfile | None = None,
               sample_period: float = 900.0, extra_steps: int = 0) -> WeatherSeries:
    """Deterministic synthetic weather for ``days`` days (plus ``extra_steps`` samples).

    Radiation is a half-sine between sunrise and sunset, zero at night and
    never above the clear-sky peak,
    outdoor temperature a sinusoid peaking ``temp_lag_h`` after solar noon,
    outdoor CO2 and humidity mean-reverting noise around their means.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    prof = profile or WeatherProfile()
    rng = np.random.default_rng(seed)
    per_day = int(round(86400.0 / sample_period))
    n = days * per_day + extra_steps
    t = sample_period * np.arange(n)
    hour = (t / 3600.0) % 24.0
    day = (t // 86400.0).astype(int)

    sunrise = prof.solar_noon_h - prof.day_length_h / 2.0
    phase = (hour - sunrise) / prof.day_length_h
    shape = np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0, 1)), 0.0)
    day_scale = 1.0 - rng.uniform(0.0, prof.daily_variation, size=day.max() + 1)
    noise = np.clip(1.0 + prof.radiation_noise * rng.standard_normal(n), 0.0, 1.0 / day_scale[day])
    d1 = prof.peak_radiation * shape * day_scale[day] * noise

    tau = prof.reversion_h * 3600.0
    mid = 0.5 * (prof.temp_min + prof.temp_max)
    amp = 0.5 * (prof.temp_max - prof.temp_min)
    d3 = mid + amp * np.cos(2 * np.pi * (hour - prof.solar_noon_h - prof.temp_lag_h) / 24.0)
    d3 = d3 + _ou(rng, n, sample_period, tau, prof.temp_noise)
    d2 = prof.co2_mean * (1.0 + _ou(rng, n, sample_period, tau, prof.co2_rel_std))
    d4 = prof.hum_mean * (1.0 + _ou(rng, n, sample_period, tau, prof.hum_rel_std))
    d = np.column_stack([d1, np.clip(d2, 0.0, None), d3, np.clip(d4, 0.0, None)])
    return WeatherSeries(t, d, sample_period)


def draw_kappa(rng: np.random.Generator, low: float = 0.7, high: float = 1.3) -> np.ndarray:
    if low == high:
        return np.full(4, float(low))
    return rng.uniform(low, high, size=4)


def perturb(series: WeatherSeries, seed, low: float = 0.7, high: float = 1.3) -> WeatherSeries:
    """Scale each channel by its own factor drawn once from U(low, high).

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if low <= 0 or high < low:
        raise ValueError("need 0 < low <= high")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kappa = draw_kappa(rng, low, high)
    return WeatherSeries(series.t, series.d * kappa, series.sample_period)
