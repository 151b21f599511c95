"""Economic profit, head-to-head scenario runs, metrics and plots."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import DEFAULT_MODEL_PARAMS, X0, ModelParams, Trajectory, constant_controller, simulate
from .mpc import MpcConfig, MpcController, temperature_band
from .weather import WeatherProfile, WeatherSeries, synthesize

log = logging.getLogger(__name__)

OUTPUT_NAMES = ("co2", "temperature", "humidity")
_OUTPUT_INDEX = {"co2": 1, "temperature": 2, "humidity": 3}
VIOLATION_THRESHOLD = 1e-3  # output units; softened bounds are ridden at the 1e-5 level


class UnitError(TypeError):
    """Raised for trajectories whose units are not known."""


class ControllerError(RuntimeError):
    def __init__(self, name: str, exc: Exception):
        super().__init__(f"controller {name!r} failed: {exc}")
        self.name = name
        self.original = exc


@dataclass(frozen=True)
class EpiParams:
    """Prices: c_co2 in Hfl kg^-1, c_q in Hfl J^-1, c_pri1 in Hfl m^-2,
    c_pri2 in Hfl kg^-1 m^-2."""

    c_co2: float = 0.42
    c_q: float = 6.35e-9
    c_pri1: float = 1.8
    c_pri2: float = 16.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"{k} must be nonnegative")


def _row(t: np.ndarray, time_s: float, what: str) -> int:
    i = int(np.argmin(np.abs(t - time_s)))
    if not math.isclose(t[i], time_s, rel_tol=0, abs_tol=1e-6 * max(1.0, abs(time_s))):
        raise ValueError(f"{what} = {time_s} s is not a sample time of the trajectory")
    return i


def epi(traj: Trajectory, params: EpiParams | None = None, t_b: float | None = None,
        t_f: float | None = None) -> float:
    """Economic profit indicator in Hfl m^-2 over [t_b, t_f].

    Income is priced on the dry-matter state x1 (kg m^-2) at ``t_f``. CO2
    dosing u1 (mg m^-2 s^-1) is converted to kg and heating u3 (W m^-2) to J
    by the sample period. Both times default to the trajectory ends.
    """
    if not isinstance(traj, Trajectory):
        raise UnitError(f"expected a model Trajectory with SI-tagged columns, got {type(traj).__name__}")
    params = params or EpiParams()
    i_b = 0 if t_b is None else _row(traj.t, t_b, "t_b")
    i_f = traj.n_steps if t_f is None else _row(traj.t, t_f, "t_f")
    if i_f < i_b:
        raise ValueError("t_f precedes t_b")
    u = traj.u[i_b:i_f]
    cost = float(np.sum(params.c_q * u[:, 2] + params.c_co2 * u[:, 0] * 1e-6) * traj.h)
    return params.c_pri1 + params.c_pri2 * float(traj.x[i_f, 0]) - cost


# -- constraint bookkeeping ---------------------------------------------------

def trajectory_bounds(traj: Trajectory, mpc_cfg: MpcConfig | None = None):
    """Output bounds (y_min, y_max) per row of ``traj``; the temperature band uses d1 of the row."""
    cfg = mpc_cfg or MpcConfig()
    n = len(traj.t)
    ymin = np.tile(cfg.y_min, (n, 1))
    ymax = np.tile(cfg.y_max, (n, 1))
    d1 = np.nan_to_num(traj.d[:, 0], nan=float(traj.d[-2, 0]) if n > 1 else 0.0)
    lo, hi = temperature_band(d1)
    ymin[:, 2] = np.where(np.isnan(ymin[:, 2]), lo, ymin[:, 2])
    ymax[:, 2] = np.where(np.isnan(ymax[:, 2]), hi, ymax[:, 2])
    return ymin, ymax


def band_violations(traj: Trajectory, mpc_cfg: MpcConfig | None = None,
                    threshold: float = VIOLATION_THRESHOLD) -> dict:
    """Per-output violation statistics over the controlled rows 1..n.

    ``fraction`` counts steps whose excursion exceeds ``threshold``;
    ``max`` and ``mean`` are excursion magnitudes in output units.
    """
    ymin, ymax = trajectory_bounds(traj, mpc_cfg)
    y = traj.y[1:]
    exc = np.maximum(np.maximum(y - ymax[1:], ymin[1:] - y), 0.0)
    out = {}
    for name in OUTPUT_NAMES:
        e = exc[:, _OUTPUT_INDEX[name]]
        out[name] = {"fraction": float(np.mean(e > threshold)) if len(e) else 0.0,
                     "max": float(e.max()) if len(e) else 0.0,
                     "mean": float(e.mean()) if len(e) else 0.0}
    return out


# -- scenarios and reports -----------------------------------------------------

@dataclass
class Scenario:
    weather: WeatherSeries
    n_steps: int = 288
    x0: tuple = tuple(X0)
    name: str = "scenario"


def make_scenario(days: float = 3, seed: int = 0, profile: WeatherProfile | None = None,
                  horizon: int = 24, name: str | None = None) -> Scenario:
    """Synthetic scenario of ``days`` days, with weather extending one horizon past the end."""
    steps_per_day = 96
    n_steps = int(round(days * steps_per_day))
    weather = synthesize(int(math.ceil(days)), seed, profile, extra_steps=horizon + 1)
    return Scenario(weather, n_steps, tuple(X0), name or f"{days:g}d-seed{seed}")


@dataclass
class ControllerMetrics:
    name: str
    epi: float
    final_y1: float
    final_x1: float
    violations: dict
    co2_total_kg: float
    energy_total_J: float
    ventilation_mean: float
    timing: dict = field(default_factory=dict)  # wall-clock, excluded from reproducibility checks
    trajectory_file: str | None = None


def controller_metrics(name: str, traj: Trajectory, epi_params: EpiParams | None = None,
                       mpc_cfg: MpcConfig | None = None) -> ControllerMetrics:
    u = traj.applied_u
    st = np.asarray(traj.step_time, dtype=float)
    return ControllerMetrics(
        name=name,
        epi=epi(traj, epi_params),
        final_y1=float(traj.y[-1, 0]),
        final_x1=float(traj.x[-1, 0]),
        violations=band_violations(traj, mpc_cfg),
        co2_total_kg=float(np.sum(u[:, 0]) * 1e-6 * traj.h),
        energy_total_J=float(np.sum(u[:, 2]) * traj.h),
        ventilation_mean=float(np.mean(u[:, 1])) if len(u) else 0.0,
        timing={"per_step_mean_s": float(st.mean()) if len(st) else 0.0,
                "per_step_max_s": float(st.max()) if len(st) else 0.0,
                "total_s": float(st.sum())},
    )


@dataclass
class ComparisonReport:
    scenario: dict
    controllers: dict                     # name -> ControllerMetrics
    trajectories: dict = field(default_factory=dict, repr=False)  # name -> Trajectory
    mpc_config: dict = field(default_factory=dict)
    config_hash: str | None = None

    def to_dict(self, timing: bool = True) -> dict:
        ctrl = {}
        for name, m in self.controllers.items():
            d = asdict(m)
            if not timing:
                d.pop("timing")
            ctrl[name] = d
        out = {"scenario": self.scenario, "config_hash": self.config_hash,
               "mpc_config": self.mpc_config, "controllers": ctrl}
        if timing and {"mpc", "rl"} <= set(self.controllers):
            rl = self.controllers["rl"].timing["per_step_mean_s"]
            mpc = self.controllers["mpc"].timing["per_step_mean_s"]
            out["compute_time_ratio_mpc_rl"] = mpc / rl if rl > 0 else math.inf
        return out

    def to_json(self, path, timing: bool = True) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.to_dict(timing)), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def run_controllers(scenario: Scenario, controllers: dict[str, Callable],
                    p: ModelParams = DEFAULT_MODEL_PARAMS, epi_params: EpiParams | None = None,
                    mpc_cfg: MpcConfig | None = None, outdir=None) -> ComparisonReport:
    """Run each named controller in closed loop on the same weather and x(0)."""
    metrics, trajs = {}, {}
    for name, ctrl in controllers.items():
        if hasattr(ctrl, "reset"):
            ctrl.reset()
        try:
            traj = simulate(scenario.x0, ctrl, scenario.weather, p, n_steps=scenario.n_steps)
        except Exception as exc:
            raise ControllerError(name, exc) from exc
        trajs[name] = traj
        metrics[name] = controller_metrics(name, traj, epi_params, mpc_cfg)
        if outdir is not None:
            outdir = Path(outdir)
            outdir.mkdir(parents=True, exist_ok=True)
            fname = f"trajectory_{name}.csv"
            traj.to_csv(outdir / fname)
            metrics[name].trajectory_file = fname
            if isinstance(ctrl, MpcController):
                ctrl.write_log(outdir / f"solve_log_{name}.csv")
    info = {"name": scenario.name, "n_steps": scenario.n_steps, "x0": list(scenario.x0),
            "sample_period": scenario.weather.sample_period}
    return ComparisonReport(info, metrics, trajs,
                            mpc_config=(mpc_cfg or MpcConfig()).to_dict())


def run_comparison(scenario: Scenario, mpc_config: MpcConfig | None, agent_bundle,
                   p: ModelParams = DEFAULT_MODEL_PARAMS, epi_params: EpiParams | None = None,
                   outdir=None, baseline: bool = True, config_hash: str | None = None) -> ComparisonReport:
    """MPC against the trained agent (plus a zero-input baseline) on one scenario."""
    from .ddpg.agent import RlController

    mpc_config = mpc_config or MpcConfig()
    controllers = {"mpc": MpcController(mpc_config, p), "rl": RlController(agent_bundle)}
    if baseline:
        controllers["zero_input"] = constant_controller(np.zeros(3))
    report = run_controllers(scenario, controllers, p, epi_params, mpc_config, outdir)
    report.config_hash = config_hash
    if outdir is not None:
        report.to_json(Path(outdir) / "report.json")
        report.to_json(Path(outdir) / "metrics.json", timing=False)
    return report


# -- plots -----------------------------------------------------------------------

_PLOTS = (
    ("y", 0, "y1_dry_matter", "dry matter (g m$^{-2}$)"),
    ("y", 1, "y2_co2", "CO$_2$ (ppm 10$^3$)"),
    ("y", 2, "y3_temperature", "temperature ($^\\circ$C)"),
    ("y", 3, "y4_humidity", "relative humidity (%)"),
    ("u", 0, "u1_co2_supply", "CO$_2$ supply (mg m$^{-2}$ s$^{-1}$)"),
    ("u", 1, "u2_ventilation", "ventilation (mm s$^{-1}$)"),
    ("u", 2, "u3_heating", "heating (W m$^{-2}$)"),
)


def emit_plots(report: ComparisonReport, outdir, mpc_cfg: MpcConfig | None = None) -> list[Path]:
    """Write one SVG per output and input with all controllers overlaid.

    Returns the written paths; an empty report writes nothing and logs a notice.
    """
    trajs = {k: v for k, v in report.trajectories.items() if v is not None and v.n_steps > 0}
    if not trajs:
        log.warning("report has no trajectories; no plots written")
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if mpc_cfg is None:
        mpc_cfg = MpcConfig.from_dict(report.mpc_config) if report.mpc_config else MpcConfig()
    cfg = mpc_cfg
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    first = next(iter(trajs.values()))
    ymin, ymax = trajectory_bounds(first, cfg)
    days = (first.t - first.t[0]) / 86400.0
    written = []
    with plt.rc_context({"svg.hashsalt": "greenhouse-bench", "svg.fonttype": "none"}):
        for kind, j, stem, label in _PLOTS:
            fig, ax = plt.subplots(figsize=(8, 3.2))
            if kind == "y" and j == 2:
                ax.fill_between(days, ymin[:, 2], ymax[:, 2], step="post", color="0.85",
                                label="temperature band")
            elif kind == "y" and math.isfinite(cfg.y_max[j]):
                ax.axhline(cfg.y_max[j], color="0.4", ls="--", lw=0.8, label="upper bound")
            elif kind == "u":
                ax.axhline(cfg.u_max[j], color="0.4", ls="--", lw=0.8, label="u_max")
            for name, tr in trajs.items():
                if kind == "y":
                    ax.plot(days, tr.y[:, j], lw=1.0, label=name)
                else:
                    ax.step(days[:-1], tr.applied_u[:, j], where="post", lw=1.0, label=name)
            ax.set_xlabel("time (days)")
            ax.set_ylabel(label)
            ax.legend(fontsize=7, loc="best")
            fig.tight_layout()
            path = outdir / f"{stem}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
