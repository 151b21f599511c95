"""Lettuce greenhouse simulator with a nonlinear MPC and a DDPG agent on shared scenarios."""
from .model import (DEFAULT_MODEL_PARAMS, U0, U_MAX, U_MIN, X0, ModelParams, Trajectory,
                    measure, rk4_step, simulate, state_derivative)
from .mpc import MpcConfig, MpcController, solve_ocp, temperature_band
from .weather import WeatherProfile, WeatherSeries, load_csv, perturb, resample, synthesize
from .eval import EpiParams, epi, run_comparison

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MODEL_PARAMS", "U0", "U_MAX", "U_MIN", "X0", "ModelParams", "Trajectory",
    "measure", "rk4_step", "simulate", "state_derivative",
    "MpcConfig", "MpcController", "solve_ocp", "temperature_band",
    "WeatherProfile", "WeatherSeries", "load_csv", "perturb", "resample", "synthesize",
    "EpiParams", "epi", "run_comparison",
]
