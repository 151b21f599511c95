"""Command-line entry point: ``greenhouse-bench {simulate,train,compare,epi}``.

Every run writes ``config.json`` (the fully resolved flat configuration,
seed included) and ``config_hash.txt`` to its output directory, so that
``--config <dir>/config.json`` reproduces it.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as C
from .ddpg.agent import TrainConfig, load_checkpoint, save_checkpoint, train, write_curve
from .ddpg.env import EpisodeSampler, ReferenceSchedule, RewardConfig
from .eval import EpiParams, Scenario, emit_plots, epi, run_comparison
from .model import ModelParams, Trajectory, constant_controller, simulate
from .mpc import MpcConfig
from .weather import WeatherError, WeatherProfile, WeatherSeries, load_csv, resample, synthesize

log = logging.getLogger("greenhouse_bench")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- builders: configuration -> objects ------------------------------------------------

def build_params(cfg) -> ModelParams:
    return ModelParams({k: v for k, v in C.section(cfg, "model").items() if k.startswith("p_")})


def steps_for(cfg, days: float) -> int:
    return int(round(days * 86400.0 / cfg["model.h"]))


def build_weather(cfg, n_records: int, seed: int | None = None, source: str | None = None) -> WeatherSeries:
    """At least ``n_records`` weather rows at the model sample period."""
    source = source or cfg["weather.source"]
    h = float(cfg["model.h"])
    if source == "synthetic":
        profile = WeatherProfile.from_dict(C.section(cfg, "weather.profile"))
        per_day = int(round(86400.0 / h))
        days = max(1, n_records // per_day)
        extra = max(0, n_records - days * per_day)
        return synthesize(days, cfg["weather.seed"] if seed is None else seed, profile, h, extra_steps=extra)
    path = Path(source)
    if not path.is_file():
        raise UsageError(f"weather file not found: {path}")
    series = load_csv(path, cfg["weather.column_map"] or None)
    if series.sample_period != h:
        series = resample(series, h)
    if len(series) < n_records:
        raise UsageError(f"{path}: {len(series)} records at h={h:g} s, need {n_records}")
    return series.slice(0, n_records)


def build_mpc(cfg) -> MpcConfig:
    return MpcConfig.from_dict(C.section(cfg, "mpc"))


def build_train(cfg) -> TrainConfig:
    names = set(TrainConfig.__dataclass_fields__)
    return TrainConfig.from_dict({k: v for k, v in C.section(cfg, "ddpg").items() if k in names})


def build_sampler(cfg, p: ModelParams) -> EpisodeSampler:
    tc = build_train(cfg)
    n = steps_for(cfg, cfg["ddpg.train_days"]) + 1
    base = build_weather(cfg, n, seed=cfg["ddpg.train_weather_seed"])
    return EpisodeSampler(base, p, tc.steps_per_epoch, cfg["ddpg.kappa_low"], cfg["ddpg.kappa_high"],
                          cfg["ddpg.x0_low"], cfg["ddpg.x0_high"], build_refs(cfg), build_reward(cfg))


def build_refs(cfg) -> ReferenceSchedule:
    return ReferenceSchedule(**{k: tuple(v) for k, v in C.section(cfg, "refs").items()})


def build_reward(cfg) -> RewardConfig:
    return RewardConfig(**C.section(cfg, "reward"))


# -- commands ---------------------------------------------------------------------

def _prepare_out(cfg, command: str, out: str | None) -> Path:
    h = C.config_hash(cfg)
    path = Path(out) if out else C.output_root(cfg) / f"{command}-{h}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(C.dumps(cfg))
    (path / "config_hash.txt").write_text(h + "\n")
    return path


def cmd_simulate(cfg, args):
    p = build_params(cfg)
    n = steps_for(cfg, cfg["simulate.days"])
    weather = build_weather(cfg, n + 1)
    if len(cfg["simulate.u"]) != 3:
        raise UsageError("simulate.u needs three values")
    out = _prepare_out(cfg, "simulate", args.out)

    def run():
        traj = simulate(cfg["model.x0"], constant_controller(cfg["simulate.u"]), weather, p,
                        n_steps=n, h=cfg["model.h"])
        traj.to_csv(out / "trajectory.csv")
        print(out / "trajectory.csv")
    return run


def _train_agent(cfg, p, out: Path, resume: str | None = None):
    sampler = build_sampler(cfg, p)
    tc = build_train(cfg)
    bundle = load_checkpoint(resume) if resume else None
    bundle, curve = train(sampler, tc, seed=cfg["seed"], bundle=bundle)
    save_checkpoint(bundle, out / "checkpoint.npz")
    write_curve(curve, out / "learning_curve.csv")
    return bundle


def cmd_train(cfg, args):
    p = build_params(cfg)
    build_train(cfg)  # validate before creating the output directory
    if args.resume and not Path(args.resume).is_file():
        raise UsageError(f"checkpoint not found: {args.resume}")
    out = _prepare_out(cfg, "train", args.out)

    def run():
        _train_agent(cfg, p, out, args.resume)
        print(out / "checkpoint.npz")
    return run


def cmd_compare(cfg, args):
    if args.full_cycle:
        cfg["eval.days"] = cfg["eval.full_cycle_days"]
    elif args.days is not None:
        cfg["eval.days"] = args.days
    p = build_params(cfg)
    mpc_cfg = build_mpc(cfg)
    n = steps_for(cfg, cfg["eval.days"])
    weather = build_weather(cfg, n + mpc_cfg.N_p + 1)
    ckpt = cfg["ddpg.checkpoint"]
    if ckpt and not Path(ckpt).is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    epi_params = EpiParams(**C.section(cfg, "eval.epi"))
    out = _prepare_out(cfg, "compare", args.out)
    scenario = Scenario(weather, n, tuple(cfg["model.x0"]), f"{cfg['eval.days']:g}d")

    def run():
        bundle = load_checkpoint(ckpt) if ckpt else _train_agent(cfg, p, out)
        report = run_comparison(scenario, mpc_cfg, bundle, p, epi_params, outdir=out,
                                config_hash=C.config_hash(cfg))
        if cfg["eval.plots"]:
            emit_plots(report, out / "plots", mpc_cfg)
        for name, m in report.controllers.items():
            print(f"{name:>10}: EPI {m.epi:.4f} Hfl/m2, final y1 {m.final_y1:.3f} g/m2, "
                  f"{m.timing['per_step_mean_s'] * 1e3:.3f} ms/step")
        print(out / "report.json")
    return run


def cmd_epi(cfg, args):
    path = Path(args.trajectory)
    if not path.is_file():
        raise UsageError(f"trajectory file not found: {path}")
    params = EpiParams(**C.section(cfg, "eval.epi"))

    def run():
        traj = Trajectory.from_csv(path)
        print(f"{epi(traj, params, args.t_b, args.t_f):.12g}")
    return run


# -- argument parsing ---------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="greenhouse-bench",
                                     description="Greenhouse climate control benchmark: MPC vs DDPG.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", action="append", default=[], metavar="FILE",
                        help="flat dotted-key JSON file (repeatable, later files win)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides",
                        help="override one key; VALUE is parsed as JSON when possible")
        sp.add_argument("--out", help="output directory (default: <output root>/<command>-<config hash>)")
        return sp

    common(sub.add_parser("simulate", help="fixed-input rollout"))
    sp = common(sub.add_parser("train", help="train the DDPG agent"))
    sp.add_argument("--resume", metavar="CHECKPOINT", help="continue training from a checkpoint")
    sp = common(sub.add_parser("compare", help="MPC vs agent on one scenario"))
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--days", type=float, help="scenario length (default eval.days)")
    g.add_argument("--full-cycle", action="store_true", help="run the full growth cycle (eval.full_cycle_days)")
    sp = common(sub.add_parser("epi", help="economic profit of a trajectory CSV"))
    sp.add_argument("trajectory")
    sp.add_argument("--t-b", type=float, default=None, help="start time in seconds")
    sp.add_argument("--t-f", type=float, default=None, help="harvest time in seconds")
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "compare": cmd_compare, "epi": cmd_epi}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.resolve(args.config, args.overrides)
        run = COMMANDS[args.command](cfg, args)
    except (C.ConfigError, UsageError, WeatherError, KeyError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        run()
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
