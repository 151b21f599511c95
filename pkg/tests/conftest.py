"""Shared fixtures and the acceptance summary printed at the end of a run."""
import numpy as np
import pytest

from greenhouse_bench.ddpg import EpisodeSampler, TrainConfig, evaluation_envs, evaluate, new_bundle, train
from greenhouse_bench.eval import make_scenario, run_comparison
from greenhouse_bench.mpc import MpcConfig
from greenhouse_bench.weather import synthesize

ACCEPTANCE: dict[int, tuple[bool, str]] = {}

DESK_EPOCHS = 50


def record(criterion: int, passed: bool, detail: str) -> None:
    """Store the outcome of one acceptance criterion (last write wins)."""
    prev = ACCEPTANCE.get(criterion)
    if prev is not None:
        passed = passed and prev[0]
        detail = f"{prev[1]}; {detail}"
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def training_sampler():
    return EpisodeSampler(synthesize(20, seed=7, extra_steps=1))


@pytest.fixture(scope="session")
def eval_envs(training_sampler):
    return evaluation_envs(training_sampler, 10, 999)


def desk_run(sampler, envs, seed, epochs=DESK_EPOCHS):
    """Mean noise-free evaluation reward before and after a short training run."""
    cfg = TrainConfig(epochs=epochs)
    before = float(np.mean(evaluate(new_bundle(cfg, seed), envs)))
    bundle, _ = train(sampler, cfg, seed=seed)
    after = float(np.mean(evaluate(bundle, envs)))
    return bundle, before, after


@pytest.fixture(scope="session")
def trained_run(training_sampler, eval_envs):
    return desk_run(training_sampler, eval_envs, seed=0)


@pytest.fixture(scope="session")
def trained_bundle(trained_run):
    return trained_run[0]


@pytest.fixture(scope="session")
def comparison_3day(trained_bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("compare3d")
    scen = make_scenario(3, seed=1)
    report = run_comparison(scen, MpcConfig(), trained_bundle, outdir=out)
    return report, out
