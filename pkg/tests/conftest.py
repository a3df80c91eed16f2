import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from colorlic.model import LAMBDA_PRESETS, ModelParams, preset
from colorlic.train import TrainConfig, train

ACCEPTANCE_LINES: list[str] = []

# desk-scale training recipe shared by the acceptance runs
DESK = dict(patch_size=64, batch_size=8, lr=1e-4, synthetic_count=32, synthetic_size=128, seed=0, model="tiny")


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    with threadpool_limits(limits=1):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_params():
    return ModelParams.init(preset("tiny"), seed=0, dtype=np.float32)


@pytest.fixture(scope="session")
def tiny_params64():
    return ModelParams.init(preset("tiny"), seed=0, dtype=np.float64)


def desk_config(weights: str, steps: int) -> TrainConfig:
    return TrainConfig(steps=steps, weights=LAMBDA_PRESETS[weights], **DESK)


@pytest.fixture(scope="session")
def trained_q2():
    cfg = desk_config("q2", 1000)
    return cfg, train(cfg)


@pytest.fixture(scope="session")
def trained_q1_q4():
    return {w: train(desk_config(w, 500)) for w in ("q1", "q4")}


@pytest.fixture
def criterion():
    """Record one acceptance verdict line; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def lively(params: ModelParams, gain: float = 20.0) -> ModelParams:
    """Untrained weights whose final analysis conv is boosted so latents leave zero."""
    p = params.copy()
    last = len(p.config.analysis_strides) - 1
    for b in ("lum", "chroma"):
        p[f"{b}.analysis.conv{last}.kernel"].data[...] *= gain
        p[f"{b}.hyper_analysis.conv2.kernel"].data[...] *= gain
    return p


@pytest.fixture(scope="session")
def lively_params(tiny_params):
    return lively(tiny_params)


def generic_point(params: ModelParams, scale: float = 0.05, seed: int = 7) -> ModelParams:
    """Copy with jittered transform biases, moving ReLUs off their kinks for finite differences."""
    p = params.copy()
    rng = np.random.default_rng(seed)
    for name, t in p.items():
        if name.endswith(".bias") and ".prior." not in name:
            t.data += rng.normal(0.0, scale, t.shape)
    return p
