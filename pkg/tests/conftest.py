from pathlib import Path

import numpy as np
import pytest

from tricam.dataset import generate
from tricam.harness import to_batch
from tricam.network import TriCamConfig
from tricam.synthgen import ARTIFACT_RICH_PROBS, SceneConfig

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(seed: int) -> TriCamConfig:
    """Random small architecture (a few hundred parameters) for gradient checks."""
    r = np.random.default_rng(seed)
    return TriCamConfig(
        cnn_channels=tuple(int(x) for x in r.integers(1, 3, 2)),
        cnn_kernel=int(r.choice([3, 5])),
        cnn_features=int(r.integers(2, 4)),
        disc_channels=tuple(int(x) for x in r.integers(1, 3, 2)),
        disc_kernel=3,
        disc_hidden=2,
        aux_hidden=2,
        coord_hidden=(3, 3),
        reduction=3,
        decision_hidden=(4, 3),
        aux_ratio=float(r.choice([0.1, 0.5])),
        weighted_fusion=bool(r.random() < 0.8),
        seed=seed,
    )


SMALL = TriCamConfig(cnn_channels=(4, 4), cnn_features=8, disc_channels=(2, 2), disc_hidden=4,
                     aux_hidden=4, coord_hidden=(8, 8), reduction=8, decision_hidden=(16, 8))


@pytest.fixture(scope="session")
def scene():
    return SceneConfig()


@pytest.fixture(scope="session")
def rich_scene():
    return SceneConfig().with_(artifact_probs=ARTIFACT_RICH_PROBS)


@pytest.fixture(scope="session")
def small_ds(scene):
    return generate(scene, 24, 123)


@pytest.fixture
def batch(small_ds):
    # fresh copy per test; some tests edit flags in place
    b = to_batch(small_ds)
    return type(b)(b.coords.copy(), b.flags.copy(), b.images.copy(), b.target.copy())


# acceptance verdicts, printed once at the end of the run
VERDICTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
