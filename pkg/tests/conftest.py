import sys
from pathlib import Path

import numpy as np
import pytest

from cldl.lcm import build_lcm
from cldl.models import build_ensemble

ROOT = Path(__file__).resolve().parents[1]
MNIST = ROOT / "data" / "mnist"
CONFIGS = ROOT / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_system(rng):
    """2-member MLP ensemble (d=16, C=5) on 1x4x4 inputs, batch of 4, plus an LCM."""
    ens = build_ensemble("mlp", 2, rng, n_classes=5, rep_dim=16, input_shape=(1, 4, 4))
    lcm = build_lcm(rng, n_classes=5, rep_dim=16, gamma=3.0)
    x = rng.random((4, 1, 4, 4))
    y = np.array([0, 1, 2, 4])
    return ens, lcm, x, y


@pytest.fixture(scope="session")
def mnist_paths():
    paths = {
        "train_images": MNIST / "train-images-idx3-ubyte.gz",
        "train_labels": MNIST / "train-labels-idx1-ubyte.gz",
        "eval_images": MNIST / "eval-images-idx3-ubyte.gz",
        "eval_labels": MNIST / "eval-labels-idx1-ubyte.gz",
    }
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        pytest.skip(f"MNIST subset not built (run scripts/build_mnist_subset.py): {missing}")
    return paths


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
