import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

MNIST_DIR = Path(os.environ.get("PAGER_MNIST_DIR", "/root/data/mnist"))
DATA = Path(__file__).parent / "data"


def _have_mnist() -> bool:
    return (MNIST_DIR / "train-images-idx3-ubyte").exists() or (MNIST_DIR / "train-images-idx3-ubyte.gz").exists()


@pytest.fixture(scope="session")
def mnist_train():
    if not _have_mnist():
        pytest.skip(f"MNIST not found in {MNIST_DIR} (set PAGER_MNIST_DIR)")
    from pager.datasets import load_mnist_dir
    return load_mnist_dir(MNIST_DIR, "train")


@pytest.fixture(scope="session")
def mnist_test():
    if not _have_mnist():
        pytest.skip(f"MNIST not found in {MNIST_DIR} (set PAGER_MNIST_DIR)")
    from pager.datasets import load_mnist_dir
    return load_mnist_dir(MNIST_DIR, "t10k")


def blocky(rng, n, side, channels=1, cell=4):
    """Piecewise-constant images: strong edges, exactly box-downsamplable structure."""
    g = rng.random((n, side // cell, side // cell, channels))
    return np.repeat(np.repeat(g, cell, axis=1), cell, axis=2).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_config(**kw):
    """Small, fast pipeline config for unit tests (4 -> 16, few components)."""
    from pager.booster import BoosterConfig
    from pager.enhancer import EnhancerConfig
    from pager.generator import EmOptions
    from pager.pipeline import PagerConfig
    base = dict(core_side=4, resolution=16, core_k=3, core_em=EmOptions(max_iters=20, n_init=1),
                enhancer=EnhancerConfig(k_dc=3, k_ac=2, em=EmOptions(max_iters=10, n_init=1)),
                booster=BoosterConfig(pca_dims=8))
    base.update(kw)
    return PagerConfig(**base)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
