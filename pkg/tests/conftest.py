import numpy as np
import pytest
import torch

from dynet.arch import ArchConfig

skdata = pytest.importorskip("skimage.data")


def tiny_arch(**kw):
    kw.setdefault("base_channels", 8)
    kw.setdefault("prompt_dims", (4, 8, 8))
    kw.setdefault("prompt_sizes", (16, 8, 4))
    return ArchConfig(**kw)


@pytest.fixture
def arch8():
    return tiny_arch()


@pytest.fixture(scope="session")
def astronaut():
    return skdata.astronaut().astype(np.float64)


@pytest.fixture(scope="session")
def camera_rgb():
    g = skdata.camera().astype(np.float64)
    return np.repeat(g[..., None], 3, axis=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(n)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
