from __future__ import annotations

import numpy as np
import pytest

from reefmap.io_formats import bundled_config_path, read_config
from reefmap.rangesensor import CameraIntrinsics, RangeClassScheme

# acceptance verdict lines, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def scheme() -> RangeClassScheme:
    return RangeClassScheme()


@pytest.fixture
def small_camera() -> CameraIntrinsics:
    return CameraIntrinsics.from_fov(64, 48, 80.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def _run_bundled(name: str):
    from reefmap.simworld import run_config

    cfg = read_config(bundled_config_path(name))
    return cfg, run_config(cfg)


@pytest.fixture(scope="session")
def sim1():
    return _run_bundled("sim1_plateau_gap")


@pytest.fixture(scope="session")
def sim2():
    return _run_bundled("sim2_undulating")


TINY_CONFIG = """
[world]
kind = "undulating"
amplitude = 0.2

[trajectory]
end_x = 1.0
step = 0.25

[camera]
width = 96
height = 72
max_range = 6.0

[map]
size_x = 6.0
size_y = 4.0
resolution = 0.05
"""


@pytest.fixture
def tiny_config_path(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY_CONFIG)
    return p
