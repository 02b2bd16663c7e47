"""Shared fixtures: tiny light fields, an on-disk dataset tree, micro configs.

Everything here is sized for single-core CPU runs; model fixtures use the
smallest configuration that still exercises every module. The terminal
summary hook at the bottom prints one PASS/FAIL line per acceptance
criterion whenever test_acceptance.py ran.
"""

import re
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ofpnet.data import LightFieldDataset, write_synthetic_dataset
from ofpnet.lightfield import Colorspace, LightField, ScaleTag
from ofpnet.model import ModelConfig

settings.register_profile(
    "ci",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


def make_lf(
    shape=(2, 2, 16, 16, 1),
    colorspace=Colorspace.Y,
    tag=ScaleTag.GT,
    seed=0,
) -> LightField:
    rng = np.random.default_rng(seed)
    data = rng.random(shape, dtype=np.float32)
    return LightField(data, colorspace, tag)


@pytest.fixture
def tiny_y():
    """2x2 views, 16x16, single channel luma."""
    return make_lf()


@pytest.fixture
def tiny_rgb():
    return make_lf(shape=(2, 2, 16, 16, 3), colorspace=Colorspace.RGB)


@pytest.fixture
def micro_config():
    """Smallest config that still builds all three branches."""
    return ModelConfig(
        channels=4, projection_depth_m=1, fusion_blocks=1, angular_size=(2, 2)
    )


@pytest.fixture(scope="session")
def dataset_root(tmp_path_factory) -> Path:
    """Six tiny synthetic scenes with x2 and x4 views plus a 4/1/1 split."""
    root = tmp_path_factory.mktemp("scenes")
    write_synthetic_dataset(
        root,
        6,
        height=32,
        width=32,
        angular_size=(2, 2),
        scales=(2, 4),
        split_counts=(4, 1, 1),
        seed=7,
    )
    return root


@pytest.fixture(scope="session")
def dataset(dataset_root) -> LightFieldDataset:
    return LightFieldDataset.from_root(dataset_root)


_CRITERION_ID = re.compile(r"test_acceptance\.py::test_c(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[int, str] = {}
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION_ID.search(getattr(rep, "nodeid", ""))
            if m:
                n = int(m.group(1))
                # a setup error and a call failure both count as FAIL
                if outcomes.get(n) != "FAIL":
                    outcomes[n] = label
    if not outcomes:
        return
    details = getattr(sys.modules.get("test_acceptance"), "RESULTS", {})
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(outcomes):
        line = f"criterion {n:02d}: {outcomes[n]}"
        if outcomes[n] == "PASS" and n in details:
            line += f"  {details[n]}"
        terminalreporter.write_line(line)
