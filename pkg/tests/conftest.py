import sys

import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    # acceptance criteria print their PASS/FAIL lines while captured;
    # echo them here so a default (captured) run still shows them
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results:
            terminalreporter.write_line(line)


def rand_image(h, w, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(h, w, c)).astype(np.float32)


def rand_mask(h, w, seed=0, hole_fraction=0.3):
    rng = np.random.default_rng(seed)
    return (rng.uniform(size=(h, w)) < hole_fraction).astype(np.float32)


def box_mask(h, w, top, left, height, width):
    m = np.zeros((h, w), dtype=np.float32)
    m[top : top + height, left : left + width] = 1.0
    return m


@pytest.fixture
def tmp_png(tmp_path):
    def _write(arr, name="img.png"):
        from PIL import Image

        path = tmp_path / name
        Image.fromarray(arr).save(path)
        return path

    return _write
