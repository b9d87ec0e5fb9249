from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def write_tree(root: Path, n_yes: int, n_no: int, *, size=(20, 24), seed=0, bright=200, dark=40) -> Path:
    """Write a yes/ no/ tree of small RGB PNGs; tumor images are bright, others dark."""
    rng = np.random.default_rng(seed)
    for cls, n, level in (("yes", n_yes, bright), ("no", n_no, dark)):
        d = root / cls
        d.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            img = np.clip(rng.normal(level, 12, size=(*size, 3)), 0, 255).astype(np.uint8)
            Image.fromarray(img).save(d / f"{cls}_{i:03d}.png")
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, printed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
