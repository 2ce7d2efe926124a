from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stepgrounder.core import TaskSpec

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def latte_task() -> TaskSpec:
    return TaskSpec(
        task_id="make_latte",
        goal="Make a Latte",
        steps=("steam milk", "pour espresso", "pour milk"),
    )


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR
