"""
Shared fixtures.
"""

from pathlib import Path

import numpy as np
import pytest

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def problem_path():
    """Path of a bundled problem file by stem"""
    def lookup(stem: str) -> str:
        return str(PROBLEMS / f"{stem}.json")
    return lookup
