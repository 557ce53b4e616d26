from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

TESTS_DIR = Path(__file__).resolve().parent
FIXTURES_DIR = TESTS_DIR / "fixtures"

# make tests/oracles.py importable regardless of invocation directory
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))


def random_membership(rng: np.random.Generator, n: int, r: int) -> np.ndarray:
    """Random N x R boolean matrix where every reason appears at least once."""
    m = rng.random((n, r)) < rng.uniform(0.2, 0.8)
    for i in range(r):
        if not m[:, i].any():
            m[rng.integers(n), i] = True
    return m


def random_similarity(rng: np.random.Generator, r: int) -> np.ndarray:
    a = rng.uniform(-1.0, 1.0, size=(r, r))
    s = (a + a.T) / 2.0
    np.fill_diagonal(s, 1.0)
    return np.clip(s, -1.0, 1.0)


def random_model(rng: np.random.Generator, r: int, max_order: int = 3):
    """Random small polynomial model over r binary variables."""
    from cotanneal import HuboModel

    terms = {}
    for order in range(1, min(max_order, r) + 1):
        subsets = [
            tuple(sorted(rng.choice(r, size=order, replace=False).tolist()))
            for _ in range(rng.integers(1, max(2, r)))
        ]
        for s in set(subsets):
            terms[s] = float(rng.uniform(-2.0, 2.0))
    return HuboModel(num_vars=r, max_order=max_order, terms=terms)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES_DIR
