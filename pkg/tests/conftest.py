import functools

import numpy as np
import pytest

from filamentlab.selfsimilar import build_profile


@functools.lru_cache(maxsize=8)
def cached_profile(a: float, L: float | None = None, h: float = 1e-3):
    return build_profile(a, L=L, h=h)


@pytest.fixture(scope="session")
def profile_half():
    """Self-similar profile for a = 0.5 at production resolution."""
    return cached_profile(0.5)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240613)
