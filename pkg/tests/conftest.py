"""Shared test helpers.

Several exactness claims (identical sums across partitions, telescoped
error-feedback conservation) are asserted bitwise.  Floating-point addition
only distributes exactly over dyadic rationals, so the random corpora for
those tests draw sizes as integers and costs/times from power-of-two grids;
every product and sum is then exact in float64.
"""

import numpy as np
import pytest

from mergesched.costmodel import CostParams
from mergesched.profiles import LayerProfile, ModelProfile


def dyadic(rng: np.random.Generator, scale_exp: int = -8, lo: int = 1, hi: int = 64) -> float:
    """Random multiple of 2**scale_exp; exact in binary floating point."""
    return float(rng.integers(lo, hi)) * 2.0 ** scale_exp


def dyadic_profile(rng: np.random.Generator, n: int, name: str = "dyadic") -> ModelProfile:
    layers = tuple(
        LayerProfile(
            index=i,
            size=int(rng.integers(1, 4096)),
            compute_time=dyadic(rng, -6, 0, 128),
        )
        for i in range(n)
    )
    return ModelProfile(name=name, layers=layers)


def dyadic_costs(rng: np.random.Generator, A: float = 0.0) -> CostParams:
    return CostParams(
        B_h=dyadic(rng, -8),
        gamma_h=dyadic(rng, -20),
        B_g=dyadic(rng, -8),
        gamma_g=dyadic(rng, -18),
        A=A,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
