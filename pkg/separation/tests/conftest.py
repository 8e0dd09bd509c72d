"""
Pytest configuration and shared fixtures for separation tests.

Provides reusable fixtures for common test scenarios:
- Seeded random generators
- "Exactly independent" factorial signal sets (every moment factorizes exactly,
  so the fixed-point statistics vanish without sampling error)
- Seeded benchmark mixtures and their mixing matrices
- Population moments of independent sources
"""
import itertools

import numpy as np
import pytest

from separation.schemas import MixtureSpec
from separation.services.evaluation import generate_mixture, independent_oracle_moments
from separation.services.moments import SignalMatrix

# per-channel value sets: zero mean, symmetric, kurtosis 1.36, 1.64 and 1.0
FACTORIAL_LEVELS = (
    (-2.0, -1.0, 1.0, 2.0),
    (-3.0, -1.0, 1.0, 3.0),
    (-1.0, 1.0),
)
FACTORIAL_KURTOSIS = (1.36, 1.64, 1.0)

NEAR_IDENTITY_MIXING = [[1.0, 0.3], [0.2, 1.0]]


def factorial_signals(n: int) -> SignalMatrix:
    """All combinations of the first n level sets, one sample per combination."""
    rows = list(itertools.product(*FACTORIAL_LEVELS[:n]))
    return SignalMatrix.from_samples(np.array(rows))


@pytest.fixture
def rng():
    """Counter-based generator with a fixed seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(1234)))


@pytest.fixture
def independent_signals():
    """Two channels whose empirical distribution is exactly a product distribution."""
    return factorial_signals(2)


@pytest.fixture
def independent_signals_3():
    """Three exactly independent channels (64 samples)."""
    return factorial_signals(3)


@pytest.fixture
def uniform_mixture():
    """
    Two uniform sources mixed by a near-identity matrix.

    Returns:
        (X, A, S) with 20000 samples, seed 3
    """
    spec = MixtureSpec(
        n_sources=2,
        distributions="uniform",
        mixing_matrix=NEAR_IDENTITY_MIXING,
        samples=20_000,
        seed=3,
    )
    return generate_mixture(spec)


@pytest.fixture
def mixed_mixture():
    """Three sources (uniform, laplacian, two_point(0.3)) under a random mixing with cond ≤ 20."""
    spec = MixtureSpec(
        n_sources=3,
        distributions=["uniform", "laplacian", "two_point(0.3)"],
        condition=20.0,
        samples=10_000,
        seed=5,
    )
    return generate_mixture(spec)


@pytest.fixture
def oracle_moments():
    """Population moments of independent sources with κ = (1.8, 6.0, 1.0)."""
    return independent_oracle_moments([1.8, 6.0, 1.0])


@pytest.fixture
def random_mixture():
    """Three uniform sources under a random mixing with cond ≤ 20, 20000 samples, seed 11."""
    spec = MixtureSpec(n_sources=3, distributions="uniform", condition=20.0, samples=20_000, seed=11)
    return generate_mixture(spec)


@pytest.fixture
def gaussian_mixture():
    """Two uniform sources and one Gaussian source, cond ≤ 5, 20000 samples, seed 7."""
    spec = MixtureSpec(
        n_sources=3,
        distributions=["uniform", "uniform", "gaussian"],
        condition=5.0,
        samples=20_000,
        seed=7,
    )
    return generate_mixture(spec)
