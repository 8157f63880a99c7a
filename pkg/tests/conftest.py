import numpy as np
import pytest

from parawave.spectral import FrequencyLattice, SpectralField


@pytest.fixture
def rng():
    return np.random.default_rng(20260816)


def random_real_field(lattice: FrequencyLattice, rng, decay: float = 0.0) -> SpectralField:
    """Random Hermitian field; coefficients ~ <n>^{-decay} in magnitude."""
    shape = (lattice.size,) * 3
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    raw *= lattice.bracket ** (-decay)
    return SpectralField(lattice, raw, real=True)


def random_complex_field(lattice: FrequencyLattice, rng, decay: float = 0.0) -> SpectralField:
    shape = (lattice.size,) * 3
    raw = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    raw *= lattice.bracket ** (-decay)
    return SpectralField(lattice, raw, real=False)
