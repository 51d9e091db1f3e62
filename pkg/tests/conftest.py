import numpy as np
import pytest

from jam.embed_io import SynthConfig, synth_generate
from jam.numkit import RngStream


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture(scope="session")
def small_synth():
    """Shared planted dataset (n=200) for metric and eval tests."""
    cfg = SynthConfig(n=200, seed=5)
    ds, easy, latents = synth_generate(cfg)
    return ds, easy, latents


def assert_allclose(actual, expected, tol):
    np.testing.assert_allclose(actual, expected, rtol=0, atol=tol)
