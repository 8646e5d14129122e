import numpy as np
import pytest

from msfet_e2v.autodiff.tensor import set_default_dtype


@pytest.fixture(autouse=True)
def _f32_default():
    # tests that switch precision must not leak it into the next test
    set_default_dtype("f32")
    yield
    set_default_dtype("f32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
