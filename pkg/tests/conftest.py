import numpy as np
import pytest

from csagan import engine as E


@pytest.fixture(autouse=True)
def f64_precision():
    """Correctness tests run at 64-bit; individual tests may override."""
    old = E.get_precision()
    E.set_precision("f64")
    yield
    E.set_precision(old)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
