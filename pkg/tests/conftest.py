import numpy as np
import pytest

from hypercf import autodiff as ad


@pytest.fixture
def float64_mode():
    """Run a test in 64-bit precision (required for gradient checks)."""
    ad.set_default_dtype(np.float64)
    yield
    ad.set_default_dtype(np.float32)


@pytest.fixture(autouse=True)
def clean_tape():
    ad.clear_tape()
    yield
    ad.clear_tape()
