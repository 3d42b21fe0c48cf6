"""Session fixtures.  Shared builders and the slow reference
evaluators live in refimpl.py (kept out of conftest so a multi-package
pytest run cannot shadow them)."""

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
