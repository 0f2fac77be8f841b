import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def imdb_root():
    """Path to an aclImdb-layout dataset, or None when not configured."""
    path = os.environ.get("HALATTN_IMDB")
    if not path:
        return None
    return path


requires_imdb = pytest.mark.skipif(
    imdb_root() is None,
    reason="full-scale run needs HALATTN_IMDB pointing at an aclImdb directory",
)
