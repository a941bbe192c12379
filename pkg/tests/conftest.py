import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _quiet_rank_warnings():
    """Large-rank adapters are routine in these tests; silence the advisory."""
    import warnings

    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="adapter rank exceeds half")
        yield
