import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import two_cluster_dataset  # noqa: E402


@pytest.fixture(scope="session")
def two_cluster():
    return two_cluster_dataset()
