import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mirage_lab.mirage import MirageCache, MirageConfig  # noqa: E402
from mirage_lab.prng import seed_fixed  # noqa: E402
from mirage_lab.skew_index import derive_keys  # noqa: E402


@pytest.fixture
def small_cache():
    def make(lines=256, seed=42, index_seed=7):
        return MirageCache(MirageConfig(data_lines=lines), derive_keys(index_seed), seed_fixed(seed))
    return make
