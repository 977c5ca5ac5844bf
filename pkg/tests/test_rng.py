import numpy as np
import pytest

from laneboost.rng import substream


def test_substreams_reproducible_and_distinct():
    a = substream(7, "value:wintermute").random(5)
    assert np.array_equal(a, substream(7, "value:wintermute").random(5))
    assert not np.array_equal(a, substream(7, "value:selini").random(5))
    assert not np.array_equal(a, substream(8, "value:wintermute").random(5))


def test_order_independent():
    first = substream(1, "x").random(3)
    substream(1, "y").random(100)
    assert np.array_equal(first, substream(1, "x").random(3))


def test_seed_range():
    with pytest.raises(ValueError):
        substream(-1, "x")
    substream(2**64 - 1, "x")
