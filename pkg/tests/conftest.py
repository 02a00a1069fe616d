import numpy as np
import pytest

from photonserver.clickstream import ClickStream, PulseSchedule


@pytest.fixture
def schedule():
    return PulseSchedule()


def make_stream(t, ch, duration=None):
    t = np.asarray(t, dtype=np.int64)
    ch = np.asarray(ch, dtype=np.uint8)
    if duration is None:
        duration = int(t[-1]) + 1 if t.size else 0
    return ClickStream(t, ch, duration)


def random_stream(rng, n, duration):
    t = np.sort(rng.integers(0, duration, n))
    ch = rng.integers(0, 2, n).astype(np.uint8)
    return make_stream(t, ch, duration)
