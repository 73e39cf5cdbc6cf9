import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("dsms", deadline=None, max_examples=25, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "dsms"))

SR = 48000


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, seconds=2.0, amp=1.0, phase=0.0, sr=SR, fn=np.sin):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * fn(2 * np.pi * freq * t + phase)
