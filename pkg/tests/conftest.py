import sys

import numpy as np
import pytest

from stemcal import _backend
from stemcal.signal import Waveform

SR = 16000


def sine(freq, seconds=2.0, sr=SR, amp=0.5, phase=0.0):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def click_train(seconds=2.0, sr=SR, period=0.25, amp=0.9):
    x = np.zeros(int(seconds * sr))
    x[int(0.05 * sr)::int(period * sr)] = amp
    return Waveform(x, sr)


def energy(x):
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    return float(x @ x)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(_backend.BACKENDS))
def backend(request):
    return request.param


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
