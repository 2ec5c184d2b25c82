import struct

import numpy as np
import pytest


def write_pcm16(path, samples_int16, rate, channels=1, bits=16, fmt_tag=1, data_len=None):
    """Minimal RIFF/WAVE writer built from the format definition, independent of ``wave``."""
    data = np.asarray(samples_int16, dtype="<i2").tobytes()
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block_align, block_align, bits)
    declared = len(data) if data_len is None else data_len
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", declared) + data
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body) - 4) + body)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sine(freq, seconds=5.0, rate=2000, amp=1.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)


def fft_amplitude(x, freq, rate=2000):
    """Amplitude of ``freq`` in ``x``; ``len(x)`` must hold whole periods."""
    spec = np.fft.rfft(x)
    k = int(round(freq * len(x) / rate))
    return 2 * np.abs(spec[k]) / len(x)


# -- acceptance report ------------------------------------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    report = outcome.get_result()
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL" if not e["ok"] else "NOT RUN"
        terminalreporter.write_line(f"criterion {n}: {status}  {e['title']}")
