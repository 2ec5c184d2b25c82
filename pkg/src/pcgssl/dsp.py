"""Resampling to 2 kHz and fixed-length overlapping windows."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import UnsupportedRate

TARGET_RATE = 2000
WINDOW_S = 5.0
HOP_S = 2.5
TRIM_S = 2.0
WINDOW_LEN = int(WINDOW_S * TARGET_RATE)

AA_TAPS = 63
AA_CUTOFF_HZ = 900.0


@dataclass
class Window:
    samples: np.ndarray
    patient_id: str = ""
    recording_index: int = 0
    location: str = "Other"
    offset_s: float = 0.0
    label: Optional[object] = None

    def with_label(self, label):
        return Window(self.samples, self.patient_id, self.recording_index, self.location, self.offset_s, label)


def antialias_taps(rate_in=4000, cutoff_hz=AA_CUTOFF_HZ, n_taps=AA_TAPS):
    """Hamming-windowed sinc low-pass, unit DC gain."""
    n = np.arange(n_taps) - (n_taps - 1) / 2
    fc = cutoff_hz / rate_in
    h = 2 * fc * np.sinc(2 * fc * n) * np.hamming(n_taps)
    return h / h.sum()


def resample_to_2k(samples, rate_in):
    """Identity at 2 kHz; at 4 kHz, FIR anti-alias filter then keep every other sample."""
    samples = np.asarray(samples, dtype=np.float64)
    if rate_in == TARGET_RATE:
        return samples
    if rate_in != 2 * TARGET_RATE:
        raise UnsupportedRate(f"cannot resample {rate_in} Hz to {TARGET_RATE} Hz (only 2000 or 4000 supported)")
    n = len(samples)
    if n == 0:
        return samples
    taps = antialias_taps(rate_in)
    half = len(taps) // 2
    mode = "reflect" if n > half else "symmetric"
    padded = np.pad(samples, half, mode=mode)
    filtered = np.convolve(padded, taps, mode="valid")
    return filtered[::2][: n // 2]


def window_starts(n_samples, rate=TARGET_RATE, window_s=WINDOW_S, hop_s=HOP_S, trim_s=TRIM_S):
    """Start indices of every full window inside the trimmed region."""
    if window_s <= 0 or not 0 < hop_s <= window_s:
        raise ValueError("need window_s > 0 and 0 < hop_s <= window_s")
    win = int(round(window_s * rate))
    hop = int(round(hop_s * rate))
    trim = int(round(trim_s * rate))
    usable = n_samples - 2 * trim
    if usable < win:
        return []
    return [trim + k * hop for k in range((usable - win) // hop + 1)]


def trim_and_window(samples, window_s=WINDOW_S, hop_s=HOP_S, trim_s=TRIM_S, rate=TARGET_RATE,
                    patient_id="", recording_index=0, location="Other"):
    """Cut a 2 kHz recording into windows, skipping ``trim_s`` at both ends.

    A trailing stretch shorter than a window is dropped.
    """
    samples = np.asarray(samples)
    win = int(round(window_s * rate))
    return [
        Window(samples[s:s + win].copy(), patient_id, recording_index, location, s / rate)
        for s in window_starts(len(samples), rate, window_s, hop_s, trim_s)
    ]
