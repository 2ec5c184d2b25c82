"""Synthetic phonocardiogram corpus in the 2022 challenge layout.

Heart sounds are 20-120 Hz band-limited noise bursts (S1, S2) repeating at
a random heart rate.  Murmur recordings additionally carry 150-400 Hz
band-limited noise filling systole.  Patients with a murmur have it at a
random non-empty subset of their recording locations; outcome is Abnormal
exactly when a murmur is present.
"""
from pathlib import Path

import numpy as np
import scipy.signal

from .dataio import PatientRecord, RecordingRef, format_patient_file, write_wav
from .labels import Location, Murmur, Outcome
from .seeding import derive_rng

VALVES = (Location.AV, Location.PV, Location.TV, Location.MV)


def _band_noise(rng, n, lo, hi, rate):
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=rate, output="sos")
    x = scipy.signal.sosfiltfilt(sos, rng.standard_normal(n + 400))[200:-200]
    return x / (np.abs(x).max() + 1e-12)


def synth_pcg(rng, duration_s, rate, murmur=False, murmur_gain=0.6):
    n = int(round(duration_s * rate))
    t_beat = rng.uniform(0.7, 1.0)
    out = 0.02 * rng.standard_normal(n)
    burst = int(0.08 * rate)
    env = np.hanning(burst)
    t = rng.uniform(0.0, t_beat)
    while t < duration_s:
        for onset in (t, t + 0.3 * t_beat):
            s = int(onset * rate)
            if s + burst <= n:
                out[s:s + burst] += rng.uniform(0.6, 1.0) * env * _band_noise(rng, burst, 20, 120, rate)
        if murmur:
            s = int((t + 0.1) * rate)
            length = int(0.18 * t_beat * rate)
            if s + length <= n and length > 8:
                out[s:s + length] += murmur_gain * np.hanning(length) * _band_noise(rng, length, 150, 400, rate)
        t += t_beat
    return 0.5 * out / np.abs(out).max()


def make_patient(rng, patient_id, murmur, n_recordings=2, duration_s=12.0, rate=4000):
    locations = sorted(rng.choice(len(VALVES), size=n_recordings, replace=False))
    locations = [VALVES[i] for i in locations]
    if murmur:
        k = int(rng.integers(1, n_recordings + 1))
        murmur_locs = frozenset(locations[i] for i in rng.choice(n_recordings, size=k, replace=False))
    else:
        murmur_locs = frozenset()
    signals = {loc: synth_pcg(rng, duration_s, rate, murmur=loc in murmur_locs) for loc in locations}
    recs = [RecordingRef(loc, f"{patient_id}_{loc.value}.wav", rate) for loc in locations]
    record = PatientRecord(patient_id, rate, recs,
                           Murmur.PRESENT if murmur else Murmur.ABSENT, murmur_locs,
                           Outcome.ABNORMAL if murmur else Outcome.NORMAL,
                           {"Age": "Child", "Campaign": "Synthetic"})
    return record, signals


def make_corpus(out_dir, n_patients=40, seed=0, duration_s=12.0, rate=4000, n_recordings=2,
                murmur_fraction=0.5):
    """Write ``n_patients`` patients to ``out_dir``; returns their records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(seed, "synth")
    n_murmur = int(round(murmur_fraction * n_patients))
    flags = np.array([True] * n_murmur + [False] * (n_patients - n_murmur))
    rng.shuffle(flags)
    records = []
    for i, flag in enumerate(flags):
        pid = f"{10000 + i}"
        record, signals = make_patient(rng, pid, bool(flag), n_recordings, duration_s, rate)
        for loc, x in signals.items():
            write_wav(out_dir / f"{pid}_{loc.value}.wav", x, rate)
        (out_dir / f"{pid}.txt").write_text(format_patient_file(record))
        records.append(record)
    return records


def make_unlabeled_corpus(out_dir, n_recordings=10, seed=0, duration_s=12.0, rate=2000):
    """2016-style directory: ``RECORDS`` index plus WAVs, half with murmurs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = derive_rng(seed, "synth2016")
    names = []
    for i in range(n_recordings):
        name = f"u{i:04d}"
        write_wav(out_dir / f"{name}.wav", synth_pcg(rng, duration_s, rate, murmur=bool(i % 2)), rate)
        names.append(name)
    (out_dir / "RECORDS").write_text("\n".join(names) + "\n")
    return names
