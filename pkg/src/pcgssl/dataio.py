"""Challenge dataset ingestion: patient metadata, WAV decoding, splits.

2022 layout: one ``<id>.txt`` per patient next to ``<id>_<LOC>.wav`` files.
2016 layout: a ``RECORDS`` file listing one relative recording path per line.
"""
import logging
import random
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import networkx as nx
import numpy as np

from .errors import (
    ContradictoryLabels,
    DataError,
    MalformedHeader,
    MissingMandatoryAnnotation,
    StratumTooSmall,
    TruncatedFile,
    UnknownLocationCode,
    UnsupportedEncoding,
)
from .labels import Location, Murmur, Outcome

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class RecordingRef:
    location: Location
    audio_path: str
    sample_rate: int
    samples: Optional[int] = None

    def __post_init__(self):
        self.location = Location(self.location)
        if self.sample_rate <= 0:
            raise DataError(f"{self.audio_path}: sample rate must be positive")
        if self.samples is not None and self.samples <= 0:
            raise TruncatedFile(f"{self.audio_path}: recording has no samples")


@dataclass
class PatientRecord:
    patient_id: str
    sample_rate_declared: int
    recordings: list
    murmur: Optional[Murmur] = None
    murmur_locations: frozenset = frozenset()
    outcome: Optional[Outcome] = None
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.murmur_locations = frozenset(Location(loc) for loc in self.murmur_locations)
        if not self.recordings:
            raise DataError(f"patient {self.patient_id}: no recordings")
        if self.murmur is Murmur.PRESENT and not self.murmur_locations:
            raise ContradictoryLabels(f"patient {self.patient_id}: murmur Present but no murmur locations")
        recorded = {r.location for r in self.recordings}
        missing = self.murmur_locations - recorded
        if missing:
            raise ContradictoryLabels(
                f"patient {self.patient_id}: murmur locations {sorted(m.value for m in missing)} were not recorded")

    @property
    def labeled(self):
        return self.murmur is not None and self.outcome is not None


def _location(code):
    try:
        return Location(code)
    except ValueError:
        raise UnknownLocationCode(f"unknown auscultation location {code!r}") from None


def parse_patient_file(text, require_labels=True):
    """Parse a 2022 patient metadata file into a ``PatientRecord``.

    With ``require_labels=False`` (files to predict on) the murmur and
    outcome annotations may be missing.
    """
    lines = [ln.strip() for ln in text.replace("\r\n", "\n").split("\n")]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MalformedHeader("empty patient file")
    header = lines[0].split()
    if len(header) != 3:
        raise MalformedHeader(f"header {lines[0]!r} must be 'ID n_locations sample_rate'")
    patient_id, n_rec, rate = header
    try:
        n_rec, rate = int(n_rec), int(rate)
    except ValueError:
        raise MalformedHeader(f"header {lines[0]!r} has non-integer fields") from None

    recordings = []
    annotations = {}
    for ln in lines[1:]:
        if ln.startswith("#"):
            key, sep, value = ln[1:].partition(":")
            if not sep:
                raise MalformedHeader(f"annotation line {ln!r} lacks ':'")
            annotations[key.strip()] = value.strip()
            continue
        tokens = ln.split()
        wav = next((t for t in tokens[1:] if t.lower().endswith(".wav")), None)
        if wav is None:
            raise MalformedHeader(f"recording line {ln!r} names no .wav file")
        recordings.append(RecordingRef(_location(tokens[0]), wav, rate))
    if len(recordings) != n_rec:
        raise MalformedHeader(f"header declares {n_rec} recordings, found {len(recordings)}")

    if require_labels:
        for key in ("Murmur", "Murmur locations", "Outcome"):
            if key not in annotations:
                raise MissingMandatoryAnnotation(f"patient {patient_id}: missing #{key}")
    try:
        murmur = Murmur(annotations.pop("Murmur")) if "Murmur" in annotations else None
        outcome = Outcome(annotations.pop("Outcome")) if "Outcome" in annotations else None
    except ValueError as exc:
        raise DataError(f"patient {patient_id}: {exc}") from None
    raw_locs = annotations.pop("Murmur locations", "nan")
    locs = frozenset() if raw_locs.lower() in ("nan", "") else frozenset(_location(c) for c in raw_locs.split("+"))
    return PatientRecord(patient_id, rate, recordings, murmur, locs, outcome, annotations)


def format_patient_file(p):
    """Inverse of ``parse_patient_file`` (up to whitespace and ignored tokens)."""
    lines = [f"{p.patient_id} {len(p.recordings)} {p.sample_rate_declared}"]
    for r in p.recordings:
        stem = r.audio_path[:-4] if r.audio_path.lower().endswith(".wav") else r.audio_path
        lines.append(f"{r.location.value} {stem}.hea {r.audio_path}")
    order = [loc for loc in Location if loc in p.murmur_locations]
    annotations = dict(p.annotations)
    if p.murmur is not None:
        annotations["Murmur"] = p.murmur.value
        annotations["Murmur locations"] = "+".join(loc.value for loc in order) or "nan"
    if p.outcome is not None:
        annotations["Outcome"] = p.outcome.value
    lines += [f"#{k}: {v}" for k, v in annotations.items()]
    return "\n".join(lines) + "\n"


def decode_wav(path):
    """Read a mono 16-bit PCM WAV as float64 in [-1, 1) and its sample rate."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            n_frames = fh.getnframes()
            if fh.getcomptype() != "NONE" or channels != 1 or width != 2:
                raise UnsupportedEncoding(
                    f"{path}: need mono 16-bit PCM, got {channels} channel(s) x {8 * width} bit")
            raw = fh.readframes(n_frames)
    except wave.Error as exc:
        raise UnsupportedEncoding(f"{path}: {exc}") from None
    except EOFError:
        raise TruncatedFile(f"{path}: file ends inside the header") from None
    if n_frames == 0 or not raw:
        raise TruncatedFile(f"{path}: no audio samples")
    if len(raw) < 2 * n_frames:
        raise TruncatedFile(f"{path}: header announces {n_frames} frames, data holds {len(raw) // 2}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path, samples, rate):
    """Write float samples in [-1, 1] as mono 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(rate))
        fh.writeframes(pcm.tobytes())


def probe_wav(path):
    try:
        with wave.open(str(path), "rb") as fh:
            return fh.getframerate(), fh.getnframes()
    except (wave.Error, EOFError) as exc:
        raise UnsupportedEncoding(f"{path}: {exc}") from None


def load_2022_dataset(directory, require_labels=True):
    """Parse every ``<id>.txt`` in ``directory``; recording paths become absolute."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    patients = []
    for txt in sorted(directory.glob("*.txt")):
        if txt.name == "RECORDS.txt":
            continue
        try:
            p = parse_patient_file(txt.read_text(), require_labels)
        except DataError as exc:
            raise type(exc)(f"{txt}: {exc}") from None
        for r in p.recordings:
            path = directory / r.audio_path
            if not path.exists():
                raise DataError(f"{txt}: recording {path} not found")
            rate, n = probe_wav(path)
            if rate != r.sample_rate:
                log.warning("%s: header says %d Hz, WAV says %d Hz; using the WAV", path, r.sample_rate, rate)
            r.audio_path, r.sample_rate, r.samples = str(path), rate, n
            if n <= 0:
                raise TruncatedFile(f"{path}: no audio samples")
        patients.append(p)
    if not patients:
        raise DataError(f"{directory}: no patient files found")
    return patients


def load_2016_dataset(directory):
    """Unlabeled single-recording patients from a ``RECORDS`` index."""
    directory = Path(directory)
    index = directory / "RECORDS"
    if not index.exists():
        raise DataError(f"{index}: RECORDS index not found")
    patients = []
    for line in index.read_text().splitlines():
        rel = line.strip()
        if not rel:
            continue
        if not rel.lower().endswith(".wav"):
            rel += ".wav"
        path = directory / rel
        if not path.exists():
            raise DataError(f"{index}: listed recording {path} not found")
        rate, n = probe_wav(path)
        rec = RecordingRef(Location.OTHER, str(path), rate, n)
        patients.append(PatientRecord(f"2016/{rel[:-4]}", rate, [rec]))
    return patients


@dataclass
class SplitAssignment:
    train: set
    val: set
    test: set
    seed: int

    def split_of(self, patient_id):
        for name in SPLITS:
            if patient_id in getattr(self, name):
                return name
        raise KeyError(patient_id)

    def to_manifest(self):
        rows = sorted((pid, name) for name in SPLITS for pid in getattr(self, name))
        return "".join(f"{pid}\t{name}\n" for pid, name in rows)

    @classmethod
    def from_manifest(cls, text, seed=0):
        sets = {name: set() for name in SPLITS}
        for ln in text.splitlines():
            if not ln.strip():
                continue
            pid, _, name = ln.rstrip("\r").partition("\t")
            if name not in sets:
                raise DataError(f"manifest line {ln!r}: split must be one of {SPLITS}")
            sets[name].add(pid)
        return cls(sets["train"], sets["val"], sets["test"], seed)


def _controlled_round(sizes, targets, rng):
    """Integer matrix with row sums ``sizes``, column sums ``targets`` and every
    entry the floor or ceiling of its proportional quota."""
    total = sum(sizes)
    quotas = [[Fraction(n * t, total) for t in targets] for n in sizes]
    counts = [[int(q) for q in row] for row in quotas]
    g = nx.DiGraph()
    order = list(range(len(sizes)))
    rng.shuffle(order)
    for s in order:
        g.add_edge("src", ("s", s), capacity=sizes[s] - sum(counts[s]))
        for c, q in enumerate(quotas[s]):
            if q != int(q):
                g.add_edge(("s", s), ("c", c), capacity=1)
    for c, t in enumerate(targets):
        g.add_edge(("c", c), "sink", capacity=t - sum(row[c] for row in counts))
    value, flow = nx.maximum_flow(g, "src", "sink")
    needed = sum(t - sum(row[c] for row in counts) for c, t in enumerate(targets))
    if value != needed:  # pragma: no cover - impossible for consistent margins
        raise DataError("stratified allocation infeasible")
    for s in range(len(sizes)):
        for (_, c), f in flow.get(("s", s), {}).items():
            counts[s][c] += f
    return counts


def stratified_split(patients, test_count, val_fraction, seed):
    """Split labeled patients into train/val/test, stratified on (murmur, outcome).

    Test receives exactly ``test_count`` patients and validation
    ``round(val_fraction * (n - test_count))``; within every stratum each
    split's count is the floor or ceiling of its proportional share.
    Unlabeled patients always go to train.
    """
    labeled = [p for p in patients if p.labeled]
    unlabeled = [p for p in patients if not p.labeled]
    n = len(labeled)
    if not 0 <= test_count < max(n, 1):
        raise ValueError(f"test_count {test_count} must be < number of labeled patients ({n})")
    if not 0 < val_fraction < 1:
        raise ValueError("val_fraction must lie in (0, 1)")
    ids = [p.patient_id for p in patients]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate patient ids")
    rng = random.Random(seed)
    strata = {}
    for p in sorted(labeled, key=lambda p: p.patient_id):
        strata.setdefault((p.murmur.value, p.outcome.value), []).append(p.patient_id)
    keys = sorted(strata)
    n_val = round(val_fraction * (n - test_count))
    targets = [n - test_count - n_val, n_val, test_count]
    counts = _controlled_round([len(strata[k]) for k in keys], targets, rng) if n else []
    out = {name: set() for name in SPLITS}
    for key, (n_train, n_v, n_test) in zip(keys, counts):
        members = strata[key]
        if n_train == 0:
            raise StratumTooSmall(f"stratum {key} ({len(members)} patients) leaves no training patient")
        rng.shuffle(members)
        out["test"].update(members[:n_test])
        out["val"].update(members[n_test:n_test + n_v])
        out["train"].update(members[n_test + n_v:])
    out["train"].update(p.patient_id for p in unlabeled)
    return SplitAssignment(out["train"], out["val"], out["test"], seed)
