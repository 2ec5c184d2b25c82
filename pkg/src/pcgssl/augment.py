"""Time-domain augmentations and probabilistic augmentation pipelines.

Every transform maps a 1-D window to a window of the same length.  Random
transforms take an explicit ``numpy.random.Generator``.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.signal

from . import kernels
from .dsp import TARGET_RATE, Window
from .errors import ConfigError, InvalidCutoff

FILTER_ORDER = 4


class Kind(str, Enum):
    HIGHPASS = "highpass"
    LOWPASS = "lowpass"
    REWIND = "rewind"
    INVERT = "invert"
    RANDOM_SCALE = "random_scale"
    UNIFORM_NOISE = "uniform_noise"
    UPSAMPLE2 = "upsample2"


_ALIASES = {"hp": Kind.HIGHPASS, "lp": Kind.LOWPASS, "scale": Kind.RANDOM_SCALE,
            "noise": Kind.UNIFORM_NOISE, "upsample": Kind.UPSAMPLE2}


@lru_cache(maxsize=None)
def butterworth_sos(kind, cutoff_hz, rate=TARGET_RATE, order=FILTER_ORDER):
    if not 0 < cutoff_hz < rate / 2:
        raise InvalidCutoff(f"cutoff {cutoff_hz} Hz outside (0, {rate / 2}) Hz")
    btype = "highpass" if Kind(kind) is Kind.HIGHPASS else "lowpass"
    return scipy.signal.butter(order, cutoff_hz, btype=btype, fs=rate, output="sos")


def cutoff_filter(x, kind, cutoff_hz, rate=TARGET_RATE):
    """Causal 4th-order Butterworth high- or low-pass."""
    kind = Kind(kind)
    if kind not in (Kind.HIGHPASS, Kind.LOWPASS):
        raise ValueError(f"{kind} is not a cutoff filter")
    return kernels.sosfilt(butterworth_sos(kind.value, float(cutoff_hz), rate), np.asarray(x, dtype=np.float64))


def rewind(x):
    return np.asarray(x)[::-1].copy()


def invert(x):
    return -np.asarray(x)


def random_scale(x, rng, lo=0.5, hi=2.0):
    if not 0 < lo < hi:
        raise ValueError("need 0 < lo < hi")
    return np.asarray(x) * rng.uniform(lo, hi)


def uniform_noise(x, rng, noise_range):
    """Add i.i.d. noise drawn from ``U[-noise_range/2, noise_range/2]``."""
    if noise_range <= 0:
        raise ValueError("noise range must be > 0")
    x = np.asarray(x)
    half = noise_range / 2
    return x + rng.uniform(-half, half, size=x.shape)


def upsample2_crop(x):
    """Double the rate by linear interpolation and keep the central half."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    y = np.empty(2 * n)
    y[0::2] = x
    y[1:-1:2] = 0.5 * (x[:-1] + x[1:])
    y[-1] = x[-1]
    start = n // 2
    return y[start:start + n]


@dataclass(frozen=True)
class AugmentationSpec:
    kind: Kind
    cutoff_hz: Optional[float] = None
    scale_range: Optional[tuple] = None
    noise_range: Optional[float] = None
    probability: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.scale_range is not None:
            object.__setattr__(self, "scale_range", tuple(float(v) for v in self.scale_range))
        is_filter = self.kind in (Kind.HIGHPASS, Kind.LOWPASS)
        if is_filter != (self.cutoff_hz is not None):
            raise ConfigError(f"{self.kind.value}: cutoff_hz is required for filters and only for filters")
        if is_filter and not 0 < self.cutoff_hz < TARGET_RATE / 2:
            raise InvalidCutoff(f"cutoff {self.cutoff_hz} Hz at or beyond Nyquist")
        if (self.kind is Kind.RANDOM_SCALE) != (self.scale_range is not None):
            raise ConfigError(f"{self.kind.value}: scale_range is required for random_scale and only for it")
        if self.scale_range is not None and not 0 < self.scale_range[0] < self.scale_range[1]:
            raise ConfigError(f"scale_range {self.scale_range} must satisfy 0 < lo < hi")
        if (self.kind is Kind.UNIFORM_NOISE) != (self.noise_range is not None):
            raise ConfigError(f"{self.kind.value}: noise_range is required for uniform_noise and only for it")
        if self.noise_range is not None and self.noise_range <= 0:
            raise ConfigError("noise_range must be > 0")
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError(f"probability {self.probability} outside [0, 1]")

    @classmethod
    def highpass(cls, cutoff_hz, p=1.0):
        return cls(Kind.HIGHPASS, cutoff_hz=cutoff_hz, probability=p)

    @classmethod
    def lowpass(cls, cutoff_hz, p=1.0):
        return cls(Kind.LOWPASS, cutoff_hz=cutoff_hz, probability=p)

    @classmethod
    def random_scale(cls, lo=0.5, hi=2.0, p=1.0):
        return cls(Kind.RANDOM_SCALE, scale_range=(lo, hi), probability=p)

    @classmethod
    def uniform_noise(cls, noise_range, p=1.0):
        return cls(Kind.UNIFORM_NOISE, noise_range=noise_range, probability=p)

    @property
    def name(self):
        """Short identifier used in grid result tables, e.g. ``highpass250``."""
        if self.cutoff_hz is not None:
            return f"{self.kind.value}{self.cutoff_hz:g}"
        if self.noise_range is not None:
            return f"{self.kind.value}{self.noise_range:g}"
        if self.scale_range is not None:
            return f"{self.kind.value}{self.scale_range[0]:g}-{self.scale_range[1]:g}"
        return self.kind.value

    def to_dict(self):
        d = {"kind": self.kind.value}
        if self.cutoff_hz is not None:
            d["cutoff"] = self.cutoff_hz
        if self.scale_range is not None:
            d["lo"], d["hi"] = self.scale_range
        if self.noise_range is not None:
            d["range"] = self.noise_range
        d["p"] = self.probability
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind_raw = str(d.pop("kind")).lower()
        kind = _ALIASES.get(kind_raw) or Kind(kind_raw)
        kwargs = {"probability": float(d.pop("p", d.pop("probability", 1.0)))}
        if "cutoff" in d or "cutoff_hz" in d:
            kwargs["cutoff_hz"] = float(d.pop("cutoff", d.pop("cutoff_hz", None)))
        if kind is Kind.RANDOM_SCALE:
            kwargs["scale_range"] = (float(d.pop("lo", 0.5)), float(d.pop("hi", 2.0)))
        if "range" in d or "noise_range" in d:
            kwargs["noise_range"] = float(d.pop("range", d.pop("noise_range", None)))
        if d:
            raise ConfigError(f"unknown augmentation keys {sorted(d)} for {kind.value}")
        return cls(kind, **kwargs)

    def always(self):
        return replace(self, probability=1.0)


@dataclass(frozen=True)
class AugmentationPipeline:
    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    @property
    def name(self):
        return "+".join(s.name for s in self.stages) if self.stages else "identity"

    def to_list(self):
        return [s.to_dict() for s in self.stages]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(AugmentationSpec.from_dict(d) for d in items))


def apply_spec(x, spec, rng):
    kind = spec.kind
    if kind in (Kind.HIGHPASS, Kind.LOWPASS):
        return cutoff_filter(x, kind, spec.cutoff_hz)
    if kind is Kind.REWIND:
        return rewind(x)
    if kind is Kind.INVERT:
        return invert(x)
    if kind is Kind.RANDOM_SCALE:
        return random_scale(x, rng, *spec.scale_range)
    if kind is Kind.UNIFORM_NOISE:
        return uniform_noise(x, rng, spec.noise_range)
    if kind is Kind.UPSAMPLE2:
        return upsample2_crop(x)
    raise ValueError(f"unhandled augmentation {kind}")


def apply_pipeline(x, pipeline, rng):
    """Run the stages in order; each fires on its own Bernoulli(probability) draw.

    Accepts a 1-D array or a ``Window`` and returns the same type.
    """
    if isinstance(x, Window):
        return replace(x, samples=apply_pipeline(x.samples, pipeline, rng))
    out = np.asarray(x, dtype=np.float64)
    for spec in pipeline.stages:
        if rng.random() < spec.probability:
            out = apply_spec(out, spec, rng)
    return out


# default view pipelines, mirrored by [ssl] view1/view2 in default.toml
SUBMITTED_VIEW1 = AugmentationPipeline((
    AugmentationSpec.highpass(250),
    AugmentationSpec(Kind.REWIND, probability=0.5),
    AugmentationSpec(Kind.INVERT, probability=0.5),
))
SUBMITTED_VIEW2 = AugmentationPipeline((
    AugmentationSpec.uniform_noise(0.02),
    AugmentationSpec(Kind.UPSAMPLE2, probability=0.5),
))


def standard_augmentations():
    """The individual transforms compared in the augmentation grid."""
    specs = []
    for cutoff in (250, 500, 750):
        specs.append(AugmentationSpec.highpass(cutoff))
        specs.append(AugmentationSpec.lowpass(cutoff))
    specs += [
        AugmentationSpec(Kind.REWIND),
        AugmentationSpec(Kind.INVERT),
        AugmentationSpec.random_scale(0.5, 2.0),
        AugmentationSpec.uniform_noise(0.002),
        AugmentationSpec.uniform_noise(0.01),
        AugmentationSpec.uniform_noise(0.02),
        AugmentationSpec(Kind.UPSAMPLE2),
    ]
    return specs
