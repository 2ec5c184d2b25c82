"""Parameter container, the convolutional backbone and the dense heads."""
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from . import tensor as T
from .tensor import Tensor

BACKBONE_PREFIX = "block"
PROJECTION_PREFIX = "proj."
HEAD_PREFIX = "head."


@dataclass
class ParameterSet:
    """Named parameter tensors plus the set of paths no optimizer may touch."""

    tensors: dict = field(default_factory=dict)
    frozen_paths: set = field(default_factory=set)

    def __getitem__(self, path):
        return self.tensors[path]

    def __setitem__(self, path, value):
        self.tensors[path] = value if isinstance(value, Tensor) else Tensor(value, requires_grad=True)

    def __contains__(self, path):
        return path in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def paths(self, prefix=""):
        return [p for p in self.tensors if p.startswith(prefix)]

    def trainable(self):
        return {p: t for p, t in self.tensors.items() if p not in self.frozen_paths}

    def freeze(self, paths):
        paths = set(paths)
        self.frozen_paths |= paths
        for p in paths:
            self.tensors[p].requires_grad = False

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype):
        out = ParameterSet(frozen_paths=set(self.frozen_paths))
        for p, t in self.tensors.items():
            out.tensors[p] = Tensor(t.data.astype(dtype), requires_grad=p not in self.frozen_paths)
        return out

    def copy(self):
        return ParameterSet(
            {p: Tensor(t.data.copy(), requires_grad=t.requires_grad) for p, t in self.tensors.items()},
            set(self.frozen_paths),
        )

    def snapshot(self):
        return {p: t.data.copy() for p, t in self.tensors.items()}

    def restore(self, snap):
        for p, arr in snap.items():
            self.tensors[p].data = arr.copy()

    def subset(self, prefix):
        return ParameterSet({p: t for p, t in self.tensors.items() if p.startswith(prefix)},
                            {p for p in self.frozen_paths if p.startswith(prefix)})

    def merge(self, other):
        """New set holding both sets' tensors (shared, not copied)."""
        return ParameterSet({**self.tensors, **other.tensors}, self.frozen_paths | other.frozen_paths)


@dataclass
class BackboneConfig:
    n_blocks: int = 5
    channels: list = field(default_factory=lambda: [16, 32, 64, 128, 128])
    kernel: int = 16
    pool: int = 4
    input_len: int = 10_000
    embed_dim: int = 128

    def __post_init__(self):
        self.channels = list(self.channels)
        if self.n_blocks != len(self.channels):
            raise ValueError(f"n_blocks={self.n_blocks} but {len(self.channels)} channel widths given")
        if self.embed_dim <= 0 or self.kernel <= 0 or self.pool <= 0:
            raise ValueError("embed_dim, kernel and pool must be positive")
        if min(self.time_lengths()) < 1:
            raise ValueError(f"input_len {self.input_len} too short for {self.n_blocks} pools of {self.pool}")

    @property
    def feature_dim(self):
        return self.channels[-1]

    def time_lengths(self):
        lengths = [self.input_len]
        for _ in range(self.n_blocks):
            lengths.append(lengths[-1] // self.pool)
        return lengths

    def to_dict(self):
        return asdict(self)


def he_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_backbone(cfg, rng, dtype=np.float32):
    params = ParameterSet()
    c_in = 1
    for i, c_out in enumerate(cfg.channels, start=1):
        params[f"block{i}.conv.weight"] = he_uniform(rng, (c_out, c_in, cfg.kernel), c_in * cfg.kernel, dtype)
        params[f"block{i}.conv.bias"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    return params


def init_dense(params, prefix, dims, rng, dtype=np.float32):
    """Add fully connected layers ``dims[0] -> dims[1] -> ...`` under ``prefix``."""
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        params[f"{prefix}fc{i}.weight"] = he_uniform(rng, (d_out, d_in), d_in, dtype)
        params[f"{prefix}fc{i}.bias"] = np.zeros(d_out, dtype=dtype)
    return params


def init_projection(params, cfg, rng, dtype=np.float32):
    params[f"{PROJECTION_PREFIX}weight"] = he_uniform(rng, (cfg.embed_dim, cfg.feature_dim), cfg.feature_dim, dtype)
    params[f"{PROJECTION_PREFIX}bias"] = np.zeros(cfg.embed_dim, dtype=dtype)
    return params


def backbone_forward(x, params, cfg):
    """``[batch, 1, input_len] -> [batch, channels[-1]]``.

    Each block is conv (same padding) -> ReLU -> max-pool (floor), followed by
    a global max over the remaining time axis.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 3 or x.shape[1] != 1 or x.shape[2] != cfg.input_len:
        raise ShapeMismatch(f"backbone expects [batch, 1, {cfg.input_len}], got {x.shape}")
    h = x
    for i in range(1, cfg.n_blocks + 1):
        h = T.conv1d(h, params[f"block{i}.conv.weight"], params[f"block{i}.conv.bias"])
        h = T.relu(h)
        h = T.max_pool1d(h, cfg.pool)
    return T.global_max_pool(h)


def projection_forward(h, params):
    return T.linear(h, params[f"{PROJECTION_PREFIX}weight"], params[f"{PROJECTION_PREFIX}bias"])


def dense_forward(h, params, prefix):
    """Stack of FC layers with ReLU between them; returns logits (no softmax)."""
    n_layers = len([p for p in params.paths(prefix) if p.endswith(".weight")])
    for i in range(1, n_layers + 1):
        h = T.linear(h, params[f"{prefix}fc{i}.weight"], params[f"{prefix}fc{i}.bias"])
        if i < n_layers:
            h = T.relu(h)
    return h


def embed(windows, params, cfg, batch=64):
    """Backbone features for a ``[n, input_len]`` array, without building a graph."""
    windows = np.asarray(windows)
    dtype = params[f"block1.conv.weight"].dtype
    frozen = ParameterSet({p: Tensor(t.data) for p, t in params.items()})
    out = np.empty((len(windows), cfg.feature_dim), dtype=dtype)
    for start in range(0, len(windows), batch):
        chunk = windows[start:start + batch].astype(dtype, copy=False)[:, None, :]
        out[start:start + batch] = backbone_forward(Tensor(chunk), frozen, cfg).data
    return out
