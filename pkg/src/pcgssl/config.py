"""Run configuration loaded from TOML on top of the shipped defaults."""
import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .augment import AugmentationPipeline, AugmentationSpec
from .classify import HeadConfig
from .contrastive import SslConfig
from .errors import ConfigError
from .nncore import BackboneConfig


def default_toml():
    return resources.files("pcgssl").joinpath("default.toml").read_text()


def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: Path = Path("runs/default")
    dtype: str = "float32"
    dir_2022: Path = None
    dir_2016: Path = None
    test_count: int = 100
    val_fraction: float = 0.2
    window_s: float = 5.0
    hop_s: float = 2.5
    trim_s: float = 2.0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    ssl: SslConfig = field(default_factory=SslConfig)
    view1: AugmentationPipeline = field(default_factory=AugmentationPipeline)
    view2: AugmentationPipeline = field(default_factory=AugmentationPipeline)
    head: dict = field(default_factory=dict)
    outcome_costs: tuple = ((0.0, 5.0), (1.0, 0.0))
    grid_augmentations: list = field(default_factory=list)
    grid_include_identity: bool = False

    def head_config(self, task):
        return HeadConfig.for_task(task, hidden=self.head["hidden"],
                                   lr=self.head["lr"], batch=self.head["batch"],
                                   max_epochs=self.head["max_epochs"], patience=self.head["patience"])

    @property
    def window_params(self):
        return {"window_s": self.window_s, "hop_s": self.hop_s, "trim_s": self.trim_s}

    @classmethod
    def from_dict(cls, raw, base_dir=Path(".")):
        d = _merge(tomllib.loads(default_toml()), raw)

        def path(value):
            if not value:
                return None
            p = Path(value)
            return p if p.is_absolute() else (Path(base_dir) / p)

        try:
            ssl_raw = dict(d["ssl"])
            view1 = AugmentationPipeline.from_list(ssl_raw.pop("view1"))
            view2 = AugmentationPipeline.from_list(ssl_raw.pop("view2"))
            backbone = d["backbone"]
            cfg = cls(
                seed=int(d["seed"]),
                out_dir=path(d["out_dir"]),
                dtype=d["dtype"],
                dir_2022=path(d["data"]["dir_2022"]),
                dir_2016=path(d["data"]["dir_2016"]),
                test_count=int(d["data"]["test_count"]),
                val_fraction=float(d["data"]["val_fraction"]),
                window_s=float(d["windows"]["window_s"]),
                hop_s=float(d["windows"]["hop_s"]),
                trim_s=float(d["windows"]["trim_s"]),
                backbone=BackboneConfig(n_blocks=len(backbone["channels"]), channels=backbone["channels"],
                                        kernel=backbone["kernel"], pool=backbone["pool"],
                                        input_len=int(round(float(d["windows"]["window_s"]) * 2000)),
                                        embed_dim=backbone["embed_dim"]),
                ssl=SslConfig(**ssl_raw),
                view1=view1,
                view2=view2,
                head=dict(d["heads"]),
                outcome_costs=tuple(tuple(float(v) for v in row) for row in d["eval"]["outcome_costs"]),
                grid_augmentations=[AugmentationSpec.from_dict(a) for a in d["grid"]["augmentations"]],
                grid_include_identity=bool(d["grid"]["include_identity"]),
            )
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path=None):
        if path is None:
            return cls.from_dict({})
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            raw = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, path.parent)

    def validate(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.test_count < 0:
            raise ConfigError("test_count must be >= 0")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not 0 < self.hop_s <= self.window_s or self.trim_s < 0:
            raise ConfigError("need 0 < hop_s <= window_s and trim_s >= 0")
        h = self.head
        if len(h["hidden"]) != 2:
            raise ConfigError("heads.hidden must list exactly two widths (3 fully connected layers)")
        if h["lr"] <= 0 or h["batch"] < 1 or h["max_epochs"] < 1 or h["patience"] < 1:
            raise ConfigError("heads: lr > 0, batch/max_epochs/patience >= 1 required")

    def check_paths(self, need_2022=True):
        if need_2022 and (self.dir_2022 is None or not self.dir_2022.is_dir()):
            raise ConfigError(f"data.dir_2022 {self.dir_2022} is not a directory")
        if self.dir_2016 is not None and not self.dir_2016.is_dir():
            raise ConfigError(f"data.dir_2016 {self.dir_2016} is not a directory")
