"""Contrastive pretraining of the backbone with NT-Xent and LARS."""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationPipeline, apply_pipeline
from .errors import EmptyDataset
from .nncore import (
    LARS,
    BackboneConfig,
    ParameterSet,
    ScheduleConfig,
    Tensor,
    backbone_forward,
    init_backbone,
    init_projection,
    lr_at,
    nt_xent,
    projection_forward,
)
from .nncore.model import BACKBONE_PREFIX, PROJECTION_PREFIX
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class SslConfig:
    batch_pairs: int = 256
    max_epochs: int = 50
    patience: int = 5
    temperature: float = 0.1
    peak_lr: float = 0.1
    warmup_epochs: int = 5
    alpha: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_pairs < 2:
            raise ValueError("batch_pairs must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")

    def schedule(self, steps_per_epoch):
        return ScheduleConfig(self.peak_lr, self.warmup_epochs, self.max_epochs, self.alpha, steps_per_epoch)

    def lr(self, step, steps_per_epoch):
        if self.warmup_epochs < self.max_epochs:
            return lr_at(step, self.schedule(steps_per_epoch))
        # run shorter than the warmup: ramp linearly over the whole run
        return self.peak_lr * (step + 1) / (self.max_epochs * steps_per_epoch)


@dataclass
class ContrastiveBatch:
    """Rows ``i`` and ``N + i`` of ``views`` are the two views of source window ``i``."""

    views: np.ndarray
    source_ids: list = field(default_factory=list)

    @property
    def n_pairs(self):
        return self.views.shape[0] // 2


def _samples(w):
    return w.samples if hasattr(w, "samples") else np.asarray(w)


def _provenance(w):
    if hasattr(w, "patient_id"):
        return (w.patient_id, w.recording_index, w.offset_s)
    return None


def make_views(windows, p1, p2, rng, dtype=np.float32):
    n = len(windows)
    length = len(_samples(windows[0]))
    views = np.empty((2 * n, 1, length), dtype=dtype)
    for i, w in enumerate(windows):
        x = _samples(w)
        views[i, 0] = apply_pipeline(x, p1, rng)
        views[n + i, 0] = apply_pipeline(x, p2, rng)
    return ContrastiveBatch(views, [_provenance(w) for w in windows])


def contrastive_loss(batch, params, backbone_cfg, temperature):
    h = backbone_forward(Tensor(batch.views), params, backbone_cfg)
    return nt_xent(projection_forward(h, params), temperature)


class EarlyStopping:
    """Tracks the best monitored loss; ``update`` returns True when patience runs out."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.wait = 0

    def update(self, epoch, loss):
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def init_ssl_params(backbone_cfg, seed, dtype=np.float32):
    rng = derive_rng(seed, "init", "backbone")
    params = init_backbone(backbone_cfg, rng, dtype)
    return init_projection(params, backbone_cfg, derive_rng(seed, "init", "projection"), dtype)


def _inference_view(params):
    return ParameterSet({p: Tensor(t.data) for p, t in params.items()})


def _batches(n, size, drop_last=True):
    stops = range(0, n - size + 1, size) if drop_last else range(0, n, size)
    return [(s, min(s + size, n)) for s in stops]


def evaluate_loss(windows, p1, p2, params, backbone_cfg, cfg, seed):
    """Mean NT-Xent over fixed-seed batches; the same augmentations every call."""
    if not windows:
        return float("nan")
    size = min(cfg.batch_pairs, len(windows))
    frozen = _inference_view(params)
    dtype = params["block1.conv.weight"].dtype
    losses = []
    for b, (s, e) in enumerate(_batches(len(windows), size)):
        batch = make_views(windows[s:e], p1, p2, derive_rng(seed, "ssl", "val", b), dtype)
        losses.append(float(contrastive_loss(batch, frozen, backbone_cfg, cfg.temperature).data))
    return float(np.mean(losses))


def pretrain(train_windows, val_windows, p1, p2, cfg=None, params=None, backbone_cfg=None, seed=0,
             dtype=np.float32):
    """Train backbone + projection; returns ``(best_params, history)``.

    ``history`` is a list of ``{"epoch", "train_loss", "val_loss", "lr"}``
    dicts.  Early stopping monitors the validation loss (training loss when
    no validation windows are given) and the best epoch's weights are
    restored.
    """
    cfg = cfg or SslConfig()
    backbone_cfg = backbone_cfg or BackboneConfig()
    p1 = p1 or AugmentationPipeline()
    p2 = p2 or AugmentationPipeline()
    if not train_windows:
        raise EmptyDataset("no training windows for pretraining")
    if params is None:
        params = init_ssl_params(backbone_cfg, seed, dtype)
    batch_pairs = cfg.batch_pairs
    if len(train_windows) < batch_pairs:
        log.warning("only %d training windows; shrinking batch from %d pairs", len(train_windows), batch_pairs)
        batch_pairs = len(train_windows)
    spans = _batches(len(train_windows), batch_pairs)
    steps_per_epoch = len(spans)
    opt = LARS(cfg.momentum, cfg.weight_decay)
    stopper = EarlyStopping(cfg.patience)
    best = params.snapshot()
    history = []
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = derive_rng(seed, "ssl", "shuffle", epoch).permutation(len(train_windows))
        losses = []
        lr = 0.0
        for b, (s, e) in enumerate(spans):
            batch = make_views([train_windows[i] for i in order[s:e]], p1, p2,
                               derive_rng(seed, "ssl", "train", epoch, b), dtype)
            params.zero_grad()
            loss = contrastive_loss(batch, params, backbone_cfg, cfg.temperature)
            loss.backward()
            lr = cfg.lr(step, steps_per_epoch)
            opt.step(params, lr)
            losses.append(float(loss.data))
            step += 1
        params.zero_grad()
        train_loss = float(np.mean(losses))
        val_loss = evaluate_loss(val_windows, p1, p2, params, backbone_cfg, cfg, seed) if val_windows else train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr})
        log.info("ssl epoch %d: train %.4f val %.4f lr %.5f", epoch, train_loss, val_loss, lr)
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best = params.snapshot()
        if stop:
            break
    params.restore(best)
    return params, history


def freeze_backbone(params):
    """Drop the projection head and freeze every convolutional parameter."""
    kept = ParameterSet({p: t for p, t in params.items() if not p.startswith(PROJECTION_PREFIX)},
                        {p for p in params.frozen_paths if not p.startswith(PROJECTION_PREFIX)})
    kept.freeze(kept.paths(BACKBONE_PREFIX))
    return kept


def write_history_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
