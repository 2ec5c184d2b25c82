"""Task heads on the frozen backbone and window -> recording -> patient aggregation."""
import logging
from dataclasses import dataclass, field

import numpy as np

from .contrastive import EarlyStopping
from .errors import EmptyDataset, MissingLabel, NoWindows, UnfrozenBackbone
from .labels import MURMUR, OUTCOME, Murmur, Outcome
from .nncore import Adam, BackboneConfig, ParameterSet, Tensor, cross_entropy, dense_forward, embed, init_dense, softmax
from .nncore.model import BACKBONE_PREFIX
from .seeding import derive_rng

log = logging.getLogger(__name__)


@dataclass
class HeadConfig:
    layer_dims: list = field(default_factory=lambda: [128, 64, 3])
    lr: float = 1e-4
    batch: int = 64
    max_epochs: int = 200
    patience: int = 20

    def __post_init__(self):
        self.layer_dims = list(self.layer_dims)
        if len(self.layer_dims) != 3:
            raise ValueError("the classification head has exactly 3 fully connected layers")

    @classmethod
    def for_task(cls, task, hidden=(128, 64), **kwargs):
        """Config whose output layer matches the task's class count."""
        return cls(layer_dims=list(hidden) + [task.n_classes], **kwargs)


def head_prefix(task):
    return f"head.{task.name}."


def propagate_labels(patient, windows, task):
    """Attach the patient's label to each window.

    For murmur-Present patients only windows recorded at a murmur location are
    Present; the rest are Absent.
    """
    if task is MURMUR:
        if patient.murmur is None:
            raise MissingLabel(f"patient {patient.patient_id} has no murmur label")
        if patient.murmur is Murmur.PRESENT:
            return [w.with_label(Murmur.PRESENT if w.location in patient.murmur_locations else Murmur.ABSENT)
                    for w in windows]
        return [w.with_label(patient.murmur) for w in windows]
    if patient.outcome is None:
        raise MissingLabel(f"patient {patient.patient_id} has no outcome label")
    return [w.with_label(patient.outcome) for w in windows]


def init_head(task, cfg, feature_dim, seed, dtype=np.float32):
    if cfg.layer_dims[-1] != task.n_classes:
        raise ValueError(f"last head layer has {cfg.layer_dims[-1]} units, task has {task.n_classes} classes")
    return init_dense(ParameterSet(), head_prefix(task), [feature_dim] + cfg.layer_dims,
                      derive_rng(seed, "init", "head", task.name), dtype)


def head_logits(features, head, task):
    x = features if isinstance(features, Tensor) else Tensor(features)
    return dense_forward(x, head, head_prefix(task))


def _mean_loss(x, y, head, task, batch):
    view = ParameterSet({p: Tensor(t.data) for p, t in head.items()})
    total = 0.0
    for s in range(0, len(x), batch):
        total += float(cross_entropy(head_logits(x[s:s + batch], view, task), y[s:s + batch]).data) * len(x[s:s + batch])
    return total / len(x)


def fit_head(train_x, train_y, val_x, val_y, task, cfg=None, seed=0, head=None):
    """Train a head on precomputed features with Adam and early stopping.

    Returns ``(head_params, history)``; the best-validation epoch is restored.
    """
    cfg = cfg or HeadConfig.for_task(task)
    train_x = np.asarray(train_x)
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(train_x) == 0:
        raise EmptyDataset(f"no training windows for the {task.name} head")
    has_val = val_x is not None and len(val_x) > 0
    if has_val:
        val_x = np.asarray(val_x, dtype=train_x.dtype)
        val_y = np.asarray(val_y, dtype=np.int64)
    head = head or init_head(task, cfg, train_x.shape[1], seed, train_x.dtype)
    opt = Adam(lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best = head.snapshot()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = derive_rng(seed, "head", task.name, "shuffle", epoch).permutation(len(train_x))
        losses = []
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            head.zero_grad()
            loss = cross_entropy(head_logits(train_x[idx], head, task), train_y[idx])
            loss.backward()
            opt.step(head)
            losses.append(float(loss.data) * len(idx))
        head.zero_grad()
        train_loss = sum(losses) / len(train_x)
        val_loss = _mean_loss(val_x, val_y, head, task, 1024) if has_val else train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best = head.snapshot()
        if stop:
            break
    head.restore(best)
    return head, history


def check_frozen(params):
    backbone = params.paths(BACKBONE_PREFIX)
    loose = [p for p in backbone if p not in params.frozen_paths]
    if not backbone or loose:
        raise UnfrozenBackbone(f"backbone parameters not frozen: {loose or 'no backbone present'}")


def window_matrix(windows):
    return np.stack([w.samples for w in windows]) if windows else np.empty((0, 0))


def train_head(train_windows, val_windows, params, task, head_cfg=None, backbone_cfg=None, seed=0):
    """Embed labeled windows with the frozen backbone and fit the task head."""
    check_frozen(params)
    backbone_cfg = backbone_cfg or BackboneConfig()
    if not train_windows:
        raise EmptyDataset(f"no training windows for the {task.name} head")
    tx = embed(window_matrix(train_windows), params, backbone_cfg)
    ty = [task.index(w.label) for w in train_windows]
    vx = embed(window_matrix(val_windows), params, backbone_cfg) if val_windows else None
    vy = [task.index(w.label) for w in val_windows] if val_windows else None
    return fit_head(tx, ty, vx, vy, task, head_cfg or HeadConfig.for_task(task), seed)


def predict_window_probs(windows, params, head, task, backbone_cfg=None):
    """Softmax class probabilities, one row per window."""
    backbone_cfg = backbone_cfg or BackboneConfig()
    if len(windows) == 0:
        return np.empty((0, task.n_classes))
    x = windows if isinstance(windows, np.ndarray) else window_matrix(windows)
    feats = embed(np.atleast_2d(x), params, backbone_cfg)
    view = ParameterSet({p: Tensor(t.data) for p, t in head.items()})
    return softmax(head_logits(feats, view, task).data.astype(np.float64))


@dataclass
class RecordingPrediction:
    probabilities: np.ndarray
    label_index: int

    def label(self, task):
        return task.label(self.label_index)


def aggregate_recording(window_probs):
    """Mean of the window probabilities; argmax with ties to the lower index."""
    probs = np.asarray(window_probs, dtype=np.float64)
    if probs.size == 0:
        raise NoWindows("recording produced no windows")
    mean = probs.mean(axis=0)
    return RecordingPrediction(mean, int(np.argmax(mean)))


def aggregate_patient_murmur(recording_labels):
    labels = [Murmur(x) for x in recording_labels]
    if not labels:
        raise ValueError("no recording labels")
    if Murmur.PRESENT in labels:
        return Murmur.PRESENT
    if Murmur.UNKNOWN in labels:
        return Murmur.UNKNOWN
    return Murmur.ABSENT


def aggregate_patient_outcome(recording_labels):
    labels = [Outcome(x) for x in recording_labels]
    if not labels:
        raise ValueError("no recording labels")
    return Outcome.ABNORMAL if Outcome.ABNORMAL in labels else Outcome.NORMAL


AGGREGATORS = {"murmur": aggregate_patient_murmur, "outcome": aggregate_patient_outcome}
FALLBACK = {"murmur": Murmur.ABSENT, "outcome": Outcome.NORMAL}


def predict_patient(patient_id, recordings, params, heads, backbone_cfg=None, tasks=(MURMUR, OUTCOME)):
    """Patient labels from per-recording window lists.

    ``recordings`` is a list of window lists (one per recording).  Recordings
    without windows are skipped; a patient with none at all gets the
    majority-class fallback.  Returns ``(labels, per_recording)`` where
    ``labels`` maps task name to label and ``per_recording`` is a list of
    ``(recording_index, task_name, RecordingPrediction)``.
    """
    labels = {}
    per_recording = []
    for task in tasks:
        rec_labels = []
        for idx, windows in enumerate(recordings):
            if not windows:
                continue
            pred = aggregate_recording(predict_window_probs(windows, params, heads[task.name], task, backbone_cfg))
            rec_labels.append(pred.label(task))
            per_recording.append((idx, task.name, pred))
        if rec_labels:
            labels[task.name] = AGGREGATORS[task.name](rec_labels)
        else:
            log.warning("patient %s: no recording long enough to window; predicting %s",
                        patient_id, FALLBACK[task.name].value)
            labels[task.name] = FALLBACK[task.name]
    return labels, per_recording
