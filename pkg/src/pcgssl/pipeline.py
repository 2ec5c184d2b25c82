"""End-to-end orchestration: windows per patient, pretraining, heads, scoring."""
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import predict_patient, propagate_labels, train_head
from .contrastive import freeze_backbone, pretrain, write_history_csv
from .dataio import decode_wav
from .dsp import resample_to_2k, trim_and_window
from .eval import LinearCost, score_patients
from .labels import MURMUR, OUTCOME
from .nncore import save_checkpoint
from .seeding import derive_int

log = logging.getLogger(__name__)


def recording_windows(patient, window_params=None):
    """Decode, resample and window every recording; one list of windows per recording."""
    window_params = window_params or {}
    out = []
    for idx, rec in enumerate(patient.recordings):
        samples, rate = decode_wav(rec.audio_path)
        out.append(trim_and_window(resample_to_2k(samples, rate), patient_id=patient.patient_id,
                                   recording_index=idx, location=rec.location, **window_params))
    return out


@dataclass
class Corpus:
    """Patients and their windows, loaded once and shared by experiments."""

    patients: dict = field(default_factory=dict)
    windows: dict = field(default_factory=dict)

    @classmethod
    def load(cls, patients, window_params=None):
        corpus = cls()
        for p in patients:
            corpus.patients[p.patient_id] = p
            corpus.windows[p.patient_id] = recording_windows(p, window_params)
        return corpus

    def flat_windows(self, ids):
        return [w for pid in sorted(ids) for rec in self.windows[pid] for w in rec]

    def labeled_windows(self, ids, task):
        out = []
        for pid in sorted(ids):
            p = self.patients[pid]
            out += propagate_labels(p, [w for rec in self.windows[pid] for w in rec], task)
        return out

    def window_count(self, pid):
        return sum(len(rec) for rec in self.windows[pid])


@dataclass
class Model:
    backbone: object
    heads: dict
    history: list = field(default_factory=list)


def run_pretraining(corpus, split, cfg, p1, p2, seed):
    train = corpus.flat_windows(split.train)
    val = corpus.flat_windows(split.val)
    log.info("pretraining on %d windows (%d validation)", len(train), len(val))
    params, history = pretrain(train, val, p1, p2, cfg.ssl, backbone_cfg=cfg.backbone,
                               seed=derive_int(seed, "pretrain"), dtype=np.dtype(cfg.dtype))
    return params, history


def run_heads(corpus, split, cfg, ssl_params, seed):
    frozen = freeze_backbone(ssl_params)
    labeled_ids = {pid for pid in split.train if corpus.patients[pid].labeled}
    heads = {}
    for task in (MURMUR, OUTCOME):
        head, _ = train_head(corpus.labeled_windows(labeled_ids, task), corpus.labeled_windows(split.val, task),
                             frozen, task, cfg.head_config(task), cfg.backbone,
                             seed=derive_int(seed, "heads", task.name))
        heads[task.name] = head
    return frozen, heads


def predict_patients(corpus, ids, model, backbone_cfg):
    """``({pid: {"murmur": label, "outcome": label}}, recording rows)``."""
    predictions = {}
    rows = []
    for pid in sorted(ids):
        labels, per_rec = predict_patient(pid, corpus.windows[pid], model.backbone, model.heads, backbone_cfg)
        predictions[pid] = labels
        for idx, task_name, pred in per_rec:
            rows.append((pid, idx, corpus.patients[pid].recordings[idx].location.value, task_name, pred))
    return predictions, rows


def truth_of(corpus, ids):
    return {pid: {"murmur": corpus.patients[pid].murmur, "outcome": corpus.patients[pid].outcome}
            for pid in ids}


def run_experiment(corpus, split, cfg, p1=None, p2=None, seed=None, out_dir=None):
    """Pretrain, train both heads, score the test patients.

    Returns ``(model, reports, predictions)``.
    """
    seed = cfg.seed if seed is None else seed
    p1 = cfg.view1 if p1 is None else p1
    p2 = cfg.view2 if p2 is None else p2
    ssl_params, history = run_pretraining(corpus, split, cfg, p1, p2, seed)
    frozen, heads = run_heads(corpus, split, cfg, ssl_params, seed)
    model = Model(frozen, heads, history)
    predictions, _ = predict_patients(corpus, split.test, model, cfg.backbone)
    reports = score_patients(truth_of(corpus, split.test), predictions, LinearCost(cfg.outcome_costs))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_history_csv(out_dir / "ssl_history.csv", history)
        save_checkpoint(out_dir / "model.ckpt", merged_params(model), cfg.backbone)
    return model, reports, predictions


def format_predictions(predictions):
    """``patient_id<TAB>murmur<TAB>outcome`` lines, sorted by patient."""
    return "".join(f"{pid}\t{lab['murmur'].value}\t{lab['outcome'].value}\n"
                   for pid, lab in sorted(predictions.items()))


METRICS_HEADER = "task,accuracy,macro_f1,weighted_accuracy,cost\n"


def format_metrics(reports):
    lines = [METRICS_HEADER]
    for name, r in reports.items():
        cost = "" if r.cost is None else f"{r.cost:.6f}"
        lines.append(f"{name},{r.accuracy:.6f},{r.macro_f1:.6f},{r.weighted_accuracy:.6f},{cost}\n")
    return "".join(lines)


def merged_params(model):
    params = model.backbone
    for head in model.heads.values():
        params = params.merge(head)
    return params


class GridCellRunner:
    """Picklable ``run_cell`` callable for :func:`pcgssl.eval.run_grid`."""

    def __init__(self, corpus, split, cfg, out_dir=None):
        self.corpus = corpus
        self.split = split
        self.cfg = cfg
        self.out_dir = out_dir

    def __call__(self, p1, p2, seed):
        cell_dir = None
        if self.out_dir is not None:
            cell_dir = Path(self.out_dir) / "cells" / f"{p1.name}__{p2.name}"
        _, reports, _ = run_experiment(self.corpus, self.split, self.cfg, p1, p2, seed, cell_dir)
        if cell_dir is not None:
            reports = dict(reports, checkpoint=str(cell_dir / "model.ckpt"))
        return reports
