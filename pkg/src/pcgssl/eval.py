"""Patient-level metrics and the augmentation grid harness."""
import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from filelock import FileLock

from .augment import AugmentationPipeline
from .errors import EmptyMatrix
from .labels import MURMUR, OUTCOME, TASKS
from .seeding import derive_int

log = logging.getLogger(__name__)

# rows = true class, columns = predicted class, order (Abnormal, Normal)
DEFAULT_OUTCOME_COSTS = ((0.0, 5.0), (1.0, 0.0))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    task: object = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @classmethod
    def from_labels(cls, truth, predicted, task):
        if len(truth) != len(predicted):
            raise ValueError("truth and predictions differ in length")
        m = np.zeros((task.n_classes, task.n_classes), dtype=np.int64)
        for t, p in zip(truth, predicted):
            m[task.index(t), task.index(p)] += 1
        return cls(m, task)

    @property
    def total(self):
        return int(self.counts.sum())


def accuracy(m):
    if m.total == 0:
        raise EmptyMatrix("no evaluated patients")
    return float(np.trace(m.counts) / m.total)


def weighted_accuracy(m, weights):
    """Sum of w_i * correct_i over sum of w_i * support_i."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (m.counts.shape[0],) or np.any(weights <= 0):
        raise ValueError("need one positive weight per class")
    if m.total == 0:
        raise EmptyMatrix("no evaluated patients")
    return float(weights @ np.diag(m.counts) / (weights @ m.counts.sum(axis=1)))


def macro_f1(m):
    """Unweighted mean of per-class F1; a class never seen nor predicted scores 0."""
    c = m.counts.astype(np.float64)
    tp = np.diag(c)
    denom = c.sum(axis=0) + c.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())


def outcome_cost(m, cost_matrix=DEFAULT_OUTCOME_COSTS):
    """Linear misclassification cost: sum of cost[i][j] * m[i][j]."""
    cost_matrix = np.asarray(cost_matrix, dtype=np.float64)
    if cost_matrix.shape != m.counts.shape or not np.all(np.isfinite(cost_matrix)):
        raise ValueError("cost matrix must be finite and match the confusion matrix")
    return float((cost_matrix * m.counts).sum())


class LinearCost:
    """Cost function over full truth/prediction lists, backed by a cost matrix.

    Any callable ``cost(truth, predicted) -> float`` can stand in for it.
    """

    def __init__(self, cost_matrix=DEFAULT_OUTCOME_COSTS, task=OUTCOME):
        self.cost_matrix = cost_matrix
        self.task = task

    def __call__(self, truth, predicted):
        return outcome_cost(ConfusionMatrix.from_labels(truth, predicted, self.task), self.cost_matrix)


@dataclass
class MetricReport:
    task: str
    accuracy: float
    macro_f1: float
    weighted_accuracy: float
    cost: Optional[float]
    confusion: list

    def to_dict(self):
        return {"task": self.task, "accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "weighted_accuracy": self.weighted_accuracy, "cost": self.cost, "confusion": self.confusion}

    @classmethod
    def from_dict(cls, d):
        return cls(d["task"], d["accuracy"], d["macro_f1"], d["weighted_accuracy"], d["cost"], d["confusion"])


def score(truth, predicted, task, cost_fn=None):
    m = ConfusionMatrix.from_labels(truth, predicted, task)
    cost = None
    if task is OUTCOME:
        cost = (cost_fn or LinearCost())(truth, predicted)
    return MetricReport(task.name, accuracy(m), macro_f1(m), weighted_accuracy(m, task.weights), cost,
                        m.counts.tolist())


def score_patients(truth, predictions, cost_fn=None):
    """``truth``/``predictions``: ``{patient_id: {"murmur": label, "outcome": label}}``."""
    ids = sorted(truth)
    missing = [p for p in ids if p not in predictions]
    if missing:
        raise KeyError(f"no prediction for patients {missing[:5]}")
    return {name: score([truth[p][name] for p in ids], [predictions[p][name] for p in ids], task, cost_fn)
            for name, task in TASKS.items()}


# -- grid --------------------------------------------------------------------

GRID_FIELDS = ["view1_aug", "view2_aug", "task", "accuracy", "macro_f1", "weighted_accuracy", "cost"]
IDENTITY = "identity"


@dataclass(frozen=True)
class GridCell:
    """One grid entry; ``None`` in either view means no augmentation."""

    view1: object
    view2: object = None

    @property
    def key(self):
        return tuple(IDENTITY if v is None else v.name for v in (self.view1, self.view2))

    def pipelines(self):
        return tuple(AugmentationPipeline(() if v is None else (v,)) for v in (self.view1, self.view2))


def grid_cells(augmentations, include_identity=False):
    """Singles ``(f, identity)`` followed by all ordered pairs ``(f, g)`` incl. ``f == g``.

    ``include_identity`` prepends the ``(identity, identity)`` sanity cell.
    """
    cells = [GridCell(None, None)] if include_identity else []
    cells += [GridCell(a) for a in augmentations]
    cells += [GridCell(a, b) for a in augmentations for b in augmentations]
    return cells


def _read_ledger(path):
    done = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if line.strip():
                rec = json.loads(line)
                done[tuple(rec["cell"])] = rec
    return done


def _append_ledger(path, record):
    with FileLock(str(path) + ".lock"):
        with open(path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def _run_cell(run_cell, cell, seed, ledger_path):
    p1, p2 = cell.pipelines()
    try:
        reports = dict(run_cell(p1, p2, seed))
        checkpoint = reports.pop("checkpoint", None)
        record = {"cell": list(cell.key), "seed": seed, "status": "ok",
                  "metrics": {k: r.to_dict() for k, r in reports.items()},
                  "checkpoint": None if checkpoint is None else str(checkpoint)}
    except Exception as exc:  # a failed cell must not stop the grid
        log.exception("grid cell %s failed", cell.key)
        record = {"cell": list(cell.key), "seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    _append_ledger(ledger_path, record)
    return record


def run_grid(augmentations, run_cell, out_dir, master_seed=0, jobs=1, include_identity=False):
    """Run every grid cell not yet in the ledger; returns ``{cell_key: {task: MetricReport}}``.

    ``run_cell(p1, p2, seed)`` runs one full experiment and returns
    ``{task_name: MetricReport}``, optionally with a ``"checkpoint"`` path
    entry.  Completed cells are recorded in
    ``out_dir/grid_ledger.jsonl`` and skipped on re-runs; failed cells are
    recorded and retried next time.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = out_dir / "grid_ledger.jsonl"
    done = {k: r for k, r in _read_ledger(ledger_path).items() if r["status"] == "ok"}
    cells = grid_cells(augmentations, include_identity)
    todo = [c for c in cells if c.key not in done]
    seeds = {c.key: derive_int(master_seed, "grid", *c.key) for c in cells}
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, run_cell, c, seeds[c.key], ledger_path) for c in todo]
            records = [f.result() for f in futures]
    else:
        records = [_run_cell(run_cell, c, seeds[c.key], ledger_path) for c in todo]
    for rec in records:
        if rec["status"] == "ok":
            done[tuple(rec["cell"])] = rec
    results = {}
    for c in cells:
        if c.key in done:
            results[c.key] = {k: MetricReport.from_dict(v) for k, v in done[c.key]["metrics"].items()}
    write_grid_csv(out_dir / "grid_results.csv", results)
    return results


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def write_grid_csv(path, results):
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(GRID_FIELDS)
        for (v1, v2), reports in results.items():
            for task in (MURMUR.name, OUTCOME.name):
                if task in reports:
                    r = reports[task]
                    writer.writerow([v1, v2, task, _fmt(r.accuracy), _fmt(r.macro_f1),
                                     _fmt(r.weighted_accuracy), _fmt(r.cost)])
    os.replace(tmp, path)
