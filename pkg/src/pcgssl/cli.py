"""Command-line entry point.

    pcgssl prepare      --config run.toml      split manifest + window counts
    pcgssl pretrain     --config run.toml      contrastive backbone pretraining
    pcgssl train-heads  --config run.toml      murmur and outcome heads
    pcgssl predict      --config run.toml --input DIR
    pcgssl evaluate     --config run.toml --predictions FILE [--truth DIR]
    pcgssl grid         --config run.toml [--jobs N]
    pcgssl synth        --out DIR [--patients N]

Exit codes: 0 success, 1 usage/config error, 2 data error.
"""
import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__, synth
from .config import RunConfig
from .dataio import SplitAssignment, load_2016_dataset, load_2022_dataset, stratified_split
from .errors import ConfigError, PcgSslError
from .eval import LinearCost, run_grid, score_patients
from .labels import TASKS, Murmur, Outcome
from .nncore import load_checkpoint, save_checkpoint
from .pipeline import (Corpus, GridCellRunner, Model, format_metrics, format_predictions, merged_params,
                       predict_patients, run_heads, run_pretraining)
from .contrastive import write_history_csv

log = logging.getLogger("pcgssl")

MANIFEST = "split_manifest.tsv"
WINDOW_REPORT = "window_counts.tsv"
SSL_CKPT = "ssl_backbone.ckpt"
MODEL_CKPT = "model.ckpt"
PREDICTIONS = "predictions.tsv"
RECORDING_PROBS = "recording_probs.csv"
METRICS = "metrics.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _load_config(args):
    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = Path(args.out)
    return cfg


def _all_patients(cfg):
    cfg.check_paths()
    patients = load_2022_dataset(cfg.dir_2022)
    if cfg.dir_2016 is not None:
        patients += load_2016_dataset(cfg.dir_2016)
    return patients


def _split(cfg, patients):
    manifest = cfg.out_dir / MANIFEST
    if manifest.exists():
        split = SplitAssignment.from_manifest(manifest.read_text(), cfg.seed)
        known = split.train | split.val | split.test
        missing = [p.patient_id for p in patients if p.patient_id not in known]
        if missing:
            raise PcgSslError(f"{manifest}: patients {missing[:5]} not in the manifest; rerun prepare")
        return split
    return stratified_split(patients, cfg.test_count, cfg.val_fraction, cfg.seed)


def cmd_prepare(args):
    cfg = _load_config(args)
    patients = _all_patients(cfg)
    split = stratified_split(patients, cfg.test_count, cfg.val_fraction, cfg.seed)
    _write_text(cfg.out_dir / MANIFEST, split.to_manifest())
    corpus = Corpus.load(patients, cfg.window_params)
    lines = ["patient_id\tsplit\trecordings\twindows\n"]
    for p in sorted(patients, key=lambda p: p.patient_id):
        lines.append(f"{p.patient_id}\t{split.split_of(p.patient_id)}\t{len(p.recordings)}\t"
                     f"{corpus.window_count(p.patient_id)}\n")
    _write_text(cfg.out_dir / WINDOW_REPORT, "".join(lines))
    print(f"train {len(split.train)}  val {len(split.val)}  test {len(split.test)} -> {cfg.out_dir / MANIFEST}")
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args)
    patients = _all_patients(cfg)
    split = _split(cfg, patients)
    corpus = Corpus.load(patients, cfg.window_params)
    params, history = run_pretraining(corpus, split, cfg, cfg.view1, cfg.view2, cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_history_csv(cfg.out_dir / "ssl_history.csv", history)
    save_checkpoint(cfg.out_dir / SSL_CKPT, params, cfg.backbone)
    print(f"{len(history)} epochs, best val loss {min(h['val_loss'] for h in history):.4f} "
          f"-> {cfg.out_dir / SSL_CKPT}")
    return 0


def cmd_train_heads(args):
    cfg = _load_config(args)
    ckpt = cfg.out_dir / SSL_CKPT
    if not ckpt.exists():
        raise PcgSslError(f"{ckpt} not found; run pretrain first")
    ssl_params, _, _ = load_checkpoint(ckpt)
    cfg.check_paths(need_2022=True)
    patients = load_2022_dataset(cfg.dir_2022)
    split = _split(cfg, patients)
    corpus = Corpus.load([p for p in patients if p.patient_id in split.train | split.val], cfg.window_params)
    split = SplitAssignment(split.train & corpus.patients.keys(), split.val, set(), split.seed)
    frozen, heads = run_heads(corpus, split, cfg, ssl_params, cfg.seed)
    save_checkpoint(cfg.out_dir / MODEL_CKPT, merged_params(Model(frozen, heads)), cfg.backbone)
    print(f"heads trained -> {cfg.out_dir / MODEL_CKPT}")
    return 0


def _load_model(cfg):
    ckpt = cfg.out_dir / MODEL_CKPT
    if not ckpt.exists():
        raise PcgSslError(f"{ckpt} not found; run train-heads first")
    params, backbone_cfg, _ = load_checkpoint(ckpt)
    backbone = params.subset("block")
    heads = {name: params.subset(f"head.{name}.") for name in ("murmur", "outcome")}
    return Model(backbone, heads), backbone_cfg or cfg.backbone


def cmd_predict(args):
    cfg = _load_config(args)
    model, backbone_cfg = _load_model(cfg)
    input_dir = Path(args.input) if args.input else cfg.dir_2022
    patients = load_2022_dataset(input_dir, require_labels=False)
    if args.split:
        split = _split(cfg, patients)
        patients = [p for p in patients if p.patient_id in getattr(split, args.split)]
    corpus = Corpus.load(patients, cfg.window_params)
    predictions, rows = predict_patients(corpus, corpus.patients.keys(), model, backbone_cfg)
    out = Path(args.output) if args.output else cfg.out_dir / PREDICTIONS
    _write_text(out, format_predictions(predictions))
    probs_path = out.with_name(RECORDING_PROBS)
    with open(probs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "recording_index", "location", "task", "label", "probabilities"])
        for pid, idx, loc, task, pred in rows:
            label = TASKS[task].label(pred.label_index).value
            writer.writerow([pid, idx, loc, task, label, " ".join(f"{p:.6f}" for p in pred.probabilities)])
    print(f"{len(predictions)} patients -> {out}")
    return 0


def read_predictions(path):
    out = {}
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3:
            raise PcgSslError(f"{path}: expected 'patient_id<TAB>murmur<TAB>outcome', got {ln!r}")
        try:
            out[parts[0]] = {"murmur": Murmur(parts[1]), "outcome": Outcome(parts[2])}
        except ValueError as exc:
            raise PcgSslError(f"{path}: {exc}") from None
    return out


def cmd_evaluate(args):
    cfg = _load_config(args)
    predictions = read_predictions(args.predictions)
    truth_dir = Path(args.truth) if args.truth else cfg.dir_2022
    if truth_dir is None or not truth_dir.is_dir():
        raise ConfigError(f"truth directory {truth_dir} not found")
    truth = {p.patient_id: {"murmur": p.murmur, "outcome": p.outcome}
             for p in load_2022_dataset(truth_dir) if p.patient_id in predictions}
    if not truth:
        raise PcgSslError("no predicted patient appears in the truth directory")
    reports = score_patients(truth, predictions, LinearCost(cfg.outcome_costs))
    text = format_metrics(reports)
    out = Path(args.output) if args.output else cfg.out_dir / METRICS
    _write_text(out, text)
    sys.stdout.write(text)
    return 0


def cmd_grid(args):
    cfg = _load_config(args)
    patients = _all_patients(cfg)
    split = _split(cfg, patients)
    corpus = Corpus.load(patients, cfg.window_params)
    runner = GridCellRunner(corpus, split, cfg, cfg.out_dir / "grid")
    results = run_grid(cfg.grid_augmentations, runner, cfg.out_dir / "grid", cfg.seed, args.jobs,
                       cfg.grid_include_identity)
    print(f"{len(results)} cells complete -> {cfg.out_dir / 'grid' / 'grid_results.csv'}")
    return 0


def cmd_synth(args):
    out = Path(args.out)
    records = synth.make_corpus(out / "2022", n_patients=args.patients, seed=args.seed or 0)
    if args.unlabeled:
        synth.make_unlabeled_corpus(out / "2016", n_recordings=args.unlabeled, seed=args.seed or 0)
    print(f"{len(records)} synthetic patients -> {out / '2022'}")
    return 0


def build_parser():
    parser = _Parser(prog="pcgssl", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"pcgssl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", type=Path, help="TOML run configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", type=Path, help="override the output directory")
        return p

    common(sub.add_parser("prepare", help="write the split manifest and window counts")).set_defaults(fn=cmd_prepare)
    common(sub.add_parser("pretrain", help="contrastive backbone pretraining")).set_defaults(fn=cmd_pretrain)
    common(sub.add_parser("train-heads", help="train murmur and outcome heads")).set_defaults(fn=cmd_train_heads)
    p = common(sub.add_parser("predict", help="patient-level predictions"))
    p.add_argument("--input", help="directory of patient files (default: data.dir_2022)")
    p.add_argument("--split", choices=["train", "val", "test"], help="restrict to one split of the manifest")
    p.add_argument("--output", help="predictions file (default: OUT/predictions.tsv)")
    p.set_defaults(fn=cmd_predict)
    p = common(sub.add_parser("evaluate", help="score predictions against labels"))
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", help="directory of labeled patient files (default: data.dir_2022)")
    p.add_argument("--output", help="metrics CSV (default: OUT/metrics.csv)")
    p.set_defaults(fn=cmd_evaluate)
    p = common(sub.add_parser("grid", help="augmentation grid search"))
    p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p.set_defaults(fn=cmd_grid)
    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--patients", type=int, default=40)
    p.add_argument("--unlabeled", type=int, default=0, help="also write N unlabeled 2016-style recordings")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PcgSslError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
