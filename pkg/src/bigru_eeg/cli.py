"""Command-line entry point: synth, preprocess, train, evaluate and predict.

Exit codes: 0 success, 2 configuration error, 3 missing or unreadable input
(including output-directory lock conflicts), 4 data or pipeline error,
5 any other runtime failure.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, dsp, evaluation, train
from .config import RunConfig, dump_config, load_config
from .errors import CheckpointError, ConfigError, DataError, NoWindows, OutputLocked

log = logging.getLogger("bigru_eeg")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4, 5

RESOLVED_CONFIG = "resolved_config.ini"
DATASET_FILE = "dataset.bga"
CHECKPOINT_FILE = "model.ckpt"


@contextlib.contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"{out_dir} is in use by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _write_resolved(cfg: RunConfig, out_dir: Path):
    (out_dir / RESOLVED_CONFIG).write_text(dump_config(cfg))


def _require(args, name):
    if getattr(args, name) is None:
        raise ConfigError(f"--{name} is required for {args.command}")
    return getattr(args, name)


# -- commands ----------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out_dir: Path) -> Path:
    manifest, recs = dataio.synth_generate(cfg.synth, cfg.seeds["synth"])
    path = dataio.write_synthetic(manifest, recs, out_dir)
    log.info("wrote %d synthetic recordings to %s", len(recs), out_dir)
    return path


def cmd_preprocess(cfg: RunConfig, manifest_path, out_dir: Path) -> dsp.SplitDataset:
    manifest = dataio.load_manifest(manifest_path)
    recs = dataio.aggregate_sessions(manifest, sample_rate_hz=cfg.pipeline.sample_rate_hz)
    split = dsp.run_pipeline(recs, cfg.pipeline)
    dsp.save_split(split, out_dir / DATASET_FILE)
    (out_dir / "pipeline_report.txt").write_text(split.report.to_text())
    log.info("pipeline (%s): %d train / %d test windows", cfg.pipeline.mode, len(split.train), len(split.test))
    return split


def cmd_train(cfg: RunConfig, dataset_path, out_dir: Path) -> train.CVResult:
    split = dsp.load_split(dataset_path)
    dtype = np.dtype(cfg.arch.dtype)
    x, y = dsp.windows_to_arrays(split.train, dtype)
    if x.shape[2] != cfg.arch.n_features:
        raise ConfigError(f"dataset has {x.shape[2]} channels, arch.n_features is {cfg.arch.n_features}")
    res = train.kfold_cv(x, y, cfg.train, cfg.arch)
    for f in res.folds:
        f.history.write_csv(out_dir / f"history_fold{f.fold + 1}.csv")
    res.final_history.write_csv(out_dir / "history_final.csv")
    train.save_checkpoint(res.final_params, out_dir / CHECKPOINT_FILE, split.stats, split.config)
    lines = [f"selection={res.selection}", f"n_train_windows={len(x)}"]
    for f in res.folds:
        lines.append(f"fold{f.fold + 1}.epochs={len(f.history.records)}")
        lines.append(f"fold{f.fold + 1}.best_epoch={f.history.best_epoch}")
        lines.append(f"fold{f.fold + 1}.best_val_loss={min(f.history.val_losses)!r}")
    lines.append(f"final.epochs={len(res.final_history.records)}")
    lines.append(f"final.best_epoch={res.final_history.best_epoch}")
    (out_dir / "train_summary.kv").write_text("\n".join(lines) + "\n")
    return res


def cmd_evaluate(cfg: RunConfig, checkpoint_path, dataset_path, out_dir: Path) -> evaluation.EvalReport:
    ck = train.load_checkpoint(checkpoint_path, cfg.arch)
    split = dsp.load_split(dataset_path)
    if not split.test:
        raise DataError(f"{dataset_path} has an empty test split")
    x, y = dsp.windows_to_arrays(split.test, np.dtype(ck.arch.dtype))
    report = evaluation.evaluate_model(ck.params, x, y, cfg.eval.batch_size)
    report.extra["pipeline_mode"] = split.config.mode if split.config else "unknown"
    hist_path = Path(checkpoint_path).parent / "history_final.csv"
    history = train.TrainHistory.from_csv_text(hist_path.read_text()) if hist_path.exists() else None
    evaluation.export_report(report, history, out_dir)
    log.info("test accuracy %.4f, test loss %.4f", report.accuracy, report.test_loss)
    return report


@dataclasses.dataclass
class Prediction:
    starts: list
    probs: np.ndarray
    labels: np.ndarray
    recording_label: dataio.ClassLabel

    def to_text(self) -> str:
        lines = ["window,start,p_truth,p_lie,label"]
        for i, (s, p, lab) in enumerate(zip(self.starts, self.probs, self.labels)):
            lines.append(f"{i},{s},{p[0]:.6f},{p[1]:.6f},{dataio.ClassLabel(int(lab)).tag}")
        votes = np.bincount(self.labels, minlength=2)
        lines.append(
            f"# recording label by majority vote over windows (extension; ties -> truth): "
            f"{self.recording_label.tag} (truth {votes[0]}, lie {votes[1]})"
        )
        return "\n".join(lines) + "\n"


def cmd_predict(cfg: RunConfig, checkpoint_path, recording_path) -> Prediction:
    ck = train.load_checkpoint(checkpoint_path, cfg.arch)
    pipe = ck.pipeline or cfg.pipeline
    rec = dataio.load_recording(recording_path, sample_rate_hz=pipe.sample_rate_hz)
    rec = dataio.clean_rows(rec)
    rec = dsp.bandpass_filter(rec, pipe.filter_spec)
    rec = ck.stats.apply(rec)
    windows = dsp.window_segments(rec, pipe.T, pipe.stride)
    if not windows:
        raise NoWindows(f"{recording_path}: {rec.n_samples} samples, fewer than one window of {pipe.T}")
    x, _ = dsp.windows_to_arrays(windows, np.dtype(ck.arch.dtype))
    probs = evaluation.predict_proba(ck.params, x, cfg.eval.batch_size)
    labels = evaluation.predict_labels(probs)
    votes = np.bincount(labels, minlength=2)
    winner = dataio.ClassLabel.LIE if votes[1] > votes[0] else dataio.ClassLabel.TRUTH
    return Prediction([w.origin[2] * pipe.stride for w in windows], probs, labels, winner)


# -- argument handling ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="override [seeds] global")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--mode", choices=dsp.MODES, help="override [pipeline] mode")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="bigru-eeg", description="Bi-GRU EEG window classifier toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate synthetic recordings and a manifest")
    p = sub.add_parser("preprocess", parents=[common], help="filter, window, balance, augment and split")
    p.add_argument("--manifest", type=Path)
    p = sub.add_parser("train", parents=[common], help="k-fold training and final model selection")
    p.add_argument("--dataset", type=Path)
    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--dataset", type=Path)
    p = sub.add_parser("predict", parents=[common], help="classify one raw recording")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--recording", type=Path)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (OutputLocked, FileNotFoundError, CheckpointError, OSError)):
        return EXIT_IO
    if isinstance(exc, DataError):
        return EXIT_DATA
    return EXIT_RUNTIME


def run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.mode is not None:
        cfg = dataclasses.replace(cfg, pipeline=dataclasses.replace(cfg.pipeline, mode=args.mode))
    cfg = cfg.resolved()
    cfg.validate()

    if args.command == "predict":
        pred = cmd_predict(cfg, _require(args, "checkpoint"), _require(args, "recording"))
        text = pred.to_text()
        if args.out is not None:
            with output_lock(args.out) as out:
                (out / "prediction.csv").write_text(text)
                _write_resolved(cfg, out)
        sys.stdout.write(text)
        return EXIT_OK

    out_dir = _require(args, "out")
    if args.command == "preprocess" and not Path(_require(args, "manifest")).exists():
        raise FileNotFoundError(f"manifest not found: {args.manifest}")
    with output_lock(out_dir) as out:
        _write_resolved(cfg, out)
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "preprocess":
            cmd_preprocess(cfg, args.manifest, out)
        elif args.command == "train":
            cmd_train(cfg, _require(args, "dataset"), out)
        elif args.command == "evaluate":
            report = cmd_evaluate(cfg, _require(args, "checkpoint"), _require(args, "dataset"), out)
            sys.stdout.write(evaluation.format_table(report))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except Exception as exc:  # mapped to an exit code, reported on one line
        code = _exit_code(exc)
        log.error("%s failed (%s): %s", args.command, type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
