"""Command-line entry points: train, eval, classify, sweep, bench, synth-data.

Results go to stdout in the chosen --format (csv or json); progress and
diagnostics go to stderr. Exit codes: 0 success, 2 usage errors (bad flags,
missing files), 1 runtime failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (Manifest, ToyCorpusSpec, generate_toy_corpus, load_manifest,
                   read_wav)
from .features import (CMVN_MODES, AudioBuffer, apply_cmvn,
                       compute_global_cmvn, extract_features, load_cmvn_stats,
                       save_cmvn_stats)
from .model import build_model
from .serialization import load_weights, save_weights
from .streaming import (LatencyReport, StreamConfig, full_classify,
                        post_receipt_seconds, segment_stream, stream_classify)
from .training import TrainConfig, evaluate, train

# Published reference ratios (percent of full-signal compute needed after the
# last sample) for two operating points of this architecture; printed next to
# measured values by `bench` for comparison, never asserted against.
PUBLISHED_RATIO_PERCENT = {(1.75, 0.75): 43.0, (1.0, 0.25): 25.0}

DEFAULT_SEGMENT_GRID = (1.0, 1.25, 1.5, 1.75, 2.0)
DEFAULT_STEP_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5)


class UsageError(Exception):
    """Bad invocation: wrong flag values or missing input files."""


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(rows: list[dict], fmt: str) -> None:
    """Write result rows to stdout; csv gets a header from the first row."""
    if fmt == "json":
        payload = rows[0] if len(rows) == 1 else rows
        print(json.dumps(payload, indent=2))
        return
    keys = list(rows[0].keys())
    print(",".join(keys))
    for row in rows:
        print(",".join(_csv_cell(row[k]) for k in keys))


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ";".join(_csv_cell(v) for v in value)
    return str(value)


def _default_stats_path(weights_path) -> Path:
    return Path(weights_path).with_suffix(Path(weights_path).suffix + ".cmvn")


def _load_features(manifest: Manifest):
    return [extract_features(read_wav(p)) for p in manifest.paths]


def _normalize(feats_list, mode: str, stats):
    return [apply_cmvn(f, mode, stats) for f in feats_list]


def _resolve_cmvn(args, for_streaming: bool = False):
    """Returns (mode, stats) for inference commands."""
    mode = args.cmvn
    if mode == "utterance" and for_streaming:
        raise UsageError("utterance CMVN needs the whole utterance up front "
                         "and cannot be used for streaming classification")
    if mode != "global":
        return mode, None
    stats_path = args.cmvn_stats or _default_stats_path(args.weights)
    stats_path = _require_file(stats_path, "CMVN stats file")
    return mode, load_cmvn_stats(stats_path)


def _labels_for(weights, manifest: Manifest) -> list[str]:
    if weights.labels is not None:
        missing = set(manifest.labels) - set(weights.labels)
        if missing:
            raise UsageError(
                f"manifest labels {sorted(missing)} unknown to the weight file")
        return list(weights.labels)
    return manifest.vocabulary


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_data(args) -> int:
    spec = ToyCorpusSpec(num_classes=args.classes,
                         samples_per_class=args.per_class, seed=args.seed)
    manifests = generate_toy_corpus(spec, args.out)
    _emit([{"split": split, "manifest": str(path)}
           for split, path in manifests.items()], args.format)
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    _log(f"training on {len(manifest)} utterances, "
         f"{manifest.num_classes} intents")
    feats = _load_features(manifest)
    labels = manifest.label_ids()
    if args.val_manifest:
        val_manifest = load_manifest(_require_file(args.val_manifest, "val manifest"),
                                     vocabulary=manifest.vocabulary)
        val_feats = _load_features(val_manifest)
        val_labels = val_manifest.label_ids()
    else:
        order = np.random.default_rng(args.seed).permutation(len(feats))
        n_val = max(1, int(round(0.15 * len(feats))))
        if n_val >= len(feats):
            raise UsageError("manifest too small to split off validation data")
        val_idx, train_idx = order[:n_val], order[n_val:]
        val_feats = [feats[i] for i in val_idx]
        val_labels = labels[val_idx]
        feats = [feats[i] for i in train_idx]
        labels = labels[train_idx]

    stats = None
    if args.cmvn == "global":
        stats = compute_global_cmvn(feats)
        stats_path = args.cmvn_stats or _default_stats_path(args.out)
        save_cmvn_stats(stats, stats_path)
        _log(f"wrote CMVN stats to {stats_path}")
    feats = _normalize(feats, args.cmvn, stats)
    val_feats = _normalize(val_feats, args.cmvn, stats)

    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      max_epochs=args.epochs, early_stop_patience=args.patience,
                      seed=args.seed, cmvn_mode=args.cmvn)
    weights = build_model(manifest.num_classes, seed=args.seed)
    weights.labels = manifest.vocabulary
    result = train(weights, feats, labels, val_feats, val_labels, cfg,
                   log=lambda row: _log(
                       f"epoch {row['epoch']}: train_loss {row['train_loss']:.4f} "
                       f"val_loss {row['val_loss']:.4f} "
                       f"val_error {row['val_error_rate']:.4f}"))
    save_weights(result.weights, args.out)
    if args.metrics:
        Path(args.metrics).write_text(result.history_csv())
    best = result.history[result.best_epoch]
    _emit([{"weights": str(args.out), "epochs_run": len(result.history),
            "best_epoch": result.best_epoch,
            "val_loss": best["val_loss"],
            "val_error_rate": best["val_error_rate"]}], args.format)
    return 0


def cmd_eval(args) -> int:
    weights = load_weights(_require_file(args.weights, "weight file"))
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    vocab = _labels_for(weights, manifest)
    manifest = Manifest(manifest.paths, manifest.labels, vocab)
    mode, stats = _resolve_cmvn(args)
    feats = _normalize(_load_features(manifest), mode, stats)
    loss, error_rate = evaluate(feats, manifest.label_ids(), weights)
    _emit([{"error_rate": error_rate, "mean_loss": loss,
            "num_utterances": len(manifest)}], args.format)
    return 0


def cmd_classify(args) -> int:
    weights = load_weights(_require_file(args.weights, "weight file"))
    audio = read_wav(_require_file(args.audio, "audio file"))
    mode, stats = _resolve_cmvn(args, for_streaming=args.streaming)
    feats = apply_cmvn(extract_features(audio), mode, stats)
    row = {}
    if args.streaming:
        cfg = StreamConfig(args.segment, args.step, args.alignment)
        posterior, report = stream_classify(feats, cfg, weights)
        row.update({"num_segments": report.num_segments,
                    "alpha_seconds": report.alpha_seconds,
                    "beta_seconds": report.beta_seconds,
                    "ratio_percent": report.ratio_percent})
    else:
        posterior, beta = full_classify(feats, weights)
        row["beta_seconds"] = beta
    top = int(posterior.argmax())
    label = weights.labels[top] if weights.labels else str(top)
    result = {"intent": label, "intent_id": top,
              "confidence": float(posterior[top]), **row}
    if args.format == "json":
        result["posterior"] = [float(p) for p in posterior]
    _emit([result], args.format)
    return 0


def cmd_sweep(args) -> int:
    weights = load_weights(_require_file(args.weights, "weight file"))
    manifest = load_manifest(_require_file(args.manifest, "manifest"))
    vocab = _labels_for(weights, manifest)
    manifest = Manifest(manifest.paths, manifest.labels, vocab)
    mode, stats = _resolve_cmvn(args, for_streaming=True)
    feats = _normalize(_load_features(manifest), mode, stats)
    labels = manifest.label_ids()
    segments = args.segments
    steps = args.steps
    rows = []
    for step in steps:
        row = {"step_seconds": step}
        for seg in segments:
            cfg = StreamConfig(seg, step, args.alignment)
            wrong = 0
            for f, y in zip(feats, labels):
                posterior, _ = stream_classify(f, cfg, weights, measure_beta=False)
                wrong += int(posterior.argmax()) != y
            row[f"seg_{seg:g}s"] = wrong / len(feats)
        rows.append(row)
        _log(f"step {step:g}s done")
    _emit(rows, args.format)
    return 0


def cmd_bench(args) -> int:
    """Measure alpha/beta on one utterance, feature extraction included.

    Feature time is charged to segments at the per-frame average, the way a
    causal frontend would incur it while audio arrives; beta charges it all.
    Published reference ratios are printed for comparison when the operating
    point has one.
    """
    import time as _time

    weights = load_weights(_require_file(args.weights, "weight file"))
    if args.audio:
        audio = read_wav(_require_file(args.audio, "audio file"))
    else:
        rng = np.random.default_rng(args.seed)
        samples = (rng.uniform(-0.3, 0.3, int(args.synthetic_seconds * 16000))
                   * 32767).astype(np.int16)
        audio = AudioBuffer(samples)
    mode, stats = _resolve_cmvn(args, for_streaming=True)
    cfg = StreamConfig(args.segment, args.step, args.alignment)

    reports = []
    for _ in range(args.repeats):
        t0 = _time.perf_counter()
        feats = apply_cmvn(extract_features(audio), mode, stats)
        feat_seconds = _time.perf_counter() - t0
        n = feats.shape[0]
        _, model_beta = full_classify(feats, weights)
        _, run = stream_classify(feats, cfg, weights, measure_beta=False)
        windows = segment_stream(n, cfg)
        ends = [e for _, e in windows]
        per_frame = feat_seconds / n
        new_frames = np.diff([0] + ends)
        seg_costs = [c + per_frame * k
                     for c, k in zip(run.per_segment_seconds, new_frames)]
        alpha = post_receipt_seconds(ends, seg_costs, n, run.head_seconds)
        reports.append(LatencyReport(beta_seconds=model_beta + feat_seconds,
                                     alpha_seconds=alpha,
                                     num_segments=len(windows),
                                     per_segment_seconds=seg_costs,
                                     head_seconds=run.head_seconds))
    alpha = float(np.median([r.alpha_seconds for r in reports]))
    beta = float(np.median([r.beta_seconds for r in reports]))
    per_seg = np.median([r.per_segment_seconds for r in reports], axis=0)
    published = PUBLISHED_RATIO_PERCENT.get((args.segment, args.step))
    row = {
        "segment_seconds": args.segment,
        "step_seconds": args.step,
        "num_segments": reports[0].num_segments,
        "alpha_seconds": alpha,
        "beta_seconds": beta,
        "ratio_percent": 100.0 * alpha / beta,
        "published_ratio_percent": published if published is not None else "",
        "max_segment_seconds": float(np.max(per_seg)),
        "realtime_ok": bool(np.max(per_seg) < args.segment),
    }
    _emit([row], args.format)
    return 0


# ---------------------------------------------------------------------------
# parser

def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad float list {text!r}") from exc


def _add_common(sub, *, cmvn_default="global"):
    sub.add_argument("--seed", type=int, default=0, help="RNG seed")
    sub.add_argument("--format", choices=("csv", "json"), default="csv",
                     help="stdout format for results")
    sub.add_argument("--cmvn", choices=CMVN_MODES, default=cmvn_default,
                     help="feature normalization mode")
    sub.add_argument("--cmvn-stats", default=None,
                     help="stats file for global CMVN "
                          "(default: <weights>.cmvn)")


def _add_stream_flags(sub):
    sub.add_argument("--segment", type=float, default=1.0,
                     help="segment length S in seconds")
    sub.add_argument("--step", type=float, default=0.25,
                     help="segment hop T in seconds")
    sub.add_argument("--alignment", choices=("free", "stride16"), default="free",
                     help="segment start alignment")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamslu",
        description="Streaming speech-to-intent engine")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth-data", help="generate the synthetic tone corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=100)
    _add_common(p)
    p.set_defaults(func=cmd_synth_data)

    p = commands.add_parser("train", help="train a model from a manifest")
    p.add_argument("--manifest", required=True, help="training manifest CSV")
    p.add_argument("--val-manifest", default=None,
                   help="validation manifest (default: hold out 15%% of training)")
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--metrics", default=None, help="per-epoch metrics CSV")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", help="error rate on a labeled manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("classify", help="classify one WAV file")
    p.add_argument("--weights", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--streaming", action="store_true",
                   help="segment-by-segment instead of full-signal")
    _add_stream_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_classify)

    p = commands.add_parser("sweep", help="error rate across a segment/step grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--segments", type=_float_list,
                   default=list(DEFAULT_SEGMENT_GRID),
                   help="comma-separated segment lengths in seconds")
    p.add_argument("--steps", type=_float_list, default=list(DEFAULT_STEP_GRID),
                   help="comma-separated step lengths in seconds")
    p.add_argument("--alignment", choices=("free", "stride16"), default="free")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = commands.add_parser("bench", help="measure post-receipt latency")
    p.add_argument("--weights", required=True)
    p.add_argument("--audio", default=None,
                   help="WAV to benchmark on (default: synthetic noise)")
    p.add_argument("--synthetic-seconds", type=float, default=3.0,
                   help="length of the synthetic utterance when no --audio")
    p.add_argument("--repeats", type=int, default=5)
    _add_stream_flags(p)
    _add_common(p, cmvn_default="none")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return 2
    except Exception as exc:  # runtime failure, not a usage problem
        _log(f"error: {type(exc).__name__}: {exc}")
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
