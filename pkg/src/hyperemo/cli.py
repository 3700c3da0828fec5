"""Command-line surface.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
missing paths, schema mismatches). Errors are one line on stderr,
prefixed "error:". All randomness sits behind --seed (default 42).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import reporting
from . import spectral
from . import trainer as trainer_mod

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class UsageError(Exception):
    pass


def _load_manifest_or_usage(path):
    try:
        return data_mod.load_manifest(path)
    except (data_mod.DatasetError, FileNotFoundError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args):
    manifest = data_mod.make_synthetic_dataset(
        args.out, num_subjects=args.subjects, dialogues_per_subject=args.dialogues,
        segments_per_dialogue=args.segments, num_classes=args.classes,
        num_channels=args.channels, window_len=args.window,
        audio_dim=args.audio_dim, video_dim=args.video_dim,
        class_separation=args.sep, seed=args.seed,
        sampling_rate_hz=args.rate, class_layout=args.layout)
    print(f"wrote {len(manifest.segments)} segments "
          f"({args.subjects} subjects x {args.dialogues} dialogues x {args.segments}) "
          f"to {args.out}")
    return 0


def _build_train_config(args) -> trainer_mod.TrainConfig:
    doc = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        try:
            doc = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    overrides = {
        "seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr,
        "batch_size": args.batch_size, "dropout": args.dropout, "dtype": args.dtype,
        "tag": args.tag, "test_fraction": args.test_fraction,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    if args.modalities:
        doc["modalities"] = [m.strip() for m in args.modalities.split(",") if m.strip()]
    for flag in trainer_mod.ABLATION_FLAGS:
        if getattr(args, flag):
            doc[flag] = True
    try:
        return trainer_mod.TrainConfig.from_dict(doc)
    except trainer_mod.ConfigError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args):
    manifest = _load_manifest_or_usage(args.data)
    config = _build_train_config(args)
    log = None
    if not args.quiet:
        def log(record):
            line = f"epoch {record['epoch']:4d}  loss {record['train_loss']:.4f}"
            if "eval_acc" in record:
                line += (f"  train_acc {record['train_acc']:.3f}"
                         f"  eval_acc {record['eval_acc']:.3f}"
                         f"  eval_f1 {record['eval_f1']:.3f}")
            print(line)
    result = trainer_mod.train(config, manifest, out_dir=args.out, log=log)
    print(f"final: acc {result.report['acc']:.4f}  f1 {result.report['f1']:.4f}  "
          f"({result.report['num_segments']} test segments)")
    if args.out:
        print(f"checkpoint + history + report written under {args.out}")
    return 0


def cmd_eval(args):
    manifest = _load_manifest_or_usage(args.data)
    if not (Path(args.ckpt) / "meta.json").exists():
        raise UsageError(f"no checkpoint at {args.ckpt}")
    try:
        report = trainer_mod.evaluate_checkpoint(args.ckpt, manifest, args.split)
    except trainer_mod.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    print(reporting.per_subject_table(report))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"report JSON written to {out}")
    return 0


def cmd_report(args):
    try:
        agg = reporting.aggregate_runs(args.runs)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    print("Per-subject results (averaged over runs)")
    print(reporting.per_subject_table(agg["per_subject_report"]))
    print()
    print("Settings comparison")
    print(reporting.settings_table(agg["settings"]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        reporting.write_per_subject_csv(agg["per_subject_report"], out / "per_subject.csv")
        reporting.write_settings_csv(agg["settings"], out / "settings.csv")
        for run in agg["runs"]:
            stem = Path(run["dir"]).name or "run"
            reporting.plot_confusion(run["report"], out / f"confusion_{stem}.png")
        print(f"CSV tables and confusion figures written under {out}")
    return 0


def cmd_plot_confusion(args):
    report_path = Path(args.report)
    if not report_path.exists():
        raise UsageError(f"report file not found: {report_path}")
    report = json.loads(report_path.read_text())
    if "confusion" not in report:
        raise UsageError("report JSON has no 'confusion' field")
    out = reporting.plot_confusion(report, args.out, normalize=not args.counts)
    print(f"confusion matrix figure written to {out}")
    return 0


def cmd_export_embeddings(args):
    manifest = _load_manifest_or_usage(args.data)
    if not (Path(args.ckpt) / "meta.json").exists():
        raise UsageError(f"no checkpoint at {args.ckpt}")
    model, config, _ = trainer_mod.load_checkpoint(args.ckpt)
    name, refs = trainer_mod.resolve_split(manifest, args.split, config)
    dialogues = trainer_mod.load_dialogues(manifest, refs, config.modalities,
                                           config.torch_dtype)
    count = trainer_mod.export_embeddings(model, dialogues, args.out, config.batch_size)
    print(f"wrote {count} embedding rows ({name} split) to {args.out}")
    return 0


def cmd_features(args):
    manifest = _load_manifest_or_usage(args.data)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as fh:
        fh.write("subject,dialogue,position,label,band,channel,de,psd\n")
        for ref in manifest.segments:
            segment = data_mod.load_segment(manifest, ref)
            eeg = torch.tensor(segment.eeg, dtype=torch.float64)
            for feats in spectral.band_features(eeg, manifest.sampling_rate_hz):
                de = feats.de.numpy()
                psd = feats.psd.numpy()
                for channel in range(manifest.num_channels):
                    fh.write(f"{ref.subject_id},{ref.dialogue_id},{ref.position},"
                             f"{ref.label},{feats.band},{channel},"
                             f"{de[channel]:.8g},{psd[channel]:.8g}\n")
    print(f"per-band DE/PSD written to {out}")
    return 0


def cmd_gradcheck(args):
    names = gradcheck_mod.CHECKED_MODULES if args.module == "all" else (args.module,)
    worst_failed = False
    for name in names:
        result = gradcheck_mod.gradient_check(name, seed=args.seed)
        status = "ok" if result.passed else "FAIL"
        print(f"gradcheck {name}: max rel error {result.max_rel_error:.3e} [{status}]")
        if not result.passed:
            worst_failed = True
            for pname, err in sorted(result.per_group.items(), key=lambda kv: -kv[1])[:5]:
                print(f"  {pname}: {err:.3e} (tol {result.tolerances[pname]:.0e})")
    return RUNTIME_ERROR if worst_failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperemo",
        description="Multimodal conversational emotion recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--sep", type=float, default=5.0,
                   help="class separation; 0 means no class signal")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--dialogues", type=int, default=20)
    p.add_argument("--segments", type=int, default=6)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--audio-dim", type=int, default=16)
    p.add_argument("--video-dim", type=int, default=16)
    p.add_argument("--rate", type=float, default=128.0)
    p.add_argument("--layout", choices=["balanced", "per_dialogue"], default="balanced")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="run directory for checkpoint/history/report")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--modalities", help="comma list, e.g. eeg,audio,video")
    p.add_argument("--tag", help="label for this run in reports")
    for flag in trainer_mod.ABLATION_FLAGS:
        p.add_argument(f"--{flag.replace('_', '-')}", action="store_true", dest=flag)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   help='"all", "train", "test", or side:fraction:seed')
    p.add_argument("--out", default="eval_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate run directories into tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", help="directory for CSV tables + confusion figures")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot-confusion", help="render a report's confusion matrix")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--counts", action="store_true", help="annotate raw counts")
    p.set_defaults(func=cmd_plot_confusion)

    p = sub.add_parser("export-embeddings",
                       help="dump per-segment embeddings for external projection")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="all")
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("features", help="dump per-band DE/PSD features as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--module", default="all",
                   choices=("all",) + gradcheck_mod.CHECKED_MODULES)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (data_mod.DatasetError, data_mod.SplitError, trainer_mod.ConfigError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (trainer_mod.TrainingDiverged, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
