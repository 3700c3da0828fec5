"""Report rendering: text tables, CSV files, and matplotlib figures.

Tables are produced from report JSON only; nothing here recomputes
metrics, so printed numbers always match the serialized ones.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def format_table(headers, rows) -> str:
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for r_idx, row in enumerate(cells):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if r_idx == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)


def per_subject_table(report: dict) -> str:
    rows = [(r["subject"], f"{100 * r['acc']:.2f}", f"{100 * r['f1']:.2f}")
            for r in report["per_subject"]]
    rows.append(("Average", f"{100 * report['acc']:.2f}", f"{100 * report['f1']:.2f}"))
    return format_table(("Subject", "Acc", "F1"), rows)


def settings_table(rows: list) -> str:
    body = [(r["setting"], f"{100 * r['acc']:.2f}", f"{100 * r['f1']:.2f}") for r in rows]
    return format_table(("Setting", "Acc", "F1"), body)


def write_per_subject_csv(report: dict, path):
    path = Path(path)
    with path.open("w") as fh:
        fh.write("subject,segments,acc,f1\n")
        for r in report["per_subject"]:
            fh.write(f"{r['subject']},{r['segments']},{r['acc']:.6f},{r['f1']:.6f}\n")
        fh.write(f"average,{report['num_segments']},{report['acc']:.6f},{report['f1']:.6f}\n")
    return path


def write_settings_csv(rows: list, path):
    path = Path(path)
    with path.open("w") as fh:
        fh.write("setting,acc,f1\n")
        for r in rows:
            fh.write(f"{r['setting']},{r['acc']:.6f},{r['f1']:.6f}\n")
    return path


def plot_confusion(report: dict, out_path, normalize: bool = True):
    """Render the confusion matrix of a report to PNG/SVG (by extension)."""
    matrix = np.asarray(report["confusion"], dtype=float)
    names = report.get("class_names") or [str(i) for i in range(matrix.shape[0])]
    shown = matrix.copy()
    if normalize:
        row_sums = shown.sum(axis=1, keepdims=True)
        shown = np.divide(shown, row_sums, out=np.zeros_like(shown), where=row_sums > 0)
    fig, ax = plt.subplots(figsize=(1.1 * len(names) + 2, 1.0 * len(names) + 1.5))
    im = ax.imshow(shown, cmap="Blues", vmin=0.0, vmax=shown.max() or 1.0)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    title = f"{report.get('dataset', '')} {report.get('split', '')}".strip()
    ax.set_title(f"Confusion ({title})" if title else "Confusion")
    threshold = 0.6 * (shown.max() or 1.0)
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            text = f"{shown[i, j]:.2f}" if normalize else f"{int(matrix[i, j])}"
            color = "white" if shown[i, j] > threshold else "black"
            ax.text(j, i, text, ha="center", va="center", color=color, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def aggregate_runs(run_dirs) -> dict:
    """Collect report.json + config from run directories.

    Returns per-subject rows averaged across runs of the same setting, and
    one settings row per run for the comparison table.
    """
    runs = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        report_path = run_dir / "report.json"
        if not report_path.exists():
            raise FileNotFoundError(f"no report.json in {run_dir}")
        report = json.loads(report_path.read_text())
        meta_path = run_dir / "checkpoint" / "meta.json"
        setting = run_dir.name
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            from .trainer import TrainConfig
            setting = TrainConfig.from_dict(meta["config"]).variant_name()
        runs.append({"dir": str(run_dir), "setting": setting, "report": report})

    subject_acc: dict = {}
    for run in runs:
        for row in run["report"]["per_subject"]:
            subject_acc.setdefault(row["subject"], []).append((row["acc"], row["f1"]))
    per_subject = [
        {"subject": s,
         "acc": float(np.mean([a for a, _ in vals])),
         "f1": float(np.mean([f for _, f in vals])),
         "segments": 0}
        for s, vals in sorted(subject_acc.items())
    ]
    settings_rows = [{"setting": run["setting"], "acc": run["report"]["acc"],
                      "f1": run["report"]["f1"]} for run in runs]
    overall = {
        "acc": float(np.mean([r["report"]["acc"] for r in runs])),
        "f1": float(np.mean([r["report"]["f1"] for r in runs])),
        "per_subject": per_subject,
        "num_segments": sum(r["report"]["num_segments"] for r in runs),
    }
    return {"runs": runs, "per_subject_report": overall, "settings": settings_rows}
