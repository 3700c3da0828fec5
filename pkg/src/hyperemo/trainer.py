"""End-to-end training: dialogue batching, optimisation, checkpoints,
subject-wise evaluation, and ablation sweeps.

The batching unit is the dialogue: a dialogue's segments must travel
together because the fusion hypergraph spans all of them, so batch_size
counts dialogues, not segments. Training is deterministic under the config
seed; evaluation never mutates parameters and never applies dropout.

Checkpoint layout (directory):

    checkpoint/params.f32   all named parameters, concatenated float32 LE
    checkpoint/optim.f32    Adam exp_avg then exp_avg_sq per parameter
    checkpoint/meta.json    parameter manifest, config echo, dims, epoch

History is JSON lines, one record per epoch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import classifier as clf
from .data import DatasetManifest, SegmentRef, Split, load_manifest, load_segment, split_all_subjects
from .eeg_encoder import EEGEncoder, EEGEncoderConfig
from .encoders import ModalityEncoders
from .hypergraph import AdaptiveHypergraphFusion

VALID_MODALITIES = ("eeg", "audio", "video")


class ConfigError(Exception):
    """Malformed training configuration."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message names the first offending tensor."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 40
    batch_size: int = 16          # dialogues per step
    dropout: float = 0.5
    l2_lambda: float = 1e-5
    embed_dim: int = 64           # d, shared embedding width
    d_k: int = 64
    balance_alpha: float = 0.5
    hypergraph_layers: int = 2
    transformer_depth: int = 1
    transformer_heads: int = 2
    transformer_dim: int = 64
    seed: int = 42
    split_seed: int | None = None
    test_fraction: float = 0.3
    modalities: tuple = VALID_MODALITIES
    no_intra_mca: bool = False
    no_inter_mca: bool = False
    no_node_weights: bool = False
    no_hyperedge_weights: bool = False
    dtype: str = "float32"
    eval_every: int = 1
    max_segments: int | None = None
    allow_unseen_subjects: bool = False
    tag: str = ""

    def __post_init__(self):
        self.modalities = tuple(m for m in VALID_MODALITIES if m in self.modalities)
        if not self.modalities:
            raise ConfigError("at least one modality required")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed is None else self.split_seed

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["modalities"] = list(self.modalities)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        if "modalities" in doc:
            doc["modalities"] = tuple(doc["modalities"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def variant_name(self) -> str:
        if self.tag:
            return self.tag
        flags = [name for name in ("no_intra_mca", "no_inter_mca",
                                   "no_node_weights", "no_hyperedge_weights")
                 if getattr(self, name)]
        parts = []
        if set(self.modalities) != set(VALID_MODALITIES):
            parts.append("+".join(self.modalities))
        parts.extend(flags)
        return " ".join(parts) if parts else "full"


@dataclass
class DialogueBatch:
    subject_id: str
    dialogue_id: str
    refs: list
    eeg: torch.Tensor | None
    audio: torch.Tensor | None
    video: torch.Tensor | None
    labels: torch.Tensor

    @property
    def num_segments(self) -> int:
        return len(self.refs)


class HyperEmoModel(nn.Module):
    """Pipeline: EEG encoder -> unimodal encoders -> hypergraph -> classifier."""

    def __init__(self, config: TrainConfig, manifest: DatasetManifest,
                 subjects=None, max_segments=None):
        super().__init__()
        self.config = config
        self.modalities = config.modalities
        subjects = list(manifest.subjects if subjects is None else subjects)
        if max_segments is None:
            max_segments = config.max_segments or max(
                (len(v) for v in manifest.dialogues().values()), default=1)
        self.max_segments = max_segments
        if "eeg" in self.modalities:
            self.eeg = EEGEncoder(EEGEncoderConfig(
                channels=manifest.num_channels,
                window_len=manifest.window_len,
                sampling_rate_hz=manifest.sampling_rate_hz,
                embed_dim=config.embed_dim, d_k=config.d_k,
                transformer_depth=config.transformer_depth,
                transformer_heads=config.transformer_heads,
                transformer_dim=config.transformer_dim,
                balance_alpha=config.balance_alpha,
                use_intra_attention=not config.no_intra_mca,
                use_inter_attention=not config.no_inter_mca,
                allow_unseen_subjects=config.allow_unseen_subjects,
            ), subjects=subjects)
        else:
            self.eeg = None
        self.encoders = ModalityEncoders(
            channels=manifest.num_channels, audio_dim=manifest.audio_dim,
            video_dim=manifest.video_dim, embed_dim=config.embed_dim,
            modalities=self.modalities)
        self.encoder_dropout = nn.Dropout(config.dropout)
        self.hypergraph = AdaptiveHypergraphFusion(
            max_segments=max_segments, modalities=self.modalities,
            layers=config.hypergraph_layers,
            learn_node_weights=not config.no_node_weights,
            learn_edge_weights=not config.no_hyperedge_weights)
        self.classifier = clf.ClassifierHead(
            in_dim=len(self.modalities) * config.embed_dim,
            num_classes=manifest.num_classes, dropout=config.dropout)
        self.num_classes = manifest.num_classes
        self.to(config.torch_dtype)

    def forward(self, dialogues: list, collect: bool = False):
        """Logits for every segment of every dialogue, in batch order.

        With ``collect`` the per-modality embeddings and fused features are
        returned alongside, for export and inspection.
        """
        sizes = [d.num_segments for d in dialogues]
        inputs = {}
        if "eeg" in self.modalities:
            eeg_all = torch.cat([d.eeg for d in dialogues], dim=0)
            subject_ids = [d.subject_id for d in dialogues for _ in range(d.num_segments)]
            eeg_out = self.eeg(eeg_all, subject_ids)
            inputs["eeg"] = eeg_out.normalized
        else:
            eeg_out = None
        if "audio" in self.modalities:
            inputs["audio"] = torch.cat([d.audio for d in dialogues], dim=0)
        if "video" in self.modalities:
            inputs["video"] = torch.cat([d.video for d in dialogues], dim=0)

        embeddings = self.encoders(inputs)
        dropped = {m: self.encoder_dropout(v) for m, v in embeddings.items()}

        fused_rows = []
        offset = 0
        for size in sizes:
            nodes = torch.cat([dropped[m][offset:offset + size] for m in self.modalities], dim=0)
            fused_rows.append(self.hypergraph(nodes, size))
            offset += size
        fused = torch.cat(fused_rows, dim=0)
        logits, hidden = self.classifier(fused)
        if not collect:
            return logits
        return logits, {
            "embeddings": {m: v.detach() for m, v in embeddings.items()},
            "fused": fused.detach(),
            "hidden": hidden.detach(),
            "eeg_projected": None if eeg_out is None else eeg_out.projected.detach(),
            "band_weights": None if eeg_out is None else eeg_out.band_weights,
        }


# ---------------------------------------------------------------------------
# data marshalling
# ---------------------------------------------------------------------------

def load_dialogues(manifest: DatasetManifest, refs=None,
                   modalities=VALID_MODALITIES, dtype=torch.float32) -> list:
    """Materialise dialogue tensors for a ref subset, sorted for determinism."""
    groups = manifest.dialogues(refs)
    out = []
    for subject, dialogue in sorted(groups):
        members = groups[(subject, dialogue)]
        segs = [load_segment(manifest, r) for r in members]
        out.append(DialogueBatch(
            subject_id=subject, dialogue_id=dialogue, refs=members,
            eeg=(torch.tensor(np.stack([s.eeg for s in segs]), dtype=dtype)
                 if "eeg" in modalities else None),
            audio=(torch.tensor(np.stack([s.audio for s in segs]), dtype=dtype)
                   if "audio" in modalities else None),
            video=(torch.tensor(np.stack([s.video for s in segs]), dtype=dtype)
                   if "video" in modalities else None),
            labels=torch.tensor([s.label.class_index for s in segs], dtype=torch.long),
        ))
    return out


def _batched(dialogues, batch_size):
    for lo in range(0, len(dialogues), batch_size):
        yield dialogues[lo:lo + batch_size]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def predict(model: HyperEmoModel, dialogues: list, batch_size: int = 16):
    """Eval-mode predictions: (pred, true, subject_id) per segment."""
    was_training = model.training
    model.eval()
    preds, labels, subjects = [], [], []
    with torch.no_grad():
        for chunk in _batched(dialogues, batch_size):
            logits = model(chunk)
            preds.append(logits.argmax(dim=-1).cpu().numpy())
            labels.append(torch.cat([d.labels for d in chunk]).numpy())
            for d in chunk:
                subjects.extend([d.subject_id] * d.num_segments)
    if was_training:
        model.train()
    return np.concatenate(preds), np.concatenate(labels), subjects


def evaluate(model: HyperEmoModel, dialogues: list, manifest: DatasetManifest,
             split_name: str = "test", batch_size: int = 16) -> dict:
    """Full evaluation report: overall, per-class, confusion, per-subject."""
    preds, labels, subjects = predict(model, dialogues, batch_size)
    overall = clf.metrics(preds, labels, manifest.num_classes)
    per_subject = []
    for subject in sorted(set(subjects)):
        mask = np.array([s == subject for s in subjects])
        sub = clf.metrics(preds[mask], labels[mask], manifest.num_classes)
        per_subject.append({"subject": subject, "segments": int(mask.sum()),
                            "acc": sub["acc"], "f1": sub["f1"]})
    return {
        "dataset": manifest.name,
        "split": split_name,
        "num_segments": int(labels.size),
        "acc": overall["acc"],
        "f1": overall["f1"],
        "f1_macro": overall["f1_macro"],
        "per_class_f1": overall["per_class_f1"],
        "class_names": manifest.class_names,
        "confusion": overall["confusion"],
        "per_subject": per_subject,
    }


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: HyperEmoModel
    optimizer: torch.optim.Adam
    config: TrainConfig
    history: list
    split: Split
    report: dict
    out_dir: Path | None = None


def _first_nonfinite(model: HyperEmoModel, loss) -> str:
    if not torch.isfinite(loss):
        for name, param in model.named_parameters():
            if not torch.isfinite(param).all():
                return f"parameter {name}"
            if param.grad is not None and not torch.isfinite(param.grad).all():
                return f"gradient of {name}"
        return "loss"
    return ""


def train(config: TrainConfig, manifest: DatasetManifest,
          out_dir=None, log=None) -> TrainResult:
    """Train on a subject-wise split of ``manifest`` under ``config``.

    Deterministic for a fixed config: batch order, dropout, and parameter
    init all derive from the config seed. Raises TrainingDiverged if the
    loss goes non-finite, naming the first bad tensor.
    """
    torch.manual_seed(config.seed)
    split = split_all_subjects(manifest, config.test_fraction, config.effective_split_seed())
    dtype = config.torch_dtype
    train_dialogues = load_dialogues(manifest, split.train, config.modalities, dtype)
    test_dialogues = load_dialogues(manifest, split.test, config.modalities, dtype)
    model = HyperEmoModel(config, manifest)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    out_dir = Path(out_dir) if out_dir is not None else None
    history_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        history_file = (out_dir / "history.jsonl").open("w")

    history = []
    try:
        for epoch in range(1, config.epochs + 1):
            model.train()
            order = np.random.default_rng((config.seed, epoch)).permutation(len(train_dialogues))
            epoch_losses = []
            for lo in range(0, len(order), config.batch_size):
                batch = [train_dialogues[i] for i in order[lo:lo + config.batch_size]]
                labels = torch.cat([d.labels for d in batch])
                optimizer.zero_grad(set_to_none=True)
                logits = model(batch)
                loss = clf.training_loss(logits, labels, model.parameters(), config.l2_lambda)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}: first bad tensor is "
                        f"{_first_nonfinite(model, loss) or 'loss'}")
                loss.backward()
                optimizer.step()
                epoch_losses.append(loss.item())

            record = {"epoch": epoch, "train_loss": float(np.mean(epoch_losses))}
            if config.eval_every and (epoch % config.eval_every == 0 or epoch == config.epochs):
                train_pred, train_true, _ = predict(model, train_dialogues, config.batch_size)
                test_pred, test_true, _ = predict(model, test_dialogues, config.batch_size)
                record["train_acc"] = clf.metrics(train_pred, train_true, model.num_classes)["acc"]
                test_metrics = clf.metrics(test_pred, test_true, model.num_classes)
                record["eval_acc"] = test_metrics["acc"]
                record["eval_f1"] = test_metrics["f1"]
            history.append(record)
            if history_file is not None:
                history_file.write(json.dumps(record, sort_keys=True) + "\n")
                history_file.flush()
            if log is not None:
                log(record)
    finally:
        if history_file is not None:
            history_file.close()

    report = evaluate(model, test_dialogues, manifest, "test", config.batch_size)
    result = TrainResult(model=model, optimizer=optimizer, config=config,
                         history=history, split=split, report=report, out_dir=out_dir)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint", model, optimizer, config, manifest,
                        epoch=config.epochs)
        (out_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return result


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt_dir, model: HyperEmoModel, optimizer, config: TrainConfig,
                    manifest: DatasetManifest, epoch: int) -> Path:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    names, shapes, offsets = [], [], []
    chunks = []
    offset = 0
    for name, param in model.named_parameters():
        flat = param.detach().cpu().numpy().astype("<f4").ravel()
        names.append(name)
        shapes.append(list(param.shape))
        offsets.append(offset)
        offset += flat.size
        chunks.append(flat)
    np.concatenate(chunks).tofile(ckpt_dir / "params.f32")

    optim_meta = None
    state = optimizer.state if optimizer is not None else {}
    if optimizer is not None and any(len(state.get(p, {})) for p in model.parameters()):
        optim_chunks = []
        steps = {}
        for name, param in model.named_parameters():
            s = state.get(param, {})
            if s:
                steps[name] = float(s["step"])
                optim_chunks.append(s["exp_avg"].detach().cpu().numpy().astype("<f4").ravel())
                optim_chunks.append(s["exp_avg_sq"].detach().cpu().numpy().astype("<f4").ravel())
            else:
                steps[name] = 0.0
                zeros = np.zeros(param.numel(), dtype="<f4")
                optim_chunks.extend([zeros, zeros])
        np.concatenate(optim_chunks).tofile(ckpt_dir / "optim.f32")
        optim_meta = {"type": "adam", "lr": config.learning_rate, "steps": steps}

    meta = {
        "format": 1,
        "epoch": epoch,
        "config": config.to_dict(),
        "dims": {
            "name": manifest.name,
            "sampling_rate_hz": manifest.sampling_rate_hz,
            "num_channels": manifest.num_channels,
            "window_len": manifest.window_len,
            "audio_dim": manifest.audio_dim,
            "video_dim": manifest.video_dim,
            "num_classes": manifest.num_classes,
            "class_names": manifest.class_names,
        },
        "subjects": sorted(model.eeg.subject_bank.index) if model.eeg is not None
                    else sorted(manifest.subjects),
        "max_segments": model.max_segments,
        "params": [{"name": n, "shape": s, "offset": o}
                   for n, s, o in zip(names, shapes, offsets)],
        "optimizer": optim_meta,
    }
    (ckpt_dir / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return ckpt_dir


class _ManifestDims:
    """Duck-typed stand-in for DatasetManifest when rebuilding from meta."""

    def __init__(self, dims, subjects):
        self.name = dims["name"]
        self.sampling_rate_hz = dims["sampling_rate_hz"]
        self.num_channels = dims["num_channels"]
        self.window_len = dims["window_len"]
        self.audio_dim = dims["audio_dim"]
        self.video_dim = dims["video_dim"]
        self.num_classes = dims["num_classes"]
        self.class_names = dims["class_names"]
        self.subjects = subjects

    def dialogues(self, refs=None):
        return {}


def load_checkpoint(ckpt_dir, with_optimizer: bool = False):
    """Rebuild (model, config, meta) from a checkpoint directory."""
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no checkpoint meta at {meta_path}")
    meta = json.loads(meta_path.read_text())
    config = TrainConfig.from_dict(meta["config"])
    dims = _ManifestDims(meta["dims"], meta["subjects"])
    model = HyperEmoModel(config, dims, subjects=meta["subjects"],
                          max_segments=meta["max_segments"])
    blob = np.fromfile(ckpt_dir / "params.f32", dtype="<f4")
    params = dict(model.named_parameters())
    with torch.no_grad():
        for entry in meta["params"]:
            shape = entry["shape"]
            size = int(np.prod(shape)) if shape else 1
            values = blob[entry["offset"]:entry["offset"] + size].reshape(shape)
            if entry["name"] not in params:
                raise ConfigError(f"checkpoint parameter {entry['name']} missing from model")
            params[entry["name"]].copy_(torch.tensor(values, dtype=model.config.torch_dtype))
    optimizer = None
    if with_optimizer:
        optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
        if meta.get("optimizer"):
            optim_blob = np.fromfile(ckpt_dir / "optim.f32", dtype="<f4")
            cursor = 0
            for entry in meta["params"]:
                param = params[entry["name"]]
                size = param.numel()
                exp_avg = optim_blob[cursor:cursor + size].reshape(entry["shape"] or [1])
                cursor += size
                exp_avg_sq = optim_blob[cursor:cursor + size].reshape(entry["shape"] or [1])
                cursor += size
                optimizer.state[param] = {
                    "step": torch.tensor(meta["optimizer"]["steps"][entry["name"]]),
                    "exp_avg": torch.tensor(exp_avg, dtype=model.config.torch_dtype).view_as(param),
                    "exp_avg_sq": torch.tensor(exp_avg_sq, dtype=model.config.torch_dtype).view_as(param),
                }
    return model, config, meta


def resolve_split(manifest: DatasetManifest, spec: str, config: TrainConfig):
    """Turn a split spec string into (name, refs).

    Grammar: "all" | "train" | "test" | "train:FRACTION:SEED" | "test:FRACTION:SEED".
    Bare train/test reuse the checkpoint config's fraction and seed.
    """
    if spec == "all":
        return "all", list(manifest.segments)
    parts = spec.split(":")
    side = parts[0]
    if side not in ("train", "test"):
        raise ConfigError(f"bad split spec {spec!r}")
    fraction = config.test_fraction
    seed = config.effective_split_seed()
    if len(parts) == 3:
        fraction, seed = float(parts[1]), int(parts[2])
    elif len(parts) != 1:
        raise ConfigError(f"bad split spec {spec!r}")
    split = split_all_subjects(manifest, fraction, seed)
    return side, (split.train if side == "train" else split.test)


def evaluate_checkpoint(ckpt_dir, manifest: DatasetManifest, split_spec: str = "test") -> dict:
    model, config, _ = load_checkpoint(ckpt_dir)
    name, refs = resolve_split(manifest, split_spec, config)
    dialogues = load_dialogues(manifest, refs, config.modalities, config.torch_dtype)
    return evaluate(model, dialogues, manifest, name, config.batch_size)


# ---------------------------------------------------------------------------
# ablations and embedding export
# ---------------------------------------------------------------------------

ABLATION_FLAGS = ("no_intra_mca", "no_inter_mca", "no_node_weights", "no_hyperedge_weights")
MODALITY_VARIANTS = {"eeg": ("eeg",), "audio": ("audio",), "video": ("video",)}


def ablation_config(base: TrainConfig, variant: str) -> TrainConfig:
    doc = base.to_dict()
    doc["tag"] = variant
    if variant == "full":
        pass
    elif variant in ABLATION_FLAGS:
        doc[variant] = True
    elif variant == "no_both_mca":
        doc["no_intra_mca"] = True
        doc["no_inter_mca"] = True
    elif variant == "no_both_weights":
        doc["no_node_weights"] = True
        doc["no_hyperedge_weights"] = True
    elif variant in MODALITY_VARIANTS:
        doc["modalities"] = list(MODALITY_VARIANTS[variant])
    else:
        raise ConfigError(f"unknown ablation variant {variant!r}")
    return TrainConfig.from_dict(doc)


def run_ablation(config: TrainConfig, manifest: DatasetManifest,
                 variants=None, out_dir=None, log=None) -> dict:
    """Train each variant with the shared seed; emit a comparison table."""
    if variants is None:
        variants = ("full",) + ABLATION_FLAGS
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    for variant in variants:
        cfg = ablation_config(config, variant)
        run_out = out_dir / variant.replace(" ", "_") if out_dir is not None else None
        result = train(cfg, manifest, out_dir=run_out, log=log)
        rows.append({"setting": variant, "acc": result.report["acc"],
                     "f1": result.report["f1"]})
    table = {"rows": rows, "seed": config.seed, "dataset": manifest.name}
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "ablation.json").write_text(json.dumps(table, indent=1, sort_keys=True) + "\n")
    return table


def export_embeddings(model: HyperEmoModel, dialogues: list, out_path,
                      batch_size: int = 16) -> int:
    """Write per-segment modality embeddings and fused features as CSV.

    Rows: kind,subject,dialogue,position,label,v0..; vector tails shorter
    than the widest kind are left blank.
    """
    model.eval()
    rows = []
    width = 0
    with torch.no_grad():
        for chunk in _batched(dialogues, batch_size):
            _, aux = model(chunk, collect=True)
            offset = 0
            for d in chunk:
                for i, ref in enumerate(d.refs):
                    idx = offset + i
                    kinds = {m: aux["embeddings"][m][idx] for m in model.modalities}
                    kinds["fused"] = aux["fused"][idx]
                    for kind, vec in kinds.items():
                        vals = vec.cpu().numpy().tolist()
                        width = max(width, len(vals))
                        rows.append((kind, d.subject_id, d.dialogue_id, ref.position,
                                     int(d.labels[i]), vals))
                offset += d.num_segments
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w") as fh:
        header = ["kind", "subject", "dialogue", "position", "label"]
        header += [f"v{i}" for i in range(width)]
        fh.write(",".join(header) + "\n")
        for kind, subject, dialogue, position, label, vals in rows:
            cells = [kind, subject, dialogue, str(position), str(label)]
            cells += [f"{v:.7g}" for v in vals]
            cells += [""] * (width - len(vals))
            fh.write(",".join(cells) + "\n")
    return len(rows)
