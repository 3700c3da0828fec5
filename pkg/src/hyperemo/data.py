"""Dataset model: segments, manifests, splits, segmentation, synthetic data.

On-disk layout (language-neutral, bit-exact):

    <root>/manifest.json
    <root>/segments/<subject>/<dialogue>/<position>.eeg.f32   C*L float32 LE, row-major
    <root>/segments/<subject>/<dialogue>/<position>.aud.f32   d_a float32 LE
    <root>/segments/<subject>/<dialogue>/<position>.vid.f32   d_v float32 LE

The manifest declares all shapes; blobs are raw little-endian float32.
Manifests and segments are immutable after load. Generation and splitting
are pure functions of their arguments and a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

MODALITY_SUFFIX = {"eeg": ".eeg.f32", "audio": ".aud.f32", "video": ".vid.f32"}


class DatasetError(Exception):
    """Manifest/segment validation failure (missing files, shape mismatch)."""


class SplitError(Exception):
    """A requested split cannot satisfy its stratification contract."""


@dataclass(frozen=True)
class EmotionLabel:
    class_index: int
    class_name: str


@dataclass(frozen=True)
class SegmentRef:
    """Manifest entry locating one segment and its label."""

    subject_id: str
    dialogue_id: str
    position: int
    label: int

    def rel_dir(self) -> str:
        return f"segments/{self.subject_id}/{self.dialogue_id}"

    def path(self, root: Path, modality: str) -> Path:
        return Path(root) / self.rel_dir() / f"{self.position}{MODALITY_SUFFIX[modality]}"


@dataclass
class ConversationSegment:
    """One fixed-interval fragment with all three modality payloads."""

    subject_id: str
    dialogue_id: str
    position: int
    eeg: np.ndarray        # (C, L) float32
    audio: np.ndarray      # (d_a,) float32
    video: np.ndarray      # (d_v,) float32
    label: EmotionLabel


@dataclass
class DatasetManifest:
    name: str
    sampling_rate_hz: float
    num_channels: int      # C
    window_len: int        # L
    audio_dim: int         # d_a
    video_dim: int         # d_v
    num_classes: int
    class_names: list[str]
    subjects: list[str]
    segments: list[SegmentRef]
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.class_names) != self.num_classes:
            raise DatasetError("class_names length must equal num_classes")
        for ref in self.segments:
            if not 0 <= ref.label < self.num_classes:
                raise DatasetError(f"label {ref.label} out of range for {ref}")

    def label_of(self, ref: SegmentRef) -> EmotionLabel:
        return EmotionLabel(ref.label, self.class_names[ref.label])

    def dialogues(self, refs=None) -> dict:
        """Group refs by (subject, dialogue), positions sorted ascending."""
        groups: dict = {}
        for ref in (self.segments if refs is None else refs):
            groups.setdefault((ref.subject_id, ref.dialogue_id), []).append(ref)
        for key in groups:
            groups[key].sort(key=lambda r: r.position)
        return groups


@dataclass
class Split:
    train: list[SegmentRef]
    test: list[SegmentRef]
    seed: int


# ---------------------------------------------------------------------------
# segmentation protocols
# ---------------------------------------------------------------------------

def segment_utterance(signal: np.ndarray, delta_t_s: float, rate_hz: float) -> list[np.ndarray]:
    """Cut a (C, T) stream into contiguous non-overlapping (C, L) windows.

    L = delta_t_s * rate_hz (must round to an integer >= 1); a trailing
    remainder shorter than L is dropped. T < L yields an empty list.
    """
    if delta_t_s <= 0 or rate_hz <= 0:
        raise ValueError("delta_t_s and rate_hz must be positive")
    raw_len = delta_t_s * rate_hz
    window_len = int(round(raw_len))
    if window_len < 1 or abs(raw_len - window_len) > 1e-6:
        raise ValueError(f"delta_t * rate = {raw_len} does not give an integer window")
    total = signal.shape[-1]
    count = total // window_len
    return [np.ascontiguousarray(signal[..., k * window_len:(k + 1) * window_len])
            for k in range(count)]


def window_trial_overlapping(trial: np.ndarray, window_len: int, num_windows: int) -> list[np.ndarray]:
    """Evenly spaced overlapping windows covering a (C, T) trial.

    Start offsets are round(k*(T-window_len)/(num_windows-1)); a single
    window starts at 0. Used to expand short-trial datasets by a fixed
    factor while keeping every window inside the trial.
    """
    total = trial.shape[-1]
    if window_len > total:
        raise ValueError(f"window_len {window_len} exceeds trial length {total}")
    if num_windows < 1:
        raise ValueError("num_windows must be >= 1")
    if num_windows == 1:
        starts = [0]
    else:
        span = total - window_len
        starts = [int(round(k * span / (num_windows - 1))) for k in range(num_windows)]
    return [np.ascontiguousarray(trial[..., s:s + window_len]) for s in starts]


# ---------------------------------------------------------------------------
# manifest persistence
# ---------------------------------------------------------------------------

def save_manifest(manifest: DatasetManifest, root) -> Path:
    """Write manifest.json under ``root``; segment blobs are written separately."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "name": manifest.name,
        "sampling_rate_hz": manifest.sampling_rate_hz,
        "num_channels": manifest.num_channels,
        "window_len": manifest.window_len,
        "audio_dim": manifest.audio_dim,
        "video_dim": manifest.video_dim,
        "num_classes": manifest.num_classes,
        "class_names": manifest.class_names,
        "subjects": manifest.subjects,
        "segments": [asdict(ref) for ref in manifest.segments],
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_manifest(root, validate: bool = True) -> DatasetManifest:
    """Load manifest.json and (optionally) check every referenced blob."""
    root = Path(root)
    path = root / "manifest.json" if root.is_dir() else root
    root = path.parent
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest is not valid JSON: {exc}") from exc
    required = {"name", "sampling_rate_hz", "num_channels", "window_len", "audio_dim",
                "video_dim", "num_classes", "class_names", "subjects", "segments"}
    missing = required - doc.keys()
    if missing:
        raise DatasetError(f"manifest missing keys: {sorted(missing)}")
    manifest = DatasetManifest(
        name=doc["name"],
        sampling_rate_hz=float(doc["sampling_rate_hz"]),
        num_channels=int(doc["num_channels"]),
        window_len=int(doc["window_len"]),
        audio_dim=int(doc["audio_dim"]),
        video_dim=int(doc["video_dim"]),
        num_classes=int(doc["num_classes"]),
        class_names=list(doc["class_names"]),
        subjects=list(doc["subjects"]),
        segments=[SegmentRef(s["subject_id"], s["dialogue_id"], int(s["position"]), int(s["label"]))
                  for s in doc["segments"]],
        root=root,
    )
    if validate:
        _validate_layout(manifest)
    return manifest


def _validate_layout(manifest: DatasetManifest):
    sizes = {
        "eeg": manifest.num_channels * manifest.window_len * 4,
        "audio": manifest.audio_dim * 4,
        "video": manifest.video_dim * 4,
    }
    positions: dict = {}
    for ref in manifest.segments:
        if ref.subject_id not in manifest.subjects:
            raise DatasetError(f"segment references unknown subject {ref.subject_id}")
        positions.setdefault((ref.subject_id, ref.dialogue_id), []).append(ref.position)
        for modality, nbytes in sizes.items():
            blob = ref.path(manifest.root, modality)
            if not blob.exists():
                raise DatasetError(f"missing blob {blob}")
            actual = blob.stat().st_size
            if actual != nbytes:
                raise DatasetError(
                    f"{blob} holds {actual} bytes, manifest shape implies {nbytes}")
    for key, pos in positions.items():
        if sorted(pos) != list(range(len(pos))):
            raise DatasetError(f"dialogue {key} positions are not contiguous from 0")


def load_segment(manifest: DatasetManifest, ref: SegmentRef) -> ConversationSegment:
    if manifest.root is None:
        raise DatasetError("manifest has no root directory; load or save it first")
    eeg = np.fromfile(ref.path(manifest.root, "eeg"), dtype="<f4")
    if eeg.size != manifest.num_channels * manifest.window_len:
        raise DatasetError(f"eeg blob size mismatch for {ref}")
    eeg = eeg.reshape(manifest.num_channels, manifest.window_len)
    audio = np.fromfile(ref.path(manifest.root, "audio"), dtype="<f4")
    video = np.fromfile(ref.path(manifest.root, "video"), dtype="<f4")
    if audio.size != manifest.audio_dim or video.size != manifest.video_dim:
        raise DatasetError(f"vector blob size mismatch for {ref}")
    for arr, what in ((eeg, "eeg"), (audio, "audio"), (video, "video")):
        if not np.isfinite(arr).all():
            raise DatasetError(f"{what} blob for {ref} contains NaN/Inf")
    return ConversationSegment(
        subject_id=ref.subject_id, dialogue_id=ref.dialogue_id, position=ref.position,
        eeg=eeg, audio=audio, video=video, label=manifest.label_of(ref),
    )


def write_segment_blobs(root, ref: SegmentRef, eeg: np.ndarray,
                        audio: np.ndarray, video: np.ndarray):
    seg_dir = Path(root) / ref.rel_dir()
    seg_dir.mkdir(parents=True, exist_ok=True)
    for modality, arr in (("eeg", eeg), ("audio", audio), ("video", video)):
        arr.astype("<f4").tofile(ref.path(root, modality))


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def make_synthetic_dataset(out_dir, num_subjects: int, dialogues_per_subject: int,
                           segments_per_dialogue: int, num_classes: int,
                           num_channels: int = 8, window_len: int = 128,
                           audio_dim: int = 16, video_dim: int = 16,
                           class_separation: float = 1.0, seed: int = 0,
                           sampling_rate_hz: float = 128.0,
                           class_layout: str = "balanced",
                           name: str = "synthetic") -> DatasetManifest:
    """Generate a class-conditioned multimodal dataset on disk.

    EEG is band-limited noise whose per-band amplitude profile depends on
    the class (contrast scaled by ``class_separation``), mixed through a
    per-subject channel matrix. Audio/video are unit-variance Gaussian
    clusters around class means scaled by ``class_separation``; at zero
    separation all classes are statistically identical.

    ``class_layout``: "balanced" cycles classes inside each dialogue
    (exact balance when num_classes divides segments_per_dialogue);
    "per_dialogue" makes each dialogue class-pure, cycling classes across
    dialogues (the shape of speaking-turn exports).

    Deterministic: a fixed seed yields byte-identical manifests and blobs.
    """
    for n, what in ((num_subjects, "num_subjects"), (dialogues_per_subject, "dialogues_per_subject"),
                    (segments_per_dialogue, "segments_per_dialogue"), (num_classes, "num_classes"),
                    (num_channels, "num_channels"), (window_len, "window_len"),
                    (audio_dim, "audio_dim"), (video_dim, "video_dim")):
        if n < 1:
            raise ValueError(f"{what} must be >= 1")
    if class_separation < 0:
        raise ValueError("class_separation must be >= 0")
    if class_layout not in ("balanced", "per_dialogue"):
        raise ValueError(f"unknown class_layout {class_layout!r}")

    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)

    # Class-conditioned structure, shared across subjects.
    freqs = np.fft.rfftfreq(window_len, d=1.0 / sampling_rate_hz)
    band_bins = _band_bin_masks(freqs)
    band_profiles = rng.uniform(0.0, 1.0, size=(num_classes, len(band_bins)))
    audio_means = class_separation * rng.standard_normal((num_classes, audio_dim))
    video_means = class_separation * rng.standard_normal((num_classes, video_dim))
    # Per-subject channel mixing close to identity.
    subjects = [f"s{idx:02d}" for idx in range(num_subjects)]
    mixing = {
        s: np.eye(num_channels) + 0.1 * rng.standard_normal((num_channels, num_channels)) / math.sqrt(num_channels)
        for s in subjects
    }

    refs = []
    for s_idx, subject in enumerate(subjects):
        for d_idx in range(dialogues_per_subject):
            dialogue = f"d{d_idx:03d}"
            if class_layout == "per_dialogue":
                labels = [(s_idx * dialogues_per_subject + d_idx) % num_classes] * segments_per_dialogue
            else:
                labels = [(d_idx + k) % num_classes for k in range(segments_per_dialogue)]
                rng.shuffle(labels)
            for position, label in enumerate(labels):
                amp = 1.0 + class_separation * band_profiles[label]
                eeg = _band_limited_noise(rng, num_channels, window_len, band_bins, amp)
                eeg = mixing[subject] @ eeg
                audio = audio_means[label] + rng.standard_normal(audio_dim)
                video = video_means[label] + rng.standard_normal(video_dim)
                ref = SegmentRef(subject, dialogue, position, int(label))
                write_segment_blobs(out_dir, ref, eeg, audio, video)
                refs.append(ref)

    manifest = DatasetManifest(
        name=name, sampling_rate_hz=sampling_rate_hz,
        num_channels=num_channels, window_len=window_len,
        audio_dim=audio_dim, video_dim=video_dim,
        num_classes=num_classes,
        class_names=[f"class{k}" for k in range(num_classes)],
        subjects=subjects, segments=refs, root=out_dir,
    )
    save_manifest(manifest, out_dir)
    return manifest


def _band_bin_masks(freqs: np.ndarray) -> list[np.ndarray]:
    edges = [(0.5, 4.0), (4.0, 8.0), (8.0, 13.0), (13.0, 30.0), (30.0, 50.0)]
    masks = []
    for i, (lo, hi) in enumerate(edges):
        if i == len(edges) - 1:
            masks.append((freqs >= lo) & (freqs <= hi))
        else:
            masks.append((freqs >= lo) & (freqs < hi))
    return masks


def _band_limited_noise(rng, num_channels, window_len, band_bins, band_amplitude):
    white = rng.standard_normal((num_channels, window_len))
    spectrum = np.fft.rfft(white, axis=-1)
    gain = np.zeros(spectrum.shape[-1])
    for mask, amp in zip(band_bins, band_amplitude):
        gain[mask] = amp
    return np.fft.irfft(spectrum * gain, n=window_len, axis=-1)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_subject_wise(manifest: DatasetManifest, subject_id: str,
                       test_fraction: float = 0.3, seed: int = 0) -> Split:
    """Stratified train/test split of one subject's segments.

    Whole dialogues are kept on one side when that still lands each class
    within one segment of its target test count; otherwise falls back to
    per-class segment sampling. Deterministic under the seed.
    """
    if subject_id not in manifest.subjects:
        raise KeyError(f"unknown subject {subject_id!r}")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    refs = [r for r in manifest.segments if r.subject_id == subject_id]
    if not refs:
        raise SplitError(f"subject {subject_id} has no segments")
    class_counts = np.bincount([r.label for r in refs], minlength=manifest.num_classes)
    for label, count in enumerate(class_counts):
        if 0 < count < 2:
            raise SplitError(
                f"class {label} has {count} segment(s) for {subject_id}; need >= 2 to stratify")
    present = [k for k, c in enumerate(class_counts) if c > 0]
    targets = {k: int(round(test_fraction * class_counts[k])) for k in present}
    # Never let a class be fully absent from either side.
    for k in present:
        targets[k] = min(max(targets[k], 1), int(class_counts[k]) - 1)

    rng = np.random.default_rng(seed)
    test = _dialogue_level_assignment(manifest, refs, targets, rng)
    if test is None:
        test = _segment_level_assignment(refs, targets, rng)
    test_keys = {(r.subject_id, r.dialogue_id, r.position) for r in test}
    train = [r for r in refs if (r.subject_id, r.dialogue_id, r.position) not in test_keys]
    if not train or not test:
        raise SplitError("empty split side")
    return Split(train=train, test=test, seed=seed)


def _dialogue_level_assignment(manifest, refs, targets, rng):
    """Greedy whole-dialogue picks; None when class targets can't be hit +/-1."""
    groups = manifest.dialogues(refs)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    remaining = dict(targets)
    test = []
    for idx in order:
        members = groups[keys[idx]]
        counts: dict = {}
        for r in members:
            counts[r.label] = counts.get(r.label, 0) + 1
        if all(remaining.get(lbl, 0) >= n for lbl, n in counts.items()):
            test.extend(members)
            for lbl, n in counts.items():
                remaining[lbl] -= n
        if all(v == 0 for v in remaining.values()):
            break
    if any(abs(v) > 1 for v in remaining.values()):
        return None
    if len(test) == len(refs) or not test:
        return None
    return test


def _segment_level_assignment(refs, targets, rng):
    by_class: dict = {}
    for r in refs:
        by_class.setdefault(r.label, []).append(r)
    test = []
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda r: (r.dialogue_id, r.position))
        picks = rng.permutation(len(members))[: targets[label]]
        test.extend(members[i] for i in sorted(picks))
    return test


def split_all_subjects(manifest: DatasetManifest, test_fraction: float = 0.3,
                       seed: int = 0) -> Split:
    """Union of per-subject stratified splits (one seed stream per subject)."""
    train: list[SegmentRef] = []
    test: list[SegmentRef] = []
    for offset, subject in enumerate(sorted(manifest.subjects)):
        part = split_subject_wise(manifest, subject, test_fraction, seed + offset)
        train.extend(part.train)
        test.extend(part.test)
    return Split(train=train, test=test, seed=seed)


# ---------------------------------------------------------------------------
# dataset adapters
# ---------------------------------------------------------------------------
#
# The real corpora ship as labelled speaking-turn exports; converting them
# into this layout is a renaming exercise, documented here and in the
# README rather than wired to licensed downloads:
#
# * EAV-style exports: 42 subjects, 30 EEG channels, 5 emotion classes
#   (neutral / anger / happy / sad / calm). Each 20 s speaking turn becomes
#   one dialogue; `segment_utterance(signal, 5.0, rate_hz)` yields its
#   positions 0..3. Audio/video feature vectors are stored per segment.
#   The sampling rate and per-subject counts are read from the export,
#   never hard-coded.
#
# * AFFEC-style exports: three-level (low/medium/high) arousal or valence
#   targets over four task framings, with EEG plus two vector modalities
#   (GSR and eye features stand in the audio/video slots). Short trials
#   are expanded with `window_trial_overlapping(trial, window_len, 5)`,
#   each window inheriting the trial label; the window length and count
#   are configuration, not constants.

EAV_CLASS_NAMES = ["neutral", "anger", "happy", "sad", "calm"]
AFFEC_LEVEL_NAMES = ["low", "medium", "high"]
AFFEC_TASKS = ("felt_arousal", "felt_valence", "perceived_arousal", "perceived_valence")


def make_eav_stub(out_dir, seed: int = 0, dialogues_per_subject: int = 5,
                  segments_per_dialogue: int = 4, window_len: int = 320,
                  sampling_rate_hz: float = 64.0, class_separation: float = 2.0,
                  audio_dim: int = 24, video_dim: int = 24) -> DatasetManifest:
    """Desk-scale stand-in with the EAV shape: 42 subjects, 30 channels,
    5 classes, class-pure dialogues of 4 segments (a 20 s turn cut into
    5 s windows)."""
    manifest = make_synthetic_dataset(
        out_dir, num_subjects=42, dialogues_per_subject=dialogues_per_subject,
        segments_per_dialogue=segments_per_dialogue, num_classes=5,
        num_channels=30, window_len=window_len, audio_dim=audio_dim,
        video_dim=video_dim, class_separation=class_separation, seed=seed,
        sampling_rate_hz=sampling_rate_hz, class_layout="per_dialogue",
        name="eav-stub")
    manifest.class_names = list(EAV_CLASS_NAMES)
    save_manifest(manifest, out_dir)
    return manifest


def make_affec_stub(out_dir, task: str = "felt_arousal", seed: int = 0,
                    num_subjects: int = 12, dialogues_per_subject: int = 7,
                    segments_per_dialogue: int = 5, window_len: int = 256,
                    sampling_rate_hz: float = 128.0,
                    class_separation: float = 2.0) -> DatasetManifest:
    """Desk-scale stand-in with the AFFEC shape: three-level labels for one
    of the four tasks; GSR/eye vectors occupy the audio/video slots. The
    factor-of-five expansion is reflected in segments_per_dialogue=5."""
    if task not in AFFEC_TASKS:
        raise ValueError(f"unknown AFFEC task {task!r}; choose from {AFFEC_TASKS}")
    manifest = make_synthetic_dataset(
        out_dir, num_subjects=num_subjects, dialogues_per_subject=dialogues_per_subject,
        segments_per_dialogue=segments_per_dialogue, num_classes=3,
        num_channels=32, window_len=window_len, audio_dim=12, video_dim=20,
        class_separation=class_separation, seed=seed,
        sampling_rate_hz=sampling_rate_hz, class_layout="per_dialogue",
        name=f"affec-stub-{task}")
    manifest.class_names = list(AFFEC_LEVEL_NAMES)
    save_manifest(manifest, out_dir)
    return manifest
