"""Multimodal conversational emotion recognition.

Adaptive EEG encoding (subject transform, channel transformer, band-wise
DE/PSD mutual-cross attention, adaptive band reconstruction), unimodal
encoders into a shared space, and hypergraph fusion across modalities and
time, trained end to end with a two-layer classifier.
"""

from .data import (
    ConversationSegment,
    DatasetManifest,
    EmotionLabel,
    SegmentRef,
    Split,
    load_manifest,
    load_segment,
    make_eav_stub,
    make_synthetic_dataset,
    save_manifest,
    segment_utterance,
    split_all_subjects,
    split_subject_wise,
    window_trial_overlapping,
)
from .eeg_encoder import EEGEncoder, EEGEncoderConfig
from .gradcheck import gradient_check, gradient_check_all
from .hypergraph import (
    AdaptiveHypergraphFusion,
    HypergraphStructure,
    build_hypergraph,
    fuse_concat,
    hypergraph_convolve,
)
from .trainer import (
    HyperEmoModel,
    TrainConfig,
    evaluate,
    evaluate_checkpoint,
    load_checkpoint,
    load_dialogues,
    run_ablation,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
