"""Unimodal encoders into the shared d-dimensional space.

Vector modalities (audio/video, or GSR/eye in three-level-label datasets)
get a single affine map. EEG windows go through a bidirectional GRU over
time with channels as step features; the final forward and backward hidden
states are concatenated and linearly mapped to d.
"""

from __future__ import annotations

import torch
import torch.nn as nn


class VectorEncoder(nn.Module):
    """Affine map from a fixed-length feature vector to the shared space."""

    def __init__(self, in_dim, embed_dim):
        super().__init__()
        self.in_dim = in_dim
        self.linear = nn.Linear(in_dim, embed_dim)

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected feature length {self.in_dim}, got {x.shape[-1]}")
        return self.linear(x)


class RecurrentEEGEncoder(nn.Module):
    """Bidirectional GRU over the time axis of a (B, C, L) window.

    Hidden size is d/2 per direction so the concatenated final states are
    d wide before the output map; embed_dim must therefore be even.
    """

    def __init__(self, channels, embed_dim):
        super().__init__()
        if embed_dim % 2:
            raise ValueError("embed_dim must be even for a bidirectional encoder")
        self.gru = nn.GRU(input_size=channels, hidden_size=embed_dim // 2,
                          batch_first=True, bidirectional=True)
        self.head = nn.Linear(embed_dim, embed_dim)

    def forward(self, x):
        if x.dim() != 3:
            raise ValueError("expected (B, C, L) input")
        steps = x.transpose(1, 2)                    # (B, L, C)
        _, final = self.gru(steps)                   # (2, B, d/2)
        merged = torch.cat([final[0], final[1]], dim=-1)
        return self.head(merged)


class ModalityEncoders(nn.Module):
    """Bundle of per-modality encoders keyed by modality name."""

    def __init__(self, channels, audio_dim, video_dim, embed_dim,
                 modalities=("eeg", "audio", "video")):
        super().__init__()
        self.modalities = tuple(modalities)
        mods = {}
        if "eeg" in self.modalities:
            mods["eeg"] = RecurrentEEGEncoder(channels, embed_dim)
        if "audio" in self.modalities:
            mods["audio"] = VectorEncoder(audio_dim, embed_dim)
        if "video" in self.modalities:
            mods["video"] = VectorEncoder(video_dim, embed_dim)
        self.by_modality = nn.ModuleDict(mods)

    def forward(self, inputs: dict) -> dict:
        return {mod: self.by_modality[mod](inputs[mod]) for mod in self.modalities}
