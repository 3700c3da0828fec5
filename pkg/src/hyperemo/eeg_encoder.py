"""Adaptive EEG encoder: subject transform, channel-axis transformer,
band-wise DE/PSD mutual-cross attention, and adaptive band reconstruction.

Stage order for a (B, C, L) window batch:

  1. subject_bank  - per-subject trainable channel-mixing matrix (identity
     initialised), one matrix per training subject.
  2. channel_tf    - transformer whose tokens are channels (whole series
     embedded per channel, no positional encoding); depth 0 is the identity.
  3. band features - one-sided FFT, five band masks, DE and PSD per band.
  4. intra_mca     - per band, bidirectional cross attention between the DE
     and PSD channel tokens, mean-pooled to a (B, d_k) band feature.
  5. inter_mca     - each band's query attends over all five band tokens
     built from shared key/value projections; residual added.
  6. fusion        - softmax band importance, per-channel sigmoid gains on
     the banded spectra, inverse FFT, layer norm, and a balance blend with
     the stage-2 output.
  7. proj          - layer norm plus a linear map into the shared embedding
     space (the normalized tensor also feeds the recurrent encoder).

Every sample's output depends only on that sample: attention runs across
channel/band tokens, never across the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .spectral import (
    BAND_ORDER,
    DEFAULT_BAND_EDGES,
    VARIANCE_FLOOR,
    band_masks,
    differential_entropy,
    power_spectral_density,
)


@dataclass
class EEGEncoderConfig:
    channels: int
    window_len: int
    sampling_rate_hz: float
    embed_dim: int = 64            # d, shared embedding space
    d_k: int = 64                  # band-feature width
    transformer_depth: int = 1
    transformer_heads: int = 2
    transformer_dim: int = 64
    balance_alpha: float = 0.5     # blend between reconstruction and pass-through
    variance_floor: float = VARIANCE_FLOOR
    use_intra_attention: bool = True
    use_inter_attention: bool = True
    allow_unseen_subjects: bool = False
    band_edges: dict = field(default_factory=lambda: dict(DEFAULT_BAND_EDGES))

    def __post_init__(self):
        self.balance_alpha = min(max(float(self.balance_alpha), 0.0), 1.0)


@dataclass
class EEGEncoderOutput:
    embedding: torch.Tensor            # (B, C, L) blended output
    passthrough: torch.Tensor          # (B, C, L) stage-2 output
    normalized: torch.Tensor           # (B, C, L) layer-normed embedding
    projected: torch.Tensor            # (B, d)
    band_weights: torch.Tensor | None  # (B, 5) simplex rows, None when alpha=0
    band_features: dict | None         # band -> (B, d_k) fused feature


class SubjectBank(nn.Module):
    """Per-subject channel-mixing matrices, identity initialised."""

    def __init__(self, subjects, channels, allow_unseen=False):
        super().__init__()
        self.index = {s: i for i, s in enumerate(sorted(subjects))}
        self.allow_unseen = allow_unseen
        self.mats = nn.ParameterList(
            nn.Parameter(torch.eye(channels)) for _ in self.index)
        self.register_buffer("fallback", torch.eye(channels), persistent=False)

    def forward(self, x, subject_ids):
        if len(subject_ids) != x.shape[0]:
            raise ValueError("one subject id per sample required")
        rows = []
        for sample, subject in zip(x, subject_ids):
            slot = self.index.get(subject)
            if slot is None:
                if not self.allow_unseen:
                    raise KeyError(f"unknown subject {subject!r}")
                rows.append(self.fallback.to(sample.dtype) @ sample)
            else:
                rows.append(self.mats[slot] @ sample)
        return torch.stack(rows, dim=0)


class ChannelAttentionLayer(nn.Module):
    """Pre-norm self-attention + feed-forward over channel tokens."""

    def __init__(self, dim, heads):
        super().__init__()
        if dim % heads:
            raise ValueError("transformer_dim must be divisible by heads")
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        b, t, dim = x.shape
        head_dim = dim // self.heads
        q, k, v = self.qkv(self.norm1(x)).chunk(3, dim=-1)
        q = q.view(b, t, self.heads, head_dim).transpose(1, 2)
        k = k.view(b, t, self.heads, head_dim).transpose(1, 2)
        v = v.view(b, t, self.heads, head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim)
        mixed = torch.softmax(scores, dim=-1) @ v
        mixed = mixed.transpose(1, 2).reshape(b, t, dim)
        x = x + self.attn_out(mixed)
        return x + self.ff(self.norm2(x))


class ChannelTransformer(nn.Module):
    """Self-attention across the channel axis; shape preserving, and the
    identity when depth is 0. Channels carry no positional encoding, so
    permuting input channels permutes the output identically."""

    def __init__(self, window_len, dim=64, depth=1, heads=2):
        super().__init__()
        self.depth = depth
        if depth > 0:
            self.in_proj = nn.Linear(window_len, dim)
            self.layers = nn.ModuleList(ChannelAttentionLayer(dim, heads) for _ in range(depth))
            self.out_proj = nn.Linear(dim, window_len)

    def forward(self, x):
        if self.depth == 0:
            return x
        h = self.in_proj(x)
        for layer in self.layers:
            h = layer(h)
        return x + self.out_proj(h)


class IntraBandAttention(nn.Module):
    """Bidirectional DE<->PSD cross attention over channel tokens.

    Each channel's scalar feature is embedded as value * learned per-channel
    vector; queries from one stream attend over the other stream's C tokens
    and the mean-pooled outputs of both directions are summed, giving one
    (B, d_k) feature that never mixes samples.
    """

    def __init__(self, channels, d_k):
        super().__init__()
        self.d_k = d_k
        bound = 1.0 / math.sqrt(channels)
        for name in ("w_qd", "w_kp", "w_vp", "w_qp", "w_kd", "w_vd"):
            self.register_parameter(
                name, nn.Parameter(torch.empty(channels, d_k).uniform_(-bound, bound)))

    @staticmethod
    def _tokens(values, table):
        # (B, C) scalars -> (B, C, d_k) tokens
        return values.unsqueeze(-1) * table.unsqueeze(0)

    def _cross(self, q, k, v):
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        return (torch.softmax(scores, dim=-1) @ v).mean(dim=1)

    def forward(self, de, psd):
        if de.shape != psd.shape:
            raise ValueError("DE and PSD features must share shape (B, C)")
        de_to_psd = self._cross(self._tokens(de, self.w_qd),
                                self._tokens(psd, self.w_kp),
                                self._tokens(psd, self.w_vp))
        psd_to_de = self._cross(self._tokens(psd, self.w_qp),
                                self._tokens(de, self.w_kd),
                                self._tokens(de, self.w_vd))
        return de_to_psd + psd_to_de


class IntraBandProjection(nn.Module):
    """Attention-free ablation: concatenate DE and PSD, project to d_k."""

    def __init__(self, channels, d_k):
        super().__init__()
        self.proj = nn.Linear(2 * channels, d_k)

    def forward(self, de, psd):
        return self.proj(torch.cat([de, psd], dim=-1))


class InterBandAttention(nn.Module):
    """Each band's query attends over all five band tokens.

    Keys and values come from shared (5*d_k, d_k) matrices whose row blocks
    slice out one band each, so every band contributes one key/value token
    per sample; outputs are added back residually by the caller.
    """

    def __init__(self, d_k, num_bands=5):
        super().__init__()
        self.d_k = d_k
        self.num_bands = num_bands
        bound_q = 1.0 / math.sqrt(d_k)
        bound_kv = 1.0 / math.sqrt(num_bands * d_k)
        self.w_q = nn.ParameterList(
            nn.Parameter(torch.empty(d_k, d_k).uniform_(-bound_q, bound_q))
            for _ in range(num_bands))
        self.w_k = nn.Parameter(torch.empty(num_bands * d_k, d_k).uniform_(-bound_kv, bound_kv))
        self.w_v = nn.Parameter(torch.empty(num_bands * d_k, d_k).uniform_(-bound_kv, bound_kv))

    def forward(self, band_feats):
        if len(band_feats) != self.num_bands:
            raise ValueError(f"expected {self.num_bands} band features")
        stacked = torch.stack(band_feats, dim=1)                    # (B, 5, d_k)
        k_blocks = self.w_k.view(self.num_bands, self.d_k, self.d_k)
        v_blocks = self.w_v.view(self.num_bands, self.d_k, self.d_k)
        keys = torch.einsum("bnd,nde->bne", stacked, k_blocks)      # (B, 5, d_k)
        values = torch.einsum("bnd,nde->bne", stacked, v_blocks)
        outputs = []
        for idx, feat in enumerate(band_feats):
            query = feat @ self.w_q[idx]                            # (B, d_k)
            scores = torch.einsum("bd,bnd->bn", query, keys) / math.sqrt(self.d_k)
            attended = torch.einsum("bn,bnd->bd", torch.softmax(scores, dim=-1), values)
            outputs.append(feat + attended)
        return outputs


class BandFusion(nn.Module):
    """Softmax band importance, spectral gain reconstruction, balance blend."""

    def __init__(self, d_k, channels, balance_alpha=0.5):
        super().__init__()
        self.balance_alpha = balance_alpha
        bound = 1.0 / math.sqrt(d_k)
        self.importance = nn.Parameter(torch.empty(d_k).uniform_(-bound, bound))
        self.gain = nn.Parameter(torch.empty(channels, d_k).uniform_(-bound, bound))

    def band_weights(self, band_feats):
        scores = torch.stack([feat @ self.importance for feat in band_feats], dim=1)
        return torch.softmax(scores, dim=1)                         # (B, 5)

    def forward(self, band_feats, banded_spectra, passthrough):
        weights = self.band_weights(band_feats)
        combined = torch.zeros_like(banded_spectra[0])
        for idx, (feat, coeffs) in enumerate(zip(band_feats, banded_spectra)):
            gains = torch.sigmoid(feat @ self.gain.t())             # (B, C)
            scale = weights[:, idx, None, None] * gains.unsqueeze(-1)
            combined = combined + scale.to(coeffs.real.dtype) * coeffs
        recon = torch.fft.irfft(combined, n=passthrough.shape[-1], dim=-1)
        normed = F.layer_norm(recon, recon.shape[-2:])
        alpha = self.balance_alpha
        blended = alpha * normed + (1.0 - alpha) * passthrough
        return blended, weights


class SharedSpaceProjection(nn.Module):
    """Layer norm over (C, L) followed by a linear map into the shared space
    (time-mean pooled, then channels -> d)."""

    def __init__(self, channels, embed_dim):
        super().__init__()
        self.linear = nn.Linear(channels, embed_dim)

    def forward(self, x):
        normalized = F.layer_norm(x, x.shape[-2:])
        return normalized, self.linear(normalized.mean(dim=-1))


class EEGEncoder(nn.Module):
    """Full adaptive EEG encoder; see module docstring for the stage map."""

    def __init__(self, config: EEGEncoderConfig, subjects):
        super().__init__()
        self.config = config
        self.subject_bank = SubjectBank(subjects, config.channels,
                                        config.allow_unseen_subjects)
        self.channel_tf = ChannelTransformer(
            config.window_len, config.transformer_dim,
            config.transformer_depth, config.transformer_heads)
        intra_cls = IntraBandAttention if config.use_intra_attention else IntraBandProjection
        self.intra_mca = nn.ModuleDict(
            {band: intra_cls(config.channels, config.d_k) for band in BAND_ORDER})
        self.inter_mca = (InterBandAttention(config.d_k, len(BAND_ORDER))
                          if config.use_inter_attention else None)
        self.fusion = BandFusion(config.d_k, config.channels, config.balance_alpha)
        self.proj = SharedSpaceProjection(config.channels, config.embed_dim)
        self._mask_cache = {}

    def _masks_for(self, freq_axis):
        key = (freq_axis.shape[0], float(freq_axis[-1]))
        if key not in self._mask_cache:
            mask_set = band_masks(freq_axis, self.config.band_edges)
            self._mask_cache[key] = [mask_set.masks[b] for b in BAND_ORDER]
        return self._mask_cache[key]

    def forward(self, eeg, subject_ids) -> EEGEncoderOutput:
        if eeg.dim() != 3:
            raise ValueError("expected (B, C, L) input")
        mixed = self.subject_bank(eeg, subject_ids)
        passthrough = self.channel_tf(mixed)

        if self.config.balance_alpha == 0.0:
            # Blend weight zero: the spectral branch is multiplied out of the
            # result exactly, so the pass-through tensor is the embedding.
            normalized, projected = self.proj(passthrough)
            return EEGEncoderOutput(
                embedding=passthrough, passthrough=passthrough,
                normalized=normalized, projected=projected,
                band_weights=None, band_features=None)

        length = passthrough.shape[-1]
        coeffs = torch.fft.rfft(passthrough, dim=-1)
        freq_axis = torch.fft.rfftfreq(length, d=1.0 / self.config.sampling_rate_hz,
                                       dtype=torch.float64)
        banded_spectra = []
        band_feats = []
        for band, mask in zip(BAND_ORDER, self._masks_for(freq_axis)):
            banded = coeffs * mask.to(coeffs.real.dtype)
            banded_time = torch.fft.irfft(banded, n=length, dim=-1)
            de = differential_entropy(banded_time, self.config.variance_floor)
            psd = power_spectral_density(banded)
            banded_spectra.append(banded)
            band_feats.append(self.intra_mca[band](de, psd))
        if self.inter_mca is not None:
            band_feats = self.inter_mca(band_feats)

        embedding, weights = self.fusion(band_feats, banded_spectra, passthrough)
        normalized, projected = self.proj(embedding)
        return EEGEncoderOutput(
            embedding=embedding, passthrough=passthrough,
            normalized=normalized, projected=projected,
            band_weights=weights,
            band_features=dict(zip(BAND_ORDER, band_feats)))
