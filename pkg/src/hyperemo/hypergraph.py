"""Conversation hypergraph: construction, weighted incidence, propagation.

For a dialogue of N segments and M modalities there are M*N nodes
(modality-major rows: all segment nodes of modality 0, then modality 1, ...)
and N+M hyperedges: one intra-segment edge per segment (columns 0..N-1,
connecting that segment's M modality nodes) followed by one inter-segment
edge per modality (connecting that modality's N nodes across time).

Node weights are one positive scalar per (modality, edge type); hyperedge
weights are one positive scalar per intra edge position plus one per
modality. Positivity comes from a softplus parameterisation floored at
1e-6. Node degrees fold the hyperedge weights in, which keeps the
propagation operator row-stochastic, so constant node features are fixed
points under the identity activation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

WEIGHT_FLOOR = 1e-6
DEFAULT_MODALITIES = ("eeg", "audio", "video")


@dataclass(frozen=True)
class HypergraphStructure:
    """Topology of one dialogue's hypergraph (no weights)."""

    num_segments: int
    modalities: tuple

    @property
    def num_nodes(self) -> int:
        return self.num_segments * len(self.modalities)

    @property
    def num_edges(self) -> int:
        return self.num_segments + len(self.modalities)

    def node_row(self, segment: int, modality: str) -> int:
        return self.modalities.index(modality) * self.num_segments + segment

    def intra_members(self, segment: int) -> list[int]:
        return [self.node_row(segment, m) for m in self.modalities]

    def inter_members(self, modality: str) -> list[int]:
        return [self.node_row(i, modality) for i in range(self.num_segments)]

    def incidence_bool(self) -> torch.Tensor:
        """(num_nodes, num_edges) 0/1 membership matrix."""
        inc = torch.zeros(self.num_nodes, self.num_edges)
        for i in range(self.num_segments):
            for row in self.intra_members(i):
                inc[row, i] = 1.0
        for m_idx, modality in enumerate(self.modalities):
            for row in self.inter_members(modality):
                inc[row, self.num_segments + m_idx] = 1.0
        return inc


@dataclass
class WeightedIncidence:
    h_hat: torch.Tensor        # (num_nodes, num_edges), nonzero iff member
    edge_weights: torch.Tensor  # (num_edges,) diagonal of the hyperedge weight matrix
    node_degrees: torch.Tensor  # (num_nodes,) edge weights folded in
    edge_degrees: torch.Tensor  # (num_edges,) column sums of h_hat


def build_hypergraph(num_segments: int, modalities=DEFAULT_MODALITIES) -> HypergraphStructure:
    if num_segments < 1:
        raise ValueError("a dialogue needs at least one segment")
    if not modalities:
        raise ValueError("at least one modality required")
    return HypergraphStructure(num_segments=num_segments, modalities=tuple(modalities))


def hypergraph_convolve(features: torch.Tensor, incidence: WeightedIncidence,
                        layers: int = 1, activation=None) -> torch.Tensor:
    """L applications of the normalised node->edge->node propagation.

    Each layer averages member nodes into every hyperedge (weighted by node
    weights), scales by the hyperedge weight, and redistributes to nodes,
    dividing by the folded node degree.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if features.shape[0] != incidence.h_hat.shape[0]:
        raise ValueError("feature rows must match node count")
    if activation is None:
        activation = lambda t: F.leaky_relu(t, negative_slope=0.01)
    h_hat = incidence.h_hat
    out = features
    for _ in range(layers):
        per_edge = (h_hat.t() @ out) / incidence.edge_degrees.unsqueeze(1)
        per_edge = per_edge * incidence.edge_weights.unsqueeze(1)
        out = (h_hat @ per_edge) / incidence.node_degrees.unsqueeze(1)
        out = activation(out)
    return out


def fuse_concat(features: torch.Tensor, structure: HypergraphStructure) -> torch.Tensor:
    """(M*N, d) node features -> (N, M*d) per-segment concatenation, in
    declared modality order."""
    n, m = structure.num_segments, len(structure.modalities)
    if features.shape[0] != n * m:
        raise ValueError("feature rows must match node count")
    d = features.shape[1]
    return features.reshape(m, n, d).permute(1, 0, 2).reshape(n, m * d)


def _softplus_inverse(value: float) -> float:
    return math.log(math.expm1(value))


class AdaptiveHypergraphFusion(nn.Module):
    """Trainable node/hyperedge weights plus the propagation itself.

    Intra hyperedge weights are indexed by segment position and shared
    across dialogues; dialogues longer than ``max_segments`` reuse the last
    position's weight. Either weight family can be frozen at exactly 1 for
    ablations.
    """

    def __init__(self, max_segments: int, modalities=DEFAULT_MODALITIES,
                 layers: int = 2, learn_node_weights: bool = True,
                 learn_edge_weights: bool = True, activation=None):
        super().__init__()
        if max_segments < 1:
            raise ValueError("max_segments must be >= 1")
        self.modalities = tuple(modalities)
        self.max_segments = max_segments
        self.layers = layers
        self.activation = activation
        raw_unit = _softplus_inverse(1.0 - WEIGHT_FLOOR)
        num_mods = len(self.modalities)
        if learn_node_weights:
            # column 0: intra-segment edges, column 1: inter-segment edges
            self.node_raw = nn.Parameter(torch.full((num_mods, 2), raw_unit))
        else:
            self.register_buffer("node_fixed", torch.ones(num_mods, 2))
            self.node_raw = None
        if learn_edge_weights:
            self.intra_raw = nn.Parameter(torch.full((max_segments,), raw_unit))
            self.inter_raw = nn.Parameter(torch.full((num_mods,), raw_unit))
        else:
            self.register_buffer("intra_fixed", torch.ones(max_segments))
            self.register_buffer("inter_fixed", torch.ones(num_mods))
            self.intra_raw = None
            self.inter_raw = None
        self._structures = {}

    def node_weights(self, dtype=None):
        if self.node_raw is not None:
            w = F.softplus(self.node_raw) + WEIGHT_FLOOR
        else:
            w = self.node_fixed
        return w.to(dtype) if dtype is not None else w

    def edge_weights(self, num_segments: int, dtype=None):
        if self.intra_raw is not None:
            intra = F.softplus(self.intra_raw) + WEIGHT_FLOOR
            inter = F.softplus(self.inter_raw) + WEIGHT_FLOOR
        else:
            intra, inter = self.intra_fixed, self.inter_fixed
        idx = torch.arange(num_segments).clamp(max=self.max_segments - 1)
        w = torch.cat([intra[idx], inter])
        return w.to(dtype) if dtype is not None else w

    def structure_for(self, num_segments: int) -> HypergraphStructure:
        if num_segments not in self._structures:
            self._structures[num_segments] = build_hypergraph(num_segments, self.modalities)
        return self._structures[num_segments]

    def weighted_incidence(self, structure: HypergraphStructure,
                           dtype=None) -> WeightedIncidence:
        if dtype is None:
            dtype = (self.node_raw if self.node_raw is not None else self.node_fixed).dtype
        n = structure.num_segments
        member = structure.incidence_bool().to(dtype)
        node_w = self.node_weights(dtype)
        # row r belongs to modality r // n; columns < n are intra edges
        row_mod = torch.arange(structure.num_nodes) // n
        h_hat = torch.empty_like(member)
        h_hat[:, :n] = member[:, :n] * node_w[row_mod, 0].unsqueeze(1)
        h_hat[:, n:] = member[:, n:] * node_w[row_mod, 1].unsqueeze(1)
        edge_w = self.edge_weights(n, dtype)
        node_deg = (h_hat * edge_w.unsqueeze(0)).sum(dim=1)
        edge_deg = h_hat.sum(dim=0)
        return WeightedIncidence(h_hat=h_hat, edge_weights=edge_w,
                                 node_degrees=node_deg, edge_degrees=edge_deg)

    def forward(self, node_features: torch.Tensor, num_segments: int) -> torch.Tensor:
        """Propagate one dialogue's (M*N, d) node features and concatenate
        per segment to (N, M*d)."""
        structure = self.structure_for(num_segments)
        incidence = self.weighted_incidence(structure, dtype=node_features.dtype)
        propagated = hypergraph_convolve(node_features, incidence,
                                         self.layers, self.activation)
        return fuse_concat(propagated, structure)
