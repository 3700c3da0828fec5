import numpy as np
import pytest
import torch

from hyperemo.hypergraph import (
    AdaptiveHypergraphFusion,
    WeightedIncidence,
    build_hypergraph,
    fuse_concat,
    hypergraph_convolve,
)

IDENTITY = lambda t: t


def brute_force_propagate(structure, node_w, intra_w, inter_w, features, layers):
    """Independent oracle: explicit node->edge->node weighted-average loops
    over the edge membership lists, no matrices shared with the main path."""
    mods = structure.modalities
    n = structure.num_segments
    values = np.asarray(features, dtype=np.float64).copy()
    edges = []
    for i in range(n):
        edges.append(("intra", i, [(structure.node_row(i, m), node_w[m]["intra"]) for m in mods]))
    for m in mods:
        edges.append(("inter", m, [(structure.node_row(i, m), node_w[m]["inter"]) for i in range(n)]))

    def edge_weight(kind, key):
        return intra_w[key] if kind == "intra" else inter_w[key]

    for _ in range(layers):
        per_edge = []
        for kind, key, members in edges:
            num = sum(w * values[row] for row, w in members)
            den = sum(w for _, w in members)
            per_edge.append(num / den * edge_weight(kind, key))
        nxt = np.zeros_like(values)
        for row in range(values.shape[0]):
            acc = np.zeros(values.shape[1])
            deg = 0.0
            for (kind, key, members), ev in zip(edges, per_edge):
                for m_row, w in members:
                    if m_row == row:
                        acc += w * ev
                        deg += w * edge_weight(kind, key)
            nxt[row] = acc / deg
        values = nxt
    return values


class TestStructure:
    @pytest.mark.parametrize("n", range(1, 7))
    def test_counts(self, n):
        s = build_hypergraph(n)
        assert s.num_nodes == 3 * n
        assert s.num_edges == n + 3
        inc = s.incidence_bool()
        assert (inc.sum(dim=0)[:n] == 3).all()          # intra cardinality
        assert (inc.sum(dim=0)[n:] == n).all()          # inter cardinality
        assert (inc.sum(dim=1) == 2).all()              # node degree
        assert int(inc.sum()) == 6 * n                  # nonzero count

    def test_single_segment_intra_is_union_of_inters(self):
        s = build_hypergraph(1)
        intra = set(s.intra_members(0))
        inters = set()
        for m in s.modalities:
            inters |= set(s.inter_members(m))
        assert intra == inters == {0, 1, 2}

    def test_invalid_segment_count(self):
        with pytest.raises(ValueError):
            build_hypergraph(0)


class TestWeightedIncidence:
    def test_uniform_single_segment(self):
        mod = AdaptiveHypergraphFusion(max_segments=1, learn_node_weights=False,
                                       learn_edge_weights=False).double()
        inc = mod.weighted_incidence(mod.structure_for(1), dtype=torch.float64)
        expected = torch.tensor([[1.0, 1, 0, 0], [1, 0, 1, 0], [1, 0, 0, 1]],
                                dtype=torch.float64)
        assert torch.equal(inc.h_hat, expected)
        assert torch.equal(inc.edge_degrees, torch.tensor([3.0, 1, 1, 1], dtype=torch.float64))
        assert torch.equal(inc.node_degrees, torch.tensor([2.0, 2, 2], dtype=torch.float64))

    def test_weight_floor(self):
        mod = AdaptiveHypergraphFusion(max_segments=2).double()
        with torch.no_grad():
            mod.node_raw.fill_(-60.0)   # softplus underflows to 0
        inc = mod.weighted_incidence(mod.structure_for(2), dtype=torch.float64)
        nz = inc.h_hat[inc.h_hat != 0]
        assert nz.min().item() >= 1e-6
        assert inc.node_degrees.min().item() > 0

    def test_sparsity_count(self):
        mod = AdaptiveHypergraphFusion(max_segments=4).double()
        inc = mod.weighted_incidence(mod.structure_for(4), dtype=torch.float64)
        assert int((inc.h_hat != 0).sum()) == 6 * 4

    def test_long_dialogue_reuses_last_position_weight(self):
        mod = AdaptiveHypergraphFusion(max_segments=2).double()
        w = mod.edge_weights(5, dtype=torch.float64)
        assert w.shape == (5 + 3,)
        assert torch.equal(w[1], w[4])


class TestPropagation:
    def test_hand_oracle_single_segment(self):
        mod = AdaptiveHypergraphFusion(max_segments=1, learn_node_weights=False,
                                       learn_edge_weights=False).double()
        inc = mod.weighted_incidence(mod.structure_for(1), dtype=torch.float64)
        v0 = torch.tensor([[1.0], [2.0], [3.0]], dtype=torch.float64)
        v1 = hypergraph_convolve(v0, inc, layers=1, activation=IDENTITY)
        expected = torch.tensor([[1.5], [2.0], [2.5]], dtype=torch.float64)
        assert (v1 - expected).abs().max() < 1e-9

    def test_matrix_equals_bruteforce_on_random_instances(self):
        rng = np.random.default_rng(88)
        for trial in range(50):
            n = int(rng.integers(1, 5))
            d = int(rng.integers(1, 4))
            layers = int(rng.integers(1, 3))
            mod = AdaptiveHypergraphFusion(max_segments=n, layers=layers).double()
            with torch.no_grad():
                mod.node_raw.copy_(torch.tensor(rng.uniform(-1.0, 1.5, size=(3, 2))))
                mod.intra_raw.copy_(torch.tensor(rng.uniform(-1.0, 1.5, size=n)))
                mod.inter_raw.copy_(torch.tensor(rng.uniform(-1.0, 1.5, size=3)))
            structure = mod.structure_for(n)
            inc = mod.weighted_incidence(structure, dtype=torch.float64)
            features = rng.standard_normal((3 * n, d))
            with torch.no_grad():
                got = hypergraph_convolve(torch.tensor(features), inc, layers, IDENTITY)

            node_w = {m: {"intra": inc.h_hat[structure.node_row(0, m), 0].item(),
                          "inter": inc.h_hat[structure.node_row(0, m),
                                             n + structure.modalities.index(m)].item()}
                      for m in structure.modalities}
            intra_w = {i: inc.edge_weights[i].item() for i in range(n)}
            inter_w = {m: inc.edge_weights[n + structure.modalities.index(m)].item()
                       for m in structure.modalities}
            expected = brute_force_propagate(structure, node_w, intra_w, inter_w,
                                             features, layers)
            assert np.abs(got.numpy() - expected).max() < 1e-6

    def test_constant_vector_preserved(self):
        mod = AdaptiveHypergraphFusion(max_segments=3, learn_node_weights=False,
                                       learn_edge_weights=False).double()
        inc = mod.weighted_incidence(mod.structure_for(3), dtype=torch.float64)
        v = torch.full((9, 2), 4.2, dtype=torch.float64)
        out = hypergraph_convolve(v, inc, layers=4, activation=IDENTITY)
        assert torch.allclose(out, v, atol=1e-12)

    def test_layer_contract(self):
        mod = AdaptiveHypergraphFusion(max_segments=2).double()
        inc = mod.weighted_incidence(mod.structure_for(2), dtype=torch.float64)
        v = torch.randn(6, 3, dtype=torch.float64)
        with pytest.raises(ValueError):
            hypergraph_convolve(v, inc, layers=0)
        one = hypergraph_convolve(v, inc, layers=1, activation=IDENTITY)
        assert one.shape == v.shape

    def test_detached_temporal_edges(self):
        # near-zero inter-segment node weights stop cross-time mixing
        mod = AdaptiveHypergraphFusion(max_segments=2).double()
        with torch.no_grad():
            mod.node_raw[:, 1].fill_(-60.0)
        inc = mod.weighted_incidence(mod.structure_for(2), dtype=torch.float64)
        v = torch.zeros(6, 1, dtype=torch.float64)
        v[0, 0] = 1.0  # eeg node of segment 0
        out = hypergraph_convolve(v, inc, layers=1, activation=IDENTITY)
        # segment 1's nodes receive only floor-level leakage
        assert out[1, 0].abs() < 1e-4      # eeg of segment 1
        assert out[0, 0].abs() > 0.01


class TestFuseConcat:
    def test_tiny_example(self):
        s = build_hypergraph(1)
        nodes = torch.tensor([[1.0, 2], [3, 4], [5, 6]])
        fused = fuse_concat(nodes, s)
        assert torch.equal(fused, torch.tensor([[1.0, 2, 3, 4, 5, 6]]))

    def test_shape(self):
        s = build_hypergraph(4)
        fused = fuse_concat(torch.randn(12, 5), s)
        assert fused.shape == (4, 15)

    def test_segment_permutation(self):
        s = build_hypergraph(3)
        nodes = torch.randn(9, 2)
        fused = fuse_concat(nodes, s)
        perm = [2, 0, 1]
        permuted_nodes = torch.cat([nodes[m * 3 + torch.tensor(perm)] for m in range(3)])
        assert torch.equal(fuse_concat(permuted_nodes, s), fused[perm])


class TestGradients:
    def test_weights_receive_gradients(self):
        mod = AdaptiveHypergraphFusion(max_segments=2, layers=2).double()
        out = mod(torch.randn(6, 3, dtype=torch.float64), num_segments=2)
        out.pow(2).sum().backward()
        assert mod.node_raw.grad is not None and mod.node_raw.grad.abs().sum() > 0
        assert mod.intra_raw.grad is not None and mod.intra_raw.grad.abs().sum() > 0
        assert mod.inter_raw.grad is not None

    def test_frozen_weights_have_no_parameters(self):
        mod = AdaptiveHypergraphFusion(max_segments=2, learn_node_weights=False,
                                       learn_edge_weights=False)
        assert sum(p.numel() for p in mod.parameters()) == 0
