import pytest
import torch

from hyperemo.encoders import ModalityEncoders, RecurrentEEGEncoder, VectorEncoder


class TestVectorEncoder:
    def test_identity_weights(self):
        enc = VectorEncoder(6, 6).double()
        with torch.no_grad():
            enc.linear.weight.copy_(torch.eye(6))
            enc.linear.bias.zero_()
        x = torch.randn(3, 6, dtype=torch.float64)
        assert torch.allclose(enc(x), x)

    def test_zero_input_gives_bias(self):
        enc = VectorEncoder(5, 7).double()
        out = enc(torch.zeros(2, 5, dtype=torch.float64))
        assert torch.allclose(out[0], enc.linear.bias)

    def test_affine_superposition(self):
        enc = VectorEncoder(4, 3).double()
        x = torch.randn(2, 4, dtype=torch.float64)
        y = torch.randn(2, 4, dtype=torch.float64)
        lhs = enc(x + y) + enc(torch.zeros_like(x))
        rhs = enc(x) + enc(y)
        assert torch.allclose(lhs, rhs, atol=1e-12)

    def test_length_mismatch(self):
        enc = VectorEncoder(4, 3)
        with pytest.raises(ValueError):
            enc(torch.randn(2, 5))


class TestRecurrentEEGEncoder:
    def test_output_shape(self):
        enc = RecurrentEEGEncoder(channels=5, embed_dim=8).double()
        out = enc(torch.randn(3, 5, 20, dtype=torch.float64))
        assert out.shape == (3, 8)

    def test_zero_input_zero_biases_gives_projection_bias(self):
        enc = RecurrentEEGEncoder(channels=4, embed_dim=6).double()
        with torch.no_grad():
            enc.gru.bias_ih_l0.zero_()
            enc.gru.bias_hh_l0.zero_()
            enc.gru.bias_ih_l0_reverse.zero_()
            enc.gru.bias_hh_l0_reverse.zero_()
        out = enc(torch.zeros(2, 4, 10, dtype=torch.float64))
        assert torch.allclose(out[0], enc.head.bias, atol=1e-12)

    def test_time_reversal_with_tied_directions(self):
        # tying forward/backward recurrences and the two halves of the
        # output map makes the encoder invariant to reversing time
        torch.manual_seed(0)
        enc = RecurrentEEGEncoder(channels=3, embed_dim=8).double()
        with torch.no_grad():
            enc.gru.weight_ih_l0_reverse.copy_(enc.gru.weight_ih_l0)
            enc.gru.weight_hh_l0_reverse.copy_(enc.gru.weight_hh_l0)
            enc.gru.bias_ih_l0_reverse.copy_(enc.gru.bias_ih_l0)
            enc.gru.bias_hh_l0_reverse.copy_(enc.gru.bias_hh_l0)
            half = enc.head.weight[:, :4]
            enc.head.weight[:, 4:].copy_(half)
        x = torch.randn(2, 3, 12, dtype=torch.float64)
        assert torch.allclose(enc(x), enc(x.flip(-1)), atol=1e-10)

    def test_odd_embed_dim_rejected(self):
        with pytest.raises(ValueError):
            RecurrentEEGEncoder(channels=3, embed_dim=7)


class TestModalityEncoders:
    def test_all_dimensions_match(self):
        bundle = ModalityEncoders(channels=4, audio_dim=6, video_dim=5, embed_dim=8).double()
        out = bundle({
            "eeg": torch.randn(3, 4, 16, dtype=torch.float64),
            "audio": torch.randn(3, 6, dtype=torch.float64),
            "video": torch.randn(3, 5, dtype=torch.float64),
        })
        assert set(out) == {"eeg", "audio", "video"}
        assert all(v.shape == (3, 8) for v in out.values())

    def test_modality_subset(self):
        bundle = ModalityEncoders(channels=4, audio_dim=6, video_dim=5,
                                  embed_dim=8, modalities=("audio",))
        out = bundle({"audio": torch.randn(2, 6)})
        assert set(out) == {"audio"}
