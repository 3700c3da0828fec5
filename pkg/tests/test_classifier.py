import math

import numpy as np
import pytest
import torch

from hyperemo.classifier import (
    ClassifierHead,
    classify,
    confusion_matrix,
    cross_entropy,
    metrics,
    metrics_from_confusion,
    parameter_l2_norm,
    training_loss,
)


class TestClassify:
    def test_zero_output_layer_uniform_and_tie_to_zero(self):
        head = ClassifierHead(in_dim=6, num_classes=4).double()
        with torch.no_grad():
            head.out.weight.zero_()
            head.out.bias.zero_()
        batch = classify(head, torch.randn(5, 6, dtype=torch.float64))
        assert np.allclose(batch.probabilities, 0.25)
        assert (batch.predicted == 0).all()

    def test_rows_on_simplex(self):
        head = ClassifierHead(in_dim=8, num_classes=5).double()
        batch = classify(head, torch.randn(1000, 8, dtype=torch.float64))
        assert np.allclose(batch.probabilities.sum(axis=1), 1.0, atol=1e-6)
        assert (batch.probabilities > 0).all()

    def test_logit_shift_invariance(self):
        logits = torch.randn(4, 3, dtype=torch.float64)
        shifted = logits + torch.randn(4, 1, dtype=torch.float64)
        p1 = torch.softmax(logits, dim=-1)
        p2 = torch.softmax(shifted, dim=-1)
        assert torch.allclose(p1, p2, atol=1e-12)
        assert torch.equal(p1.argmax(dim=-1), p2.argmax(dim=-1))

    def test_two_class_hand_value(self):
        p = torch.softmax(torch.tensor([[2.0, 0.0]], dtype=torch.float64), dim=-1)
        assert p[0, 0].item() == pytest.approx(0.8808, abs=1e-4)
        assert p[0, 1].item() == pytest.approx(0.1192, abs=1e-4)

    def test_hidden_shape_default_width(self):
        head = ClassifierHead(in_dim=12, num_classes=3)
        logits, hidden = head(torch.randn(4, 12))
        assert hidden.shape == (4, 6)
        assert logits.shape == (4, 3)


class TestLoss:
    def test_perfect_predictions_zero_loss(self):
        logits = torch.full((3, 4), -60.0, dtype=torch.float64)
        for i, label in enumerate([0, 2, 3]):
            logits[i, label] = 60.0
        labels = torch.tensor([0, 2, 3])
        assert training_loss(logits, labels).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_five_way_is_log5(self):
        logits = torch.zeros(7, 5, dtype=torch.float64)
        labels = torch.randint(0, 5, (7,))
        assert cross_entropy(logits, labels).item() == pytest.approx(math.log(5), abs=1e-12)

    def test_probability_floor(self):
        logits = torch.tensor([[1000.0, -1000.0]], dtype=torch.float64)
        labels = torch.tensor([1])
        loss = cross_entropy(logits, labels).item()
        assert loss == pytest.approx(-math.log(1e-12), rel=1e-6)

    def test_regularizer_zero_params(self):
        logits = torch.zeros(2, 3, dtype=torch.float64)
        labels = torch.tensor([0, 1])
        params = [torch.zeros(4, dtype=torch.float64)]
        with_reg = training_loss(logits, labels, params, 0.5).item()
        without = training_loss(logits, labels).item()
        assert with_reg == pytest.approx(without)

    def test_regularizer_is_norm_not_squared(self):
        params = [torch.full((4,), 3.0, dtype=torch.float64)]  # norm 6, squared 36
        assert parameter_l2_norm(params).item() == pytest.approx(6.0)

    def test_one_descent_step_reduces_loss(self):
        torch.manual_seed(0)
        head = ClassifierHead(in_dim=6, num_classes=3).double()
        x = torch.randn(8, 6, dtype=torch.float64)
        y = torch.randint(0, 3, (8,))
        opt = torch.optim.SGD(head.parameters(), lr=1e-2)
        logits, _ = head(x)
        before = training_loss(logits, y, head.parameters(), 1e-5)
        before.backward()
        opt.step()
        logits, _ = head(x)
        after = training_loss(logits, y, head.parameters(), 1e-5)
        assert after.item() < before.item()


class TestMetrics:
    def test_perfect(self):
        out = metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert out["acc"] == 1.0
        assert out["f1"] == 1.0

    def test_hand_computed_two_class(self):
        out = metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
        assert out["acc"] == pytest.approx(0.75)
        assert out["per_class_f1"][0] == pytest.approx(2 / 3, abs=1e-9)
        assert out["per_class_f1"][1] == pytest.approx(0.8, abs=1e-9)
        assert out["f1"] == pytest.approx(0.7333, abs=1e-4)
        assert out["confusion"] == [[1, 1], [0, 2]]

    def test_all_wrong(self):
        out = metrics([1, 0], [0, 1], 2)
        assert out["acc"] == 0.0

    def test_confusion_consistency(self):
        rng = np.random.default_rng(5)
        y_true = rng.integers(0, 4, 200)
        y_pred = rng.integers(0, 4, 200)
        direct = metrics(y_pred, y_true, 4)
        via_matrix = metrics_from_confusion(confusion_matrix(y_pred, y_true, 4))
        assert direct == via_matrix

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics([], [], 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            metrics([1], [1, 0], 2)

    def test_rows_are_true_classes(self):
        out = metrics([1], [0], 2)
        assert out["confusion"] == [[0, 1], [0, 0]]
