"""Two-layer classification head, training loss, and evaluation metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

PROB_FLOOR = 1e-12


@dataclass
class PredictionBatch:
    probabilities: np.ndarray   # (N, num_classes), rows on the simplex
    predicted: np.ndarray       # (N,) argmax with ties to the lowest index
    hidden: np.ndarray          # (N, hidden_dim)


class ClassifierHead(nn.Module):
    """hidden = relu(W_c f + b_c); logits = W_o hidden + b_o.

    Dropout sits between the hidden layer and the output map and is active
    only in training mode. Default hidden width is half the input width.
    """

    def __init__(self, in_dim, num_classes, hidden_dim=None, dropout=0.0):
        super().__init__()
        self.hidden_dim = hidden_dim or max(in_dim // 2, 1)
        self.hidden = nn.Linear(in_dim, self.hidden_dim)
        self.drop = nn.Dropout(dropout)
        self.out = nn.Linear(self.hidden_dim, num_classes)

    def forward(self, features):
        hidden = torch.relu(self.hidden(features))
        logits = self.out(self.drop(hidden))
        return logits, hidden


def classify(head: ClassifierHead, features: torch.Tensor) -> PredictionBatch:
    """Eval-mode predictions for a feature batch."""
    was_training = head.training
    head.eval()
    with torch.no_grad():
        logits, hidden = head(features)
        probs = torch.softmax(logits, dim=-1)
    if was_training:
        head.train()
    return PredictionBatch(
        probabilities=probs.cpu().numpy(),
        predicted=probs.argmax(dim=-1).cpu().numpy(),
        hidden=hidden.cpu().numpy(),
    )


def parameter_l2_norm(parameters) -> torch.Tensor:
    """Global L2 norm (not squared) over an iterable of parameter tensors."""
    total = None
    for p in parameters:
        sq = p.pow(2).sum()
        total = sq if total is None else total + sq
    if total is None:
        return torch.tensor(0.0)
    return torch.sqrt(total)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log probability of the true class, floored at 1e-12."""
    log_probs = torch.log_softmax(logits, dim=-1)
    log_probs = torch.clamp(log_probs, min=math.log(PROB_FLOOR))
    picked = log_probs.gather(1, labels.view(-1, 1)).squeeze(1)
    return -picked.mean()


def training_loss(logits: torch.Tensor, labels: torch.Tensor,
                  parameters=None, l2_lambda: float = 0.0) -> torch.Tensor:
    """Cross entropy averaged over every segment in the batch plus
    l2_lambda times the global parameter norm."""
    loss = cross_entropy(logits, labels)
    if l2_lambda and parameters is not None:
        loss = loss + l2_lambda * parameter_l2_norm(parameters)
    return loss


def confusion_matrix(y_pred, y_true, num_classes: int) -> np.ndarray:
    """(num_classes, num_classes) counts; rows are true classes."""
    y_pred = np.asarray(y_pred, dtype=int)
    y_true = np.asarray(y_true, dtype=int)
    if y_pred.shape != y_true.shape or y_pred.size == 0:
        raise ValueError("predictions and labels must be equal-length and non-empty")
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def metrics_from_confusion(matrix: np.ndarray) -> dict:
    matrix = np.asarray(matrix, dtype=np.float64)
    total = matrix.sum()
    support = matrix.sum(axis=1)
    predicted = matrix.sum(axis=0)
    diag = np.diag(matrix)
    precision = np.divide(diag, predicted, out=np.zeros_like(diag), where=predicted > 0)
    recall = np.divide(diag, support, out=np.zeros_like(diag), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    present = support > 0
    weighted = float((f1 * support).sum() / total) if total else 0.0
    macro = float(f1[present].mean()) if present.any() else 0.0
    return {
        "acc": float(diag.sum() / total) if total else 0.0,
        "f1": weighted,
        "f1_macro": macro,
        "per_class_f1": [float(v) for v in f1],
        "confusion": matrix.astype(int).tolist(),
    }


def metrics(y_pred, y_true, num_classes: int) -> dict:
    """Accuracy, weighted F1 (headline), macro F1, per-class F1, confusion."""
    return metrics_from_confusion(confusion_matrix(y_pred, y_true, num_classes))
