"""Finite-difference verification of analytic gradients.

Every check builds a tiny double-precision instance of one pipeline module,
evaluates a scalar loss, and compares autograd gradients against central
differences (step 1e-5) coordinate by coordinate. Large tensors are
subsampled with a seeded coordinate draw; every parameter tensor is always
touched. Purely affine parameter groups are held to a tighter tolerance
because their finite differences carry no truncation term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .classifier import ClassifierHead, cross_entropy
from .eeg_encoder import EEGEncoder, EEGEncoderConfig
from .encoders import ModalityEncoders
from .hypergraph import AdaptiveHypergraphFusion

FD_STEP = 1e-5
DEFAULT_TOL = 1e-4
AFFINE_TOL = 1e-6
MAX_COORDS = 48

CHECKED_MODULES = ("abema", "encoders", "hypergraph", "classifier")


@dataclass
class GradCheckResult:
    module: str
    max_rel_error: float
    per_group: dict           # parameter name -> max rel error
    tolerances: dict          # parameter name -> tolerance applied

    @property
    def passed(self) -> bool:
        return all(self.per_group[name] <= self.tolerances[name]
                   for name in self.per_group)


def _relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1e-4)
    return abs(analytic - numeric) / scale


def finite_difference_errors(module: torch.nn.Module, loss_fn,
                             step: float = FD_STEP,
                             max_coords: int = MAX_COORDS,
                             seed: int = 0) -> dict:
    """Max relative analytic-vs-central-difference error per parameter."""
    module.eval()  # the loss must be a deterministic function of the parameters
    module.zero_grad(set_to_none=True)
    loss = loss_fn()
    loss.backward()
    rng = np.random.default_rng(seed)
    errors = {}
    for name, param in module.named_parameters():
        grad = torch.zeros_like(param) if param.grad is None else param.grad
        flat = param.detach().view(-1)
        n = flat.numel()
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        worst = 0.0
        with torch.no_grad():
            for idx in coords:
                original = flat[idx].item()
                flat[idx] = original + step
                plus = loss_fn().item()
                flat[idx] = original - step
                minus = loss_fn().item()
                flat[idx] = original
                numeric = (plus - minus) / (2.0 * step)
                worst = max(worst, _relative_error(grad.view(-1)[idx].item(), numeric))
        errors[name] = worst
    module.zero_grad(set_to_none=True)
    return errors


def _quadratic(*tensors) -> torch.Tensor:
    return sum(0.5 * (t ** 2).sum() for t in tensors)


def _check_abema(seed: int) -> GradCheckResult:
    torch.manual_seed(seed)
    config = EEGEncoderConfig(
        channels=4, window_len=16, sampling_rate_hz=100.0,
        embed_dim=8, d_k=8, transformer_depth=1, transformer_heads=2,
        transformer_dim=8, balance_alpha=0.5)
    module = EEGEncoder(config, subjects=["a", "b"]).double()
    eeg = torch.randn(2, 4, 16, dtype=torch.float64)
    subjects = ["a", "b"]

    def loss_fn():
        out = module(eeg, subjects)
        return _quadratic(out.embedding, out.projected)

    errors = finite_difference_errors(module, loss_fn, seed=seed)
    tols = {name: DEFAULT_TOL for name in errors}
    return GradCheckResult("abema", max(errors.values()), errors, tols)


def _check_encoders(seed: int) -> GradCheckResult:
    torch.manual_seed(seed)
    module = ModalityEncoders(channels=4, audio_dim=6, video_dim=5, embed_dim=8).double()
    inputs = {
        "eeg": torch.randn(2, 4, 16, dtype=torch.float64),
        "audio": torch.randn(2, 6, dtype=torch.float64),
        "video": torch.randn(2, 5, dtype=torch.float64),
    }

    def loss_fn():
        out = module(inputs)
        return _quadratic(*out.values())

    errors = finite_difference_errors(module, loss_fn, seed=seed)
    tols = {name: (AFFINE_TOL if (".audio." in name or ".video." in name) else DEFAULT_TOL)
            for name in errors}
    return GradCheckResult("encoders", max(errors.values()), errors, tols)


def _check_hypergraph(seed: int) -> GradCheckResult:
    torch.manual_seed(seed)
    module = AdaptiveHypergraphFusion(max_segments=2, layers=2).double()
    features = torch.randn(6, 3, dtype=torch.float64)

    def loss_fn():
        return _quadratic(module(features, num_segments=2))

    errors = finite_difference_errors(module, loss_fn, seed=seed)
    tols = {name: DEFAULT_TOL for name in errors}
    return GradCheckResult("hypergraph", max(errors.values()), errors, tols)


def _check_classifier(seed: int) -> GradCheckResult:
    torch.manual_seed(seed)
    module = ClassifierHead(in_dim=9, num_classes=3).double()
    features = torch.randn(5, 9, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 1, 0])

    def loss_fn():
        logits, _ = module(features)
        return cross_entropy(logits, labels)

    errors = finite_difference_errors(module, loss_fn, seed=seed)
    tols = {name: DEFAULT_TOL for name in errors}
    return GradCheckResult("classifier", max(errors.values()), errors, tols)


_CHECKS = {
    "abema": _check_abema,
    "encoders": _check_encoders,
    "hypergraph": _check_hypergraph,
    "classifier": _check_classifier,
}


def gradient_check(module_name: str, seed: int = 0) -> GradCheckResult:
    """Run the finite-difference check for one module by name."""
    if module_name not in _CHECKS:
        raise ValueError(f"unknown module {module_name!r}; choose from {CHECKED_MODULES}")
    return _CHECKS[module_name](seed)


def gradient_check_all(seed: int = 0) -> list[GradCheckResult]:
    return [gradient_check(name, seed) for name in CHECKED_MODULES]
