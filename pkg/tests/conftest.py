import numpy as np
import pytest
import torch

from hyperemo.data import make_synthetic_dataset


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(1234)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Small mixed-dialogue dataset shared by trainer/CLI tests."""
    root = tmp_path_factory.mktemp("tiny_ds")
    return make_synthetic_dataset(
        root, num_subjects=2, dialogues_per_subject=6, segments_per_dialogue=6,
        num_classes=3, num_channels=4, window_len=64, audio_dim=8, video_dim=8,
        class_separation=3.0, seed=101, sampling_rate_hz=128.0)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
