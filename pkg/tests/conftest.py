import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from maskrestore import TrainConfig, build_model, load_dataset, train
from maskrestore.model import ArchConfig
from maskrestore.synthetic import SynthSpec, generate_synthetic


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory) -> Path:
    """A small 64x64 corpus: 8 train / 2 validation / 6 test images."""
    root = tmp_path_factory.mktemp("mini") / "corpus"
    spec = SynthSpec(n_train=8, n_validation=2, n_test=6, seed=42)
    generate_synthetic(spec, root)
    return root


@pytest.fixture(scope="session")
def trained_small(mini_corpus):
    """A briefly-trained model plus thresholds and its dataset."""
    dataset = load_dataset(mini_corpus, 64)
    model = build_model(ArchConfig(), seed=11)
    cfg = TrainConfig(epochs=2, scales=(4, 8, 16), seed=11)
    thresholds, _ = train(
        model, dataset.stack("train"), cfg, validation=dataset.stack("validation")
    )
    return model, thresholds, dataset


@pytest.fixture()
def rng_images():
    """Deterministic batch of random float32 images for metric checks."""

    def make(n: int, size: int = 16, seed: int = 0, dtype=torch.float64):
        gen = torch.Generator().manual_seed(seed)
        return torch.rand(n, 3, size, size, generator=gen, dtype=torch.float64).to(dtype)

    return make
