"""Desk-scale training recipes shared by the experiment scripts and the acceptance suite."""

from __future__ import annotations

from pathlib import Path

from .baseline import ResNetBaseline, ResNetBaselineSpec
from .blocks import NetworkSpec
from .data import Dataset, generate_synthetic, load_dataset
from .train import HyperNet, TrainConfig

BARS10_SPEC = NetworkSpec(input_channels=3, width=3, levels=3, blocks_per_level=3, classes=10)
SEG_SPEC = NetworkSpec(input_channels=3, width=4, levels=2, blocks_per_level=2, head="segmenter",
                       classes=4, topology="downup")


def bars10_data(root: str | Path, n_train: int = 1000, n_val: int = 200) -> tuple[Dataset, Dataset]:
    root = Path(root)
    tr = load_dataset(generate_synthetic("bars10", n_train, 1, root / "train"))
    va = load_dataset(generate_synthetic("bars10", n_val, 2, root / "val"))
    return tr, va


def bars10_config(mode: str = "reversible", epochs: int = 30, seed: int = 0) -> TrainConfig:
    # plain SGD at 0.1 diverges on this net once ||K^T K|| grows past the leapfrog stability bound
    return TrainConfig(optimizer="sgd", lr=0.1, epochs=epochs, batch_size=32, seed=seed, mode=mode,
                       clip_norm=1.0)


def bars10_model() -> HyperNet:
    return HyperNet(BARS10_SPEC)


def seg_data(root: str | Path, n_train: int = 100, n_val: int = 20) -> tuple[Dataset, Dataset]:
    root = Path(root)
    tr = load_dataset(generate_synthetic("shapes-seg", n_train, 1, root / "train"))
    va = load_dataset(generate_synthetic("shapes-seg", n_val, 2, root / "val"))
    return tr, va


def seg_config(epochs: int = 10, seed: int = 0) -> TrainConfig:
    return TrainConfig(optimizer="adam", lr=0.01, epochs=epochs, batch_size=4, seed=seed,
                       weighting="mean_frequency")


def seg_model() -> HyperNet:
    return HyperNet(SEG_SPEC)


def baseline_model(coarsening: str) -> ResNetBaseline:
    return ResNetBaseline(ResNetBaselineSpec(input_channels=3, width=4, levels=2, blocks_per_level=2,
                                             classes=10, coarsening=coarsening))


def baseline_config(seed: int, epochs: int = 8) -> TrainConfig:
    return TrainConfig(optimizer="adam", lr=0.01, epochs=epochs, batch_size=32, seed=seed, mode="stored",
                       clip_norm=1.0, milestones=(6,), factor=0.1)
