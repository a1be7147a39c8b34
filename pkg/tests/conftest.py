import numpy as np
import pytest
import torch

import waveunet_lab as wl


def tiny_arch(**overrides) -> wl.ArchitectureSpec:
    """Small mono architecture used across tests."""
    base = dict(
        num_levels=3,
        extra_filters_per_level=4,
        kernel_down=5,
        kernel_up=3,
        input_length=512,
        audio_channels=1,
        num_sources=2,
        seed=7,
    )
    base.update(overrides)
    return wl.ArchitectureSpec(**base)


@pytest.fixture
def arch():
    return tiny_arch()


@pytest.fixture
def separator(arch):
    return wl.build_separator(arch)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_mix(arch: wl.ArchitectureSpec, batch: int = 2, seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(
        (batch, arch.audio_channels, arch.input_length), generator=gen
    ) * 2 - 1


def mix_consistency_error(output: torch.Tensor, mix: torch.Tensor) -> float:
    """Max abs deviation of the source sum from the mix, relative to the mix scale."""
    output = output.detach()
    denom = max(float(mix.abs().max()), 1e-12)
    return float((output.sum(dim=1) - mix).abs().max()) / denom
