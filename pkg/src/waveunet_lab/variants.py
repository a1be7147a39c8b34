"""Structural variants: skip-path convolution chains and concat blocks.

A ``ResPath`` bridges the gap between shallow encoder features and deep
decoder features by passing each skip connection through a short chain of
convolutions. A multires block replaces a level convolution (or the
convolutions of two successive levels) with two member convolutions whose
outputs are concatenated and projected back to the replaced channel count
with a 1x1 convolution.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError
from .specs import ArchitectureSpec, MultiResSpec

LEAKY_SLOPE = 0.2


def _same_pad(kernel: int) -> int:
    return kernel // 2


class ResPath(nn.Module):
    """Chain of length-preserving convolutions applied to one skip.

    Every convolution mirrors the encoder convolution of the level the
    path attaches to (same filter count, same kernel), so the skip feature
    shape is unchanged.
    """

    def __init__(self, channels: int, kernel: int, depth: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv1d(channels, channels, kernel, padding=_same_pad(kernel))
            for _ in range(depth)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
        return x


class MultiResSingle(nn.Module):
    """Drop-in replacement for one level convolution.

    Two member convolutions with the replaced layer's filter count run in
    sequence; their outputs are concatenated (doubling the channels) and a
    1x1 projection restores the replaced layer's output width.
    """

    def __init__(self, in_channels: int, filters: int, kernel: int):
        super().__init__()
        pad = _same_pad(kernel)
        self.conv_a = nn.Conv1d(in_channels, filters, kernel, padding=pad)
        self.conv_b = nn.Conv1d(filters, filters, kernel, padding=pad)
        self.project = nn.Conv1d(2 * filters, filters, 1)
        self.concat_channels = 2 * filters

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        a = F.leaky_relu(self.conv_a(x), LEAKY_SLOPE)
        b = F.leaky_relu(self.conv_b(a), LEAKY_SLOPE)
        return self.project(torch.cat([a, b], dim=1))


class MultiResPair(nn.Module):
    """Block spanning two successive levels.

    The member convolutions take the settings of the two replaced
    convolutions. Resampling between the levels stays where it was, so the
    first member's output is brought to the second member's time scale
    before the concat + 1x1 projection. The separator drives the two
    members around its own decimation/upsampling steps.
    """

    def __init__(self, in_a: int, filters_a: int, in_b: int, filters_b: int, kernel: int):
        super().__init__()
        pad = _same_pad(kernel)
        self.conv_a = nn.Conv1d(in_a, filters_a, kernel, padding=pad)
        self.conv_b = nn.Conv1d(in_b, filters_b, kernel, padding=pad)
        self.project = nn.Conv1d(filters_a + filters_b, filters_b, 1)
        self.concat_channels = filters_a + filters_b

    def member_a(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv_a(x), LEAKY_SLOPE)

    def member_b(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv_b(x), LEAKY_SLOPE)

    def combine(self, a_resampled: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return self.project(torch.cat([a_resampled, b], dim=1))


def apply_res_path(separator, skip_features: torch.Tensor, level: int) -> torch.Tensor:
    """Run one skip's feature map through its attached path.

    Raises ``ContractError`` for levels without a path; callers must
    bypass those skips untouched.
    """
    key = str(level)
    if not hasattr(separator, "res_paths") or key not in separator.res_paths:
        raise ContractError(f"encoder level {level} has no res path attached")
    return separator.res_paths[key](skip_features)


def build_multires_separator(arch: ArchitectureSpec, spec: MultiResSpec):
    """Build a separator whose level convolutions are multires blocks."""
    from .model import build_separator

    spec.validate(arch.num_levels)
    merged = ArchitectureSpec(
        num_levels=arch.num_levels,
        extra_filters_per_level=arch.extra_filters_per_level,
        kernel_down=arch.kernel_down,
        kernel_up=arch.kernel_up,
        input_length=arch.input_length,
        audio_channels=arch.audio_channels,
        num_sources=arch.num_sources,
        res_path=None,
        multires=spec,
        seed=arch.seed,
    )
    return build_separator(merged)
