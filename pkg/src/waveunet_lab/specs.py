"""Structural specifications for separator models and weight regimes.

An ``ArchitectureSpec`` fully determines the network graph and, together
with its seed, the initial weights. ``FreezeSpec`` selects which parameter
groups stay at their random initialization and which skip connections are
kept in the forward graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigurationError

REGIMES = ("U", "J", "L")
SKIP_SUBSETS = ("all", "first_3", "last_3")


@dataclass(frozen=True)
class ResPathSpec:
    """Replace direct skip connections with short convolution chains.

    ``conv_depth`` convolutions per path; ``connection_count`` skips get a
    path (when fewer than the number of levels, the deepest ones).
    """

    conv_depth: int
    connection_count: int

    def validate(self, num_levels: int) -> None:
        if self.conv_depth < 1:
            raise ConfigurationError("res_path.conv_depth must be >= 1")
        if not 1 <= self.connection_count <= num_levels:
            raise ConfigurationError(
                f"res_path.connection_count must be in [1, {num_levels}], "
                f"got {self.connection_count}"
            )

    def levels(self, num_levels: int) -> list[int]:
        """1-based encoder levels whose skip carries a path (deepest first)."""
        first = num_levels - self.connection_count + 1
        return list(range(first, num_levels + 1))


@dataclass(frozen=True)
class MultiResSpec:
    """Replace level convolutions with two-convolution concat blocks.

    ``blocks_per_path`` equal to the level count replaces one convolution
    per block; half the level count makes each block span two successive
    levels. Each block always holds two member convolutions.
    """

    blocks_per_path: int
    convs_per_block: int = 2

    def validate(self, num_levels: int) -> None:
        if self.convs_per_block != 2:
            raise ConfigurationError("multires.convs_per_block is fixed at 2")
        if self.blocks_per_path == num_levels:
            return
        if num_levels % 2 == 0 and self.blocks_per_path == num_levels // 2:
            return
        raise ConfigurationError(
            f"multires.blocks_per_path must be {num_levels} or "
            f"{num_levels // 2} (levels or half), got {self.blocks_per_path}"
        )

    def levels_per_block(self, num_levels: int) -> int:
        return 1 if self.blocks_per_path == num_levels else 2


@dataclass(frozen=True)
class ArchitectureSpec:
    """Structure of one length-preserving encoder-decoder separator."""

    num_levels: int = 10
    extra_filters_per_level: int = 24
    kernel_down: int = 15
    kernel_up: int = 5
    input_length: int = 16384
    audio_channels: int = 2
    num_sources: int = 2
    res_path: Optional[ResPathSpec] = None
    multires: Optional[MultiResSpec] = None
    seed: int = 0

    def validate(self) -> None:
        if self.num_levels < 1:
            raise ConfigurationError("num_levels must be >= 1")
        if self.extra_filters_per_level < 1:
            raise ConfigurationError("extra_filters_per_level must be >= 1")
        if self.input_length % (2 ** self.num_levels) != 0:
            raise ConfigurationError(
                f"input_length {self.input_length} is not divisible by "
                f"2^num_levels = {2 ** self.num_levels}"
            )
        for name, k in (("kernel_down", self.kernel_down), ("kernel_up", self.kernel_up)):
            if k < 1 or k % 2 == 0:
                raise ConfigurationError(f"{name} must be a positive odd integer, got {k}")
        if self.audio_channels < 1:
            raise ConfigurationError("audio_channels must be >= 1")
        if self.num_sources < 2:
            raise ConfigurationError("num_sources must be >= 2")
        if self.res_path is not None and self.multires is not None:
            raise ConfigurationError("res_path and multires variants are mutually exclusive")
        if self.res_path is not None:
            self.res_path.validate(self.num_levels)
        if self.multires is not None:
            self.multires.validate(self.num_levels)

    @property
    def variant_kind(self) -> str:
        if self.res_path is not None:
            return "res_path"
        if self.multires is not None:
            return "multires"
        return "baseline"

    def filters_at(self, level: int) -> int:
        """Output channels of the encoder convolution at a 1-based level."""
        return self.extra_filters_per_level * level

    @property
    def bottleneck_filters(self) -> int:
        return self.extra_filters_per_level * (self.num_levels + 1)

    @property
    def bottleneck_length(self) -> int:
        return self.input_length // (2 ** self.num_levels)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "num_levels": self.num_levels,
            "extra_filters_per_level": self.extra_filters_per_level,
            "kernel_down": self.kernel_down,
            "kernel_up": self.kernel_up,
            "input_length": self.input_length,
            "audio_channels": self.audio_channels,
            "num_sources": self.num_sources,
            "seed": self.seed,
        }
        if self.res_path is not None:
            d["variant"] = {
                "kind": "res_path",
                "conv_depth": self.res_path.conv_depth,
                "connections": self.res_path.connection_count,
            }
        elif self.multires is not None:
            d["variant"] = {
                "kind": "multires",
                "blocks_per_path": self.multires.blocks_per_path,
            }
        else:
            d["variant"] = {"kind": "baseline"}
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ArchitectureSpec":
        d = dict(d)
        variant = d.pop("variant", {"kind": "baseline"}) or {"kind": "baseline"}
        kind = variant.get("kind", "baseline")
        num_levels = int(d.get("num_levels", 10))
        res_path = None
        multires = None
        if kind == "res_path":
            connections = variant.get("connections", "all")
            if connections == "all":
                connections = num_levels
            res_path = ResPathSpec(
                conv_depth=int(variant["conv_depth"]),
                connection_count=int(connections),
            )
        elif kind == "multires":
            blocks = variant.get("blocks_per_path", "all")
            if blocks == "all":
                blocks = num_levels
            elif blocks == "half":
                blocks = num_levels // 2
            multires = MultiResSpec(blocks_per_path=int(blocks))
        elif kind != "baseline":
            raise ConfigurationError(f"unknown variant kind {kind!r}")
        spec = cls(
            num_levels=num_levels,
            extra_filters_per_level=int(d.get("extra_filters_per_level", 24)),
            kernel_down=int(d.get("kernel_down", 15)),
            kernel_up=int(d.get("kernel_up", 5)),
            input_length=int(d.get("input_length", 16384)),
            audio_channels=int(d.get("audio_channels", 2)),
            num_sources=int(d.get("num_sources", 2)),
            res_path=res_path,
            multires=multires,
            seed=int(d.get("seed", 0)),
        )
        spec.validate()
        return spec


@dataclass(frozen=True)
class FreezeSpec:
    """Weight regime: which groups stay random, which skips are kept.

    Regimes: ``U`` trains everything, ``J`` keeps the down-sampling path
    (plus bottleneck and any skip-path convolutions) at random weights,
    ``L`` keeps the up-sampling path random while the final output layer
    stays trainable. ``skip_subset`` prunes skip connections and is only
    meaningful in regime ``L``; the skip fed directly from the input
    signal is always kept.
    """

    regime: str = "U"
    skip_subset: str = "all"
    freeze_seed: int = 0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigurationError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.skip_subset not in SKIP_SUBSETS:
            raise ConfigurationError(
                f"skip_subset must be one of {SKIP_SUBSETS}, got {self.skip_subset!r}"
            )
        if self.skip_subset != "all" and self.regime != "L":
            raise ConfigurationError("skip_subset other than 'all' requires regime 'L'")

    def enabled_skip_levels(self, num_levels: int) -> list[int]:
        """1-based encoder levels whose skip connection stays in the graph."""
        if self.skip_subset == "all":
            return list(range(1, num_levels + 1))
        if self.skip_subset == "first_3":
            return list(range(1, min(3, num_levels) + 1))
        return list(range(max(1, num_levels - 2), num_levels + 1))

    def to_dict(self) -> dict[str, Any]:
        return {
            "regime": self.regime,
            "skip_subset": self.skip_subset,
            "freeze_seed": self.freeze_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FreezeSpec":
        spec = cls(
            regime=str(d.get("regime", "U")),
            skip_subset=str(d.get("skip_subset", "all")),
            freeze_seed=int(d.get("freeze_seed", 0)),
        )
        spec.validate()
        return spec


def model_name(arch: ArchitectureSpec, freeze: FreezeSpec,
               stages: int = 1, identity_loss: bool = False) -> str:
    """Canonical run name for a (architecture, regime, training) combination.

    Mirrors the family naming used throughout reports: U1/J1 baselines,
    U2_i_j for res-path variants, U3_k for multires, U4_s for multi-stage
    training, U5 for identity-loss training, and L / L_first3 / L_last3
    for the decoder-frozen regimes.
    """
    if freeze.regime == "L":
        suffix = {"all": "", "first_3": "_first3", "last_3": "_last3"}[freeze.skip_subset]
        return "L" + suffix
    prefix = freeze.regime  # "U" or "J"
    tags: list[str] = []
    if arch.res_path is not None:
        base = f"{prefix}2_{arch.res_path.conv_depth}_{arch.res_path.connection_count}"
    elif arch.multires is not None:
        base = f"{prefix}3_{arch.multires.blocks_per_path}"
    elif stages > 1:
        base = f"{prefix}4_{stages}"
    elif identity_loss:
        base = f"{prefix}5"
    else:
        base = f"{prefix}1"
    if arch.res_path is not None or arch.multires is not None:
        if stages > 1:
            tags.append(f"s{stages}")
        if identity_loss:
            tags.append("idt")
    elif stages > 1 and identity_loss:
        tags.append("idt")
    return "_".join([base, *tags]) if tags else base
