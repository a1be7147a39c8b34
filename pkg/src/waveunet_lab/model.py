"""Length-preserving 1-D encoder-decoder separator.

The encoder alternates a length-preserving convolution with decimation by
two; the decoder mirrors it with linear-interpolation upsampling and skip
concatenations. The network predicts one waveform per source for all but
the last source, which is the input mixture minus the sum of the others,
so predicted sources always add up to the mixture exactly.

Every parameter belongs to exactly one named group (``encoder.3``,
``bottleneck``, ``decoder.7``, ``res_path.9``, ``multires_down.2``, ...);
the freeze regimes and the checkpoint format operate on those groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError
from .specs import ArchitectureSpec
from .variants import LEAKY_SLOPE, MultiResPair, MultiResSingle, ResPath, _same_pad


def decimate(x: torch.Tensor) -> torch.Tensor:
    """Keep every even-indexed sample along the last axis (halves length)."""
    n = x.shape[-1]
    if n % 2 != 0:
        raise ShapeError(f"decimate requires an even length, got {n}")
    return x[..., ::2]


def upsample_linear(x: torch.Tensor) -> torch.Tensor:
    """Double the last axis: out[2i] = x[i], out[2i+1] = midpoint, edge replicated."""
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("upsample_linear requires a non-empty input")
    nxt = torch.cat([x[..., 1:], x[..., -1:]], dim=-1)
    mid = (x + nxt) / 2
    out = torch.stack([x, mid], dim=-1)
    return out.reshape(*x.shape[:-1], 2 * n)


class ConvBlock(nn.Module):
    """Length-preserving convolution with a leaky rectifier."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(in_channels, out_channels, kernel, padding=_same_pad(kernel))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


@dataclass(frozen=True)
class _Stage:
    """One walk step through a path: a plain level, or a multires block."""

    kind: str               # "plain" | "multires1" | "multires2"
    levels: tuple[int, ...]  # 1-based level(s), shallowest first
    block: int = 0           # 1-based multires block index (0 for plain)


def _plan_stages(spec: ArchitectureSpec) -> list[_Stage]:
    levels = range(1, spec.num_levels + 1)
    if spec.multires is None:
        return [_Stage("plain", (i,)) for i in levels]
    if spec.multires.levels_per_block(spec.num_levels) == 1:
        return [_Stage("multires1", (i,), block=i) for i in levels]
    return [
        _Stage("multires2", (lo, lo + 1), block=(lo + 1) // 2)
        for lo in range(1, spec.num_levels + 1, 2)
    ]


class Separator(nn.Module):
    """Separator network built from an ``ArchitectureSpec``.

    ``enabled_skips`` lists the 1-based encoder levels whose skip
    connection is wired into the decoder; the skip fed straight from the
    input mixture into the output layer is always present. Weights are
    initialized from ``spec.seed`` alone, so equal specs produce
    bit-identical parameters.
    """

    def __init__(self, spec: ArchitectureSpec, enabled_skips: list[int] | None = None):
        super().__init__()
        spec.validate()
        self.spec = spec
        if enabled_skips is None:
            enabled_skips = list(range(1, spec.num_levels + 1))
        bad = [i for i in enabled_skips if not 1 <= i <= spec.num_levels]
        if bad:
            raise ConfigurationError(f"enabled_skips outside [1, {spec.num_levels}]: {bad}")
        self.enabled_skips = tuple(sorted(set(enabled_skips)))

        fc = spec.extra_filters_per_level
        k_down, k_up = spec.kernel_down, spec.kernel_up
        stages = _plan_stages(spec)
        self._stages = stages

        def f(level: int) -> int:
            return fc * level

        def skip_width(level: int) -> int:
            return f(level) if level in self.enabled_skips else 0

        down_ops: list[nn.Module] = []
        in_ch = spec.audio_channels
        for st in stages:
            if st.kind == "plain":
                (i,) = st.levels
                down_ops.append(ConvBlock(in_ch, f(i), k_down))
                in_ch = f(i)
            elif st.kind == "multires1":
                (i,) = st.levels
                down_ops.append(MultiResSingle(in_ch, f(i), k_down))
                in_ch = f(i)
            else:
                lo, hi = st.levels
                down_ops.append(MultiResPair(in_ch, f(lo), f(lo), f(hi), k_down))
                in_ch = f(hi)
        self.down_ops = nn.ModuleList(down_ops)
        self.bottleneck = ConvBlock(f(spec.num_levels), spec.bottleneck_filters, k_down)

        up_ops: list[nn.Module] = []
        prev = spec.bottleneck_filters
        for st in reversed(stages):
            if st.kind == "plain":
                (i,) = st.levels
                up_ops.append(ConvBlock(prev + skip_width(i), f(i), k_up))
                prev = f(i)
            elif st.kind == "multires1":
                (i,) = st.levels
                up_ops.append(MultiResSingle(prev + skip_width(i), f(i), k_up))
                prev = f(i)
            else:
                lo, hi = st.levels
                up_ops.append(
                    MultiResPair(prev + skip_width(hi), f(hi), f(hi) + skip_width(lo), f(lo), k_up)
                )
                prev = f(lo)
        self.up_ops = nn.ModuleList(up_ops)

        if spec.res_path is not None:
            self.res_paths = nn.ModuleDict(
                {
                    str(level): ResPath(f(level), k_down, spec.res_path.conv_depth)
                    for level in spec.res_path.levels(spec.num_levels)
                }
            )
        else:
            self.res_paths = nn.ModuleDict()

        # output head sees the last decoder features plus the raw mixture
        self.output_layer = nn.Conv1d(
            fc + spec.audio_channels, (spec.num_sources - 1) * spec.audio_channels, 1
        )

        self._group_by_param = self._index_groups()
        self.reset_parameters(spec.seed)

    # ----- parameter bookkeeping -------------------------------------------------

    def _index_groups(self) -> dict[str, str]:
        groups: dict[str, str] = {}
        for idx, st in enumerate(self._stages):
            if st.kind == "plain":
                down = f"encoder.{st.levels[0]}"
                up = f"decoder.{st.levels[0]}"
            else:
                down = f"multires_down.{st.block}"
                up = f"multires_up.{st.block}"
            for name, _ in self.down_ops[idx].named_parameters():
                groups[f"down_ops.{idx}.{name}"] = down
            up_idx = len(self._stages) - 1 - idx
            for name, _ in self.up_ops[up_idx].named_parameters():
                groups[f"up_ops.{up_idx}.{name}"] = up
        for name, _ in self.bottleneck.named_parameters():
            groups[f"bottleneck.{name}"] = "bottleneck"
        for level, module in self.res_paths.items():
            for name, _ in module.named_parameters():
                groups[f"res_paths.{level}.{name}"] = f"res_path.{level}"
        for name, _ in self.output_layer.named_parameters():
            groups[f"output_layer.{name}"] = "output_layer"
        return groups

    def group_of(self, param_name: str) -> str:
        return self._group_by_param[param_name]

    def group_names(self) -> list[str]:
        return sorted(set(self._group_by_param.values()))

    def parameter_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        """Map group name to its (parameter name, parameter) pairs, sorted."""
        out: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in self.group_names()}
        for name, param in sorted(self.named_parameters()):
            out[self._group_by_param[name]].append((name, param))
        return out

    def reset_parameters(self, seed: int) -> None:
        """Deterministic uniform fan-in initialization of every convolution."""
        gen = torch.Generator().manual_seed(seed)
        init_convolutions(self, gen)

    # ----- forward ---------------------------------------------------------------

    def forward(self, mix: torch.Tensor) -> torch.Tensor:
        spec = self.spec
        if mix.dim() != 3:
            raise ShapeError(f"expected input [batch, channels, time], got {tuple(mix.shape)}")
        if mix.shape[1] != spec.audio_channels:
            raise ShapeError(
                f"expected {spec.audio_channels} audio channels, got {mix.shape[1]}"
            )
        if mix.shape[2] != spec.input_length:
            raise ShapeError(
                f"expected input length {spec.input_length}, got {mix.shape[2]}"
            )

        skips: dict[int, torch.Tensor] = {}
        x = mix
        for st, op in zip(self._stages, self.down_ops):
            if st.kind in ("plain", "multires1"):
                (i,) = st.levels
                x = op(x)
                skips[i] = x
                x = decimate(x)
            else:
                lo, hi = st.levels
                a = op.member_a(x)
                skips[lo] = a
                a_down = decimate(a)
                b = op.member_b(a_down)
                y = op.combine(a_down, b)
                skips[hi] = y
                x = decimate(y)
        x = self.bottleneck(x)

        for level in self.res_paths:
            skips[int(level)] = self.res_paths[level](skips[int(level)])

        for st, op in zip(reversed(self._stages), self.up_ops):
            if st.kind in ("plain", "multires1"):
                (i,) = st.levels
                x = upsample_linear(x)
                x = self._concat_skip(x, skips[i], i)
                x = op(x)
            else:
                lo, hi = st.levels
                x = upsample_linear(x)
                x = self._concat_skip(x, skips[hi], hi)
                a = op.member_a(x)
                a_up = upsample_linear(a)
                xb = self._concat_skip(a_up, skips[lo], lo)
                b = op.member_b(xb)
                x = op.combine(a_up, b)

        head = torch.tanh(self.output_layer(torch.cat([x, mix], dim=1)))
        batch = mix.shape[0]
        predicted = head.reshape(batch, spec.num_sources - 1, spec.audio_channels, -1)
        residual = mix - predicted.sum(dim=1)
        return torch.cat([predicted, residual.unsqueeze(1)], dim=1)

    def _concat_skip(self, x: torch.Tensor, skip: torch.Tensor, level: int) -> torch.Tensor:
        if level not in self.enabled_skips:
            return x
        if skip.shape[-1] != x.shape[-1]:
            raise ShapeError(
                f"skip at level {level} has length {skip.shape[-1]}, decoder expects {x.shape[-1]}"
            )
        return torch.cat([x, skip], dim=1)

    # ----- introspection ---------------------------------------------------------

    def describe(self) -> dict:
        """Structural summary: per-stage channel widths and concat sizes."""
        spec = self.spec
        fc = spec.extra_filters_per_level
        stages = []
        for idx, st in enumerate(self._stages):
            entry: dict = {"kind": st.kind, "levels": list(st.levels)}
            if st.kind != "plain":
                entry["block"] = st.block
                entry["concat_channels_down"] = self.down_ops[idx].concat_channels
            stages.append(entry)
        return {
            "num_levels": spec.num_levels,
            "filters_per_level": [fc * i for i in range(1, spec.num_levels + 1)],
            "bottleneck_filters": spec.bottleneck_filters,
            "bottleneck_length": spec.bottleneck_length,
            "stages": stages,
            "enabled_skips": list(self.enabled_skips),
            "res_path_levels": sorted(int(k) for k in self.res_paths),
            "groups": self.group_names(),
        }


def init_convolutions(module: nn.Module, gen: torch.Generator) -> None:
    """Uniform fan-in init over every Conv1d, in sorted-name order."""
    for _, m in sorted(module.named_modules(), key=lambda kv: kv[0]):
        if isinstance(m, nn.Conv1d):
            fan_in = m.in_channels * m.kernel_size[0]
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)


def build_separator(spec: ArchitectureSpec, enabled_skips: list[int] | None = None) -> Separator:
    """Validate the spec and construct a seeded separator."""
    spec.validate()
    return Separator(spec, enabled_skips=enabled_skips)


def count_parameters(separator: Separator, trainable_only: bool = False) -> int:
    """Exact scalar parameter count, optionally restricted to trainable ones."""
    return sum(
        p.numel() for p in separator.parameters() if p.requires_grad or not trainable_only
    )
