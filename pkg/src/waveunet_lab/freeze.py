"""Weight regimes: partition parameter groups into trainable and frozen.

Regime ``J`` fixes the whole down-sampling path (encoder levels, the
bottleneck, skip-path convolutions and encoder-side multires blocks) to
random weights; regime ``L`` fixes the up-sampling path while keeping the
output layer trainable; regime ``U`` trains everything. Frozen groups are
re-drawn from ``freeze_seed`` so a J/U pair shares the trainable part's
initialization while the frozen randomness stays independently
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .checkpoint import Checkpoint
from .errors import ContractError
from .model import Separator, build_separator, init_convolutions
from .specs import FreezeSpec

_FROZEN_PREFIXES = {
    "U": (),
    "J": ("encoder.", "bottleneck", "res_path.", "multires_down."),
    "L": ("decoder.", "multires_up."),
}


def frozen_group_names(spec: FreezeSpec, group_names: list[str]) -> list[str]:
    prefixes = _FROZEN_PREFIXES[spec.regime]
    return sorted(g for g in group_names if g.startswith(prefixes)) if prefixes else []


@dataclass
class FreezePartition:
    """Disjoint split of a separator's parameter groups."""

    separator: Separator
    spec: FreezeSpec
    trainable_groups: list[str]
    frozen_groups: list[str]
    disabled_skips: list[int] = field(default_factory=list)

    def trainable_parameters(self) -> list[nn.Parameter]:
        groups = self.separator.parameter_groups()
        return [p for g in self.trainable_groups for _, p in groups[g]]

    def frozen_parameters(self) -> list[nn.Parameter]:
        groups = self.separator.parameter_groups()
        return [p for g in self.frozen_groups for _, p in groups[g]]


def apply_freeze(separator: Separator, spec: FreezeSpec) -> FreezePartition:
    """Apply a weight regime and return the resulting group partition.

    Skips disabled by the regime are removed from the forward graph, which
    rebuilds the decoder with adjusted concatenation widths. Frozen groups
    are re-initialized from ``freeze_seed`` and excluded from gradients.
    """
    spec.validate()
    arch = separator.spec
    enabled = spec.enabled_skip_levels(arch.num_levels)
    disabled = sorted(set(range(1, arch.num_levels + 1)) - set(enabled))
    if tuple(enabled) != separator.enabled_skips:
        separator = build_separator(arch, enabled_skips=enabled)

    names = separator.group_names()
    frozen = frozen_group_names(spec, names)
    unknown = [g for g in frozen if g not in names]
    if unknown:
        raise ContractError(f"freeze selected unknown groups: {unknown}")
    trainable = sorted(set(names) - set(frozen))

    if frozen:
        gen = torch.Generator().manual_seed(spec.freeze_seed)
        frozen_set = set(frozen)
        for mod_name, module in sorted(separator.named_modules(), key=lambda kv: kv[0]):
            if isinstance(module, nn.Conv1d) and (
                separator.group_of(f"{mod_name}.weight") in frozen_set
            ):
                init_convolutions(module, gen)
        groups = separator.parameter_groups()
        for g in frozen:
            for _, param in groups[g]:
                param.requires_grad_(False)

    return FreezePartition(
        separator=separator,
        spec=spec,
        trainable_groups=trainable,
        frozen_groups=frozen,
        disabled_skips=disabled,
    )


def verify_frozen(before: Checkpoint, after: Checkpoint, spec: FreezeSpec) -> bool:
    """True iff every group frozen by ``spec`` is byte-identical."""
    if before.architecture != after.architecture:
        raise ContractError("checkpoints come from different architecture specs")
    if before.enabled_skips != after.enabled_skips:
        raise ContractError("checkpoints come from different skip configurations")
    if sorted(before.groups) != sorted(after.groups):
        raise ContractError("checkpoints carry different parameter groups")
    for group in frozen_group_names(spec, sorted(before.groups)):
        if before.group_bytes(group) != after.group_bytes(group):
            return False
    return True
