import pytest
import torch

import waveunet_lab as wl
from waveunet_lab.errors import ContractError

from conftest import tiny_arch


def test_round_trip_bit_exact(tmp_path, separator):
    p1 = wl.save_checkpoint(tmp_path / "a.ckpt", separator)
    ck = wl.load_checkpoint(p1)
    p2 = wl.save_checkpoint(tmp_path / "b.ckpt", ck)
    assert p1.read_bytes() == p2.read_bytes()


def test_rebuild_restores_parameters(tmp_path, separator):
    path = wl.save_checkpoint(tmp_path / "m.ckpt", separator)
    rebuilt = wl.load_checkpoint(path).build()
    for (name, a), (_, b) in zip(separator.named_parameters(), rebuilt.named_parameters()):
        assert torch.equal(a, b), name


def test_carries_spec_freeze_and_extra(tmp_path, arch):
    sep = wl.build_separator(arch)
    freeze = wl.FreezeSpec(regime="J", freeze_seed=5)
    path = wl.save_checkpoint(tmp_path / "m.ckpt", sep, freeze=freeze,
                              extra={"model": "J1"})
    ck = wl.load_checkpoint(path)
    assert ck.spec == arch
    assert ck.freeze_spec == freeze
    assert ck.extra == {"model": "J1"}


def test_variant_groups_present_in_checkpoint(tmp_path):
    arch = tiny_arch(res_path=wl.ResPathSpec(conv_depth=2, connection_count=2))
    path = wl.save_checkpoint(tmp_path / "m.ckpt", wl.build_separator(arch))
    ck = wl.load_checkpoint(path)
    assert {"res_path.2", "res_path.3"} <= set(ck.groups)


def test_reduced_skip_graph_round_trips(tmp_path, arch):
    part = wl.apply_freeze(
        wl.build_separator(arch),
        wl.FreezeSpec(regime="L", skip_subset="first_3", freeze_seed=1),
    )
    path = wl.save_checkpoint(tmp_path / "m.ckpt", part.separator, freeze=part.spec)
    rebuilt = wl.load_checkpoint(path).build()
    assert rebuilt.enabled_skips == part.separator.enabled_skips
    for (name, a), (_, b) in zip(
        part.separator.named_parameters(), rebuilt.named_parameters()
    ):
        assert torch.equal(a, b), name


def test_group_bytes_are_stable_per_group(tmp_path, separator):
    ck = wl.snapshot(separator)
    again = wl.snapshot(separator)
    for group in ck.groups:
        assert ck.group_bytes(group) == again.group_bytes(group)


def test_non_checkpoint_file_rejected(tmp_path):
    bogus = tmp_path / "x.ckpt"
    bogus.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ContractError):
        wl.load_checkpoint(bogus)
