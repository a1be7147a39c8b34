import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import waveunet_lab as wl
from waveunet_lab.errors import ConfigurationError, ShapeError

from conftest import mix_consistency_error, random_mix, tiny_arch


class TestDecimate:
    def test_definition(self):
        out = wl.decimate(torch.tensor([1.0, 2.0, 3.0, 4.0]))
        assert out.tolist() == [1.0, 3.0]

    def test_constant_sequence(self):
        out = wl.decimate(torch.tensor([5.0] * 6))
        assert out.tolist() == [5.0, 5.0, 5.0]

    def test_halves_length(self):
        assert wl.decimate(torch.arange(16.0)).shape[-1] == 8

    def test_odd_length_rejected(self):
        with pytest.raises(ShapeError):
            wl.decimate(torch.arange(5.0))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64).filter(lambda v: len(v) % 2 == 0))
    def test_keeps_even_indices(self, values):
        out = wl.decimate(torch.tensor(values, dtype=torch.float64))
        assert out.tolist() == values[::2]


class TestUpsampleLinear:
    def test_definition(self):
        out = wl.upsample_linear(torch.tensor([1.0, 3.0]))
        assert out.tolist() == [1.0, 2.0, 3.0, 3.0]

    def test_single_sample(self):
        assert wl.upsample_linear(torch.tensor([4.0])).tolist() == [4.0, 4.0]

    def test_constant_sequence(self):
        out = wl.upsample_linear(torch.full((6,), 2.5))
        assert out.tolist() == [2.5] * 12

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            wl.upsample_linear(torch.empty(0))

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=32))
    @settings(max_examples=50)
    def test_interleaves_midpoints(self, values):
        x = torch.tensor(values, dtype=torch.float64)
        out = wl.upsample_linear(x)
        assert out.shape[-1] == 2 * len(values)
        assert out[0::2].tolist() == values
        for i in range(len(values) - 1):
            assert out[2 * i + 1].item() == pytest.approx((values[i] + values[i + 1]) / 2)
        assert out[-1].item() == values[-1]


class TestBuild:
    def test_paper_scale_has_ten_levels_each_path(self):
        spec = wl.ArchitectureSpec()  # defaults: 10 levels, 24 filters, 16384 samples
        sep = wl.build_separator(spec)
        groups = sep.group_names()
        assert [f"encoder.{i}" for i in range(1, 11)] == sorted(
            (g for g in groups if g.startswith("encoder.")), key=lambda g: int(g.split(".")[1])
        )
        assert [f"decoder.{i}" for i in range(1, 11)] == sorted(
            (g for g in groups if g.startswith("decoder.")), key=lambda g: int(g.split(".")[1])
        )
        mix = random_mix(spec, batch=1)
        out = sep(mix)
        assert tuple(out.shape) == (1, 2, 2, 16384)
        assert mix_consistency_error(out, mix) < 1e-5

    def test_bottleneck_time_length(self):
        spec = tiny_arch(num_levels=2, extra_filters_per_level=1, input_length=8,
                         kernel_down=3, kernel_up=3)
        sep = wl.build_separator(spec)
        assert spec.bottleneck_length == 2
        seen = {}

        def record(mod, inp, out):
            seen["length"] = out.shape[-1]

        handle = sep.bottleneck.register_forward_hook(record)
        sep(random_mix(spec, batch=1))
        handle.remove()
        assert seen["length"] == 2

    def test_same_seed_bit_identical(self):
        spec = tiny_arch(seed=7)
        a, b = wl.build_separator(spec), wl.build_separator(spec)
        for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_different_seed_differs(self):
        a = wl.build_separator(tiny_arch(seed=7))
        b = wl.build_separator(tiny_arch(seed=8))
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_invalid_specs_name_the_invariant(self):
        with pytest.raises(ConfigurationError, match="divisible"):
            wl.build_separator(tiny_arch(input_length=500))
        with pytest.raises(ConfigurationError, match="num_levels"):
            wl.build_separator(tiny_arch(num_levels=0))
        with pytest.raises(ConfigurationError, match="kernel_down"):
            wl.build_separator(tiny_arch(kernel_down=4))
        with pytest.raises(ConfigurationError, match="num_sources"):
            wl.build_separator(tiny_arch(num_sources=1))


class TestForward:
    def test_output_shape(self, separator, arch):
        mix = random_mix(arch, batch=3)
        assert tuple(separator(mix).shape) == (3, 2, 1, arch.input_length)

    def test_mix_consistency(self, separator, arch):
        mix = random_mix(arch, batch=2, seed=3)
        assert mix_consistency_error(separator(mix), mix) < 1e-5

    def test_zero_mix_outputs_bounded(self, separator, arch):
        out = separator(torch.zeros(1, 1, arch.input_length))
        predicted = out[:, : arch.num_sources - 1]
        assert float(predicted.abs().max()) <= 1.0

    def test_wrong_length_rejected(self, separator, arch):
        with pytest.raises(ShapeError, match="length"):
            separator(torch.zeros(1, 1, arch.input_length // 2))

    def test_wrong_channels_rejected(self, separator):
        with pytest.raises(ShapeError, match="channels"):
            separator(torch.zeros(1, 3, 512))

    def test_wrong_rank_rejected(self, separator):
        with pytest.raises(ShapeError):
            separator(torch.zeros(512))

    def test_skip_shapes_match_decoder_expectations(self, arch):
        sep = wl.build_separator(arch)
        fc = arch.extra_filters_per_level
        lengths = {}

        def hook(level):
            def fn(mod, inp, out):
                lengths[level] = tuple(out.shape)
            return fn

        handles = [
            sep.down_ops[i].register_forward_hook(hook(i + 1))
            for i in range(arch.num_levels)
        ]
        sep(random_mix(arch, batch=2))
        for h in handles:
            h.remove()
        for level in range(1, arch.num_levels + 1):
            expected = (2, fc * level, arch.input_length // 2 ** (level - 1))
            assert lengths[level] == expected


class TestParameterGroups:
    def test_partition_total_and_disjoint(self, separator):
        groups = separator.parameter_groups()
        names = [n for params in groups.values() for n, _ in params]
        assert sorted(names) == sorted(n for n, _ in separator.named_parameters())
        assert len(names) == len(set(names))

    def test_count_tiny_hand_enumeration(self):
        # L=1, Fc=1, kernels 3, mono, two sources:
        #   encoder.1  Conv(1->1,k3):  3 + 1 = 4
        #   bottleneck Conv(1->2,k3):  6 + 2 = 8
        #   decoder.1  Conv(3->1,k3):  9 + 1 = 10   (bottleneck 2ch + skip 1ch)
        #   output     Conv(2->1,k1):  2 + 1 = 3    (decoder 1ch + input 1ch)
        spec = tiny_arch(num_levels=1, extra_filters_per_level=1, kernel_down=3,
                         kernel_up=3, input_length=8)
        sep = wl.build_separator(spec)
        assert wl.count_parameters(sep) == 25

    def test_trainable_only_fully_frozen_is_zero(self, separator):
        for p in separator.parameters():
            p.requires_grad_(False)
        assert wl.count_parameters(separator, trainable_only=True) == 0
        assert wl.count_parameters(separator) > 0

    def test_describe_documents_structure(self, separator, arch):
        desc = separator.describe()
        assert desc["bottleneck_length"] == arch.input_length // 2 ** arch.num_levels
        assert desc["filters_per_level"] == [4, 8, 12]
        assert len(desc["stages"]) == arch.num_levels
