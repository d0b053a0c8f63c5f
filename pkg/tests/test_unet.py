"""Model assembly: shapes, naming, init independence, end-to-end gradients."""

import numpy as np
import pytest

from rootnet import tensor as T
from rootnet import unet
from rootnet.unet import ArchSpec


def small_spec(depth=4, base=4):
    return ArchSpec(depth=depth, base_width=base)


class TestArchSpec:
    def test_roundtrip_dict(self):
        s = ArchSpec(variant="vgg13", depth=5, base_width=64)
        assert ArchSpec.from_dict(s.to_dict()) == s

    def test_invalid_rejected(self):
        with pytest.raises(unet.ConfigError):
            ArchSpec(depth=0)
        with pytest.raises(unet.ConfigError):
            ArchSpec(variant="resnet")


class TestNaming:
    def test_partition_of_every_name(self):
        params = unet.build(small_spec(), seed=0)
        parts = {unet.partition(n) for n in params.names()}
        assert parts == {"encoder", "decoder", "head"}
        for name in params.names():
            p = unet.partition(name)
            if name.startswith(("enc", "bottleneck")):
                assert p == "encoder"
            elif name.startswith("dec"):
                assert p == "decoder"
            else:
                assert name.startswith("head") and p == "head"

    def test_malformed_name_rejected(self):
        with pytest.raises(unet.NameFormatError):
            unet.partition("enc_one.conv1.weight")

    def test_count_matches_build(self):
        for spec in (small_spec(4, 4), small_spec(5, 8), ArchSpec(variant="vgg13", depth=5)):
            params = unet.build(spec, seed=1)
            assert unet.count_params(spec) == sum(t.data.size for _, t in params.items())

    def test_vgg13_encoder_widths(self):
        params = unet.build(ArchSpec(variant="vgg13", depth=5), seed=0)
        assert params["enc0.conv1.weight"].data.shape[0] == 64
        assert params["enc4.conv1.weight"].data.shape[0] == 512
        assert params["bottleneck.conv1.weight"].data.shape[0] == 512


class TestInitStreams:
    def test_same_name_same_seed_same_values(self):
        a = unet.init_tensor("enc0.conv1.weight", (4, 3, 3, 3), seed=7)
        b = unet.init_tensor("enc0.conv1.weight", (4, 3, 3, 3), seed=7)
        assert np.array_equal(a, b)

    def test_different_names_different_values(self):
        a = unet.init_tensor("enc0.conv1.weight", (4, 3, 3, 3), seed=7)
        b = unet.init_tensor("enc0.conv2.weight", (4, 3, 3, 3), seed=7)  # wrong shape on purpose? same shape
        assert not np.array_equal(a, b)

    def test_stream_independent_of_other_params(self):
        """A parameter's init depends only on (name, seed), not on which
        other parameters exist - the weight-surgery invariant."""
        p4 = unet.build(small_spec(4), seed=3)
        p5 = unet.build(small_spec(5), seed=3)
        shared = [
            n
            for n in p4.names()
            if n in p5 and p4[n].data.shape == p5[n].data.shape
        ]
        assert any(n.startswith("enc") for n in shared)
        for name in shared:
            assert np.array_equal(p4[name].data, p5[name].data), name

    def test_build_deterministic(self):
        a = unet.build(small_spec(), seed=11)
        b = unet.build(small_spec(), seed=11)
        assert a.names() == b.names()
        for n in a.names():
            assert np.array_equal(a[n].data, b[n].data)


class TestPadding:
    def test_pad_record_multiples(self):
        rec = unet.pad_record(37, 51, depth=4)
        assert rec.padded_height % 16 == 0 and rec.padded_width % 16 == 0
        assert rec.padded_height - 37 < 16 and rec.padded_width - 51 < 16

    def test_aligned_input_unpadded(self):
        rec = unet.pad_record(64, 32, depth=4)
        assert (rec.padded_height, rec.padded_width) == (64, 32)

    def test_pad_crop_roundtrip(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 3, 37, 51)).astype(np.float32)
        rec = unet.pad_record(37, 51, depth=4)
        padded = unet.pad_input(x, rec)
        assert padded.shape[2] % 16 == 0 and padded.shape[3] % 16 == 0
        assert np.array_equal(unet.crop_output(padded, rec), x)


class TestForward:
    def test_output_shape_and_range(self):
        spec = small_spec()
        params = unet.build(spec, seed=0)
        x = T.Tensor(np.random.default_rng(1).random((2, 3, 48, 32)).astype(np.float32))
        y = unet.forward(spec, params, x)
        assert y.data.shape == (2, 1, 48, 32)
        assert np.all(y.data > 0) and np.all(y.data < 1)

    @pytest.mark.parametrize("hw", [(37, 51), (16, 16), (33, 90)])
    def test_same_size_odd_inputs(self, hw):
        spec = small_spec()
        params = unet.build(spec, seed=0)
        h, w = hw
        x = T.Tensor(np.random.default_rng(2).random((1, 3, h, w)).astype(np.float32))
        y = unet.forward(spec, params, x)
        assert y.data.shape == (1, 1, h, w)

    def test_forward_deterministic(self):
        spec = small_spec()
        params = unet.build(spec, seed=0)
        x = np.random.default_rng(3).random((1, 3, 32, 32)).astype(np.float32)
        y1 = unet.forward(spec, params, T.Tensor(x)).data
        y2 = unet.forward(spec, params, T.Tensor(x)).data
        assert np.array_equal(y1, y2)


class TestEndToEndGradient:
    def test_gradcheck_through_whole_net(self):
        """Finite-difference check of loss wrt a few parameters, float64."""
        spec = ArchSpec(depth=2, base_width=2)
        params = unet.build(spec, seed=5)
        rng = np.random.default_rng(6)
        x64 = rng.random((1, 3, 8, 8))
        target = (rng.random((1, 1, 8, 8)) > 0.8).astype(np.float64)

        names = ["enc0.conv1.weight", "dec0.up.weight", "head.weight", "head.bias"]
        tensors = [T.Tensor(params[n].data.astype(np.float64), requires_grad=True) for n in names]

        def fn(*ts):
            work = {k: T.Tensor(v.data.astype(np.float64)) for k, v in params.items()}
            for n, t in zip(names, ts):
                work[n] = t
            logits = _forward_with(spec, work, x64)
            return T.weighted_bce(logits, target, pos_weight=2.0)

        err = T.grad_check(fn, tensors, rng=rng, max_coords=4)
        assert err < 1e-3


def _forward_with(spec, tensor_params, x64):
    """forward_logits over an existing dict of Tensors (float64 path)."""
    return unet.forward_logits(spec, tensor_params, T.Tensor(x64))
