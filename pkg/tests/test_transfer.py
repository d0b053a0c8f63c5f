"""Weight surgery: provenance, partition isolation, classifier mapping."""

import numpy as np
import pytest

from rootnet import checkpoint as C
from rootnet import transfer as X
from rootnet import unet
from rootnet.transfer import InitMode
from rootnet.unet import ArchSpec


SPEC = ArchSpec(depth=2, base_width=4)


@pytest.fixture(scope="module")
def source_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("src") / "source.ckpt"
    params = unet.build(SPEC, seed=100)
    C.save(params, SPEC, path)
    return path


@pytest.fixture(scope="module")
def classifier_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("cls") / "classifier.ckpt"
    params = X.build_classifier(SPEC, n_classes=4, seed=50)
    X.save_classifier(params, SPEC, path)
    return path


class TestScratch:
    def test_all_random(self):
        params, prov = X.init_model(SPEC, InitMode(mode=X.SCRATCH), seed=1)
        assert set(prov.values()) == {"random"}
        assert set(prov) == set(params.names())

    def test_matches_plain_build(self):
        a, _ = X.init_model(SPEC, InitMode(mode=X.SCRATCH), seed=1)
        b = unet.build(SPEC, seed=1)
        for n in b.names():
            assert np.array_equal(a[n].data, b[n].data)


class TestEncoderFromCheckpoint:
    def test_provenance_follows_partition(self, source_ckpt):
        mode = InitMode(mode="encoder_from_checkpoint", source=str(source_ckpt))
        params, prov = X.init_model(SPEC, mode, seed=2)
        for n in params.names():
            part = unet.partition(n)
            assert prov[n] == ("copied" if part == "encoder" else "random"), n

    def test_copied_values_match_source(self, source_ckpt):
        mode = InitMode(mode="encoder_from_checkpoint", source=str(source_ckpt))
        params, prov = X.init_model(SPEC, mode, seed=2)
        _, src = C.load(source_ckpt)
        for n, tag in prov.items():
            if tag == "copied":
                assert np.array_equal(params[n].data, src[n].data)

    def test_random_partitions_unperturbed(self, source_ckpt):
        """Surgery must not shift the random init of untouched partitions."""
        mode = InitMode(mode="encoder_from_checkpoint", source=str(source_ckpt))
        params, prov = X.init_model(SPEC, mode, seed=2)
        scratch, _ = X.init_model(SPEC, InitMode(mode=X.SCRATCH), seed=2)
        for n, tag in prov.items():
            if tag == "random":
                assert np.array_equal(params[n].data, scratch[n].data), n


class TestEncoderDecoderFromCheckpoint:
    def test_only_head_random(self, source_ckpt):
        mode = InitMode(mode="encoder_decoder_from_checkpoint", source=str(source_ckpt))
        params, prov = X.init_model(SPEC, mode, seed=3)
        for n in params.names():
            part = unet.partition(n)
            assert prov[n] == ("random" if part == "head" else "copied"), n

    def test_head_always_fresh(self, source_ckpt):
        mode = InitMode(mode="encoder_decoder_from_checkpoint", source=str(source_ckpt))
        params, _ = X.init_model(SPEC, mode, seed=3)
        _, src = C.load(source_ckpt)
        assert not np.array_equal(params["head.weight"].data, src["head.weight"].data)


class TestEncoderFromClassifier:
    def test_mapping_copies_encoder_convs(self, classifier_ckpt):
        mode = InitMode(mode="encoder_from_classifier", source=str(classifier_ckpt))
        params, prov = X.init_model(SPEC, mode, seed=4)
        copied = [n for n, t in prov.items() if t == "copied"]
        assert copied
        assert all(unet.partition(n) == "encoder" for n in copied)

    def test_vgg13_mapping_copies_twenty_tensors(self, tmp_path):
        spec = ArchSpec(variant="vgg13", depth=5)
        path = tmp_path / "vgg_cls.ckpt"
        cls = X.build_classifier(spec, n_classes=4, seed=5)
        X.save_classifier(cls, spec, path)
        params = unet.build(spec, seed=6)
        copied = X.map_classifier_weights(path, spec, params)
        assert len(copied) == 20  # 5 stages x 2 convs x (weight, bias)

    def test_schedule_mismatch_rejected(self, classifier_ckpt):
        wrong = ArchSpec(depth=3, base_width=4)
        params = unet.build(wrong, seed=7)
        with pytest.raises(X.TransferError):
            X.map_classifier_weights(classifier_ckpt, wrong, params)


class TestClassifier:
    def test_shapes_follow_encoder_schedule(self):
        shapes = dict(X.classifier_param_shapes(SPEC, n_classes=4))
        assert shapes["enc0.conv0.weight"] == (4, 3, 3, 3)
        assert shapes["fc.weight"][0] == 4

    def test_surrogate_learns_above_chance(self, tmp_path):
        from rootnet import synth

        patches, labels = synth.gen_classification_set(classes=2, n_per_class=12, patch_size=16, seed=8)
        spec = ArchSpec(depth=2, base_width=4)
        acc = X.train_surrogate_classifier(
            patches, labels, spec, epochs=12, path=tmp_path / "c.ckpt", seed=8, lr=0.05
        )
        assert acc > 0.75
        assert (tmp_path / "c.ckpt").exists()


class TestModes:
    def test_mode_registry(self):
        assert set(X.MODES) == {
            "scratch",
            "encoder_from_classifier",
            "encoder_from_checkpoint",
            "encoder_decoder_from_checkpoint",
        }

    def test_unknown_mode_rejected(self):
        with pytest.raises(X.TransferError):
            X.init_model(SPEC, InitMode(mode="imagenet", source=None), seed=0)

    def test_missing_source_rejected(self):
        with pytest.raises(X.TransferError):
            X.init_model(SPEC, InitMode(mode="encoder_from_checkpoint", source=None), seed=0)
