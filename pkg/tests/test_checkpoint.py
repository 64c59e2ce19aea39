import numpy as np
import pytest

from pat.checkpoint import (
    MAGIC,
    Checkpoint,
    checkpoint_from_model,
    classifier_from_checkpoint,
    from_bytes,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    to_bytes,
)
from pat.finetune import CheckpointError, Classifier, predict_batch
from pat.model import ModelConfig
from pat.pretrain import MAEConfig, MaskedAutoencoder

TINY = ModelConfig(series_len=60, patch_size=6, embed_dim=16, num_heads=2, head_dim=8,
                   ffn_dim=16, size_tag=None)
MAE = MAEConfig(decoder_dim=8, decoder_heads=2, decoder_ffn_dim=8)


def test_round_trip_is_byte_identical(tmp_path):
    model = MaskedAutoencoder(TINY, MAE, rng=0)
    ckpt = checkpoint_from_model(model, extra={"history": [1.0, 0.5]})
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    again = load_checkpoint(tmp_path / "a.ckpt")
    save_checkpoint(again, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes().startswith(MAGIC)
    assert again.config["mae"]["mask_ratio"] == 0.9
    assert again.config["history"] == [1.0, 0.5]


def test_tensor_names_and_values():
    model = MaskedAutoencoder(TINY, MAE, rng=0)
    ckpt = from_bytes(to_bytes(checkpoint_from_model(model)))
    assert "encoder.block0.attn.wq" in ckpt.tensors
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(ckpt.tensors[name], p.data)


def test_rebuild_classifier_predicts_identically():
    model = Classifier(TINY, rng=3)
    rebuilt = model_from_checkpoint(from_bytes(to_bytes(checkpoint_from_model(model))))
    X = np.random.default_rng(0).normal(size=(3, 60))
    np.testing.assert_array_equal(predict_batch(rebuilt, X), predict_batch(model, X))


def test_classifier_from_mae_checkpoint():
    mae = MaskedAutoencoder(TINY, MAE, rng=0)
    clf = classifier_from_checkpoint(checkpoint_from_model(mae), rng=1)
    np.testing.assert_array_equal(clf.embed.proj.weight.data, mae.embed.proj.weight.data)
    assert "decoder_embed.weight" not in clf.parameters()


@pytest.mark.parametrize("mutate, msg", [
    (lambda b: b"XXXXXXXX" + b[8:], "magic"),
    (lambda b: b[:8] + b"\x09\x00\x00\x00" + b[12:], "version"),
    (lambda b: b[:-3], "truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_corrupt(mutate, msg):
    buf = to_bytes(checkpoint_from_model(Classifier(TINY, rng=0)))
    with pytest.raises(CheckpointError, match=msg):
        from_bytes(mutate(buf))


def test_unknown_kind():
    with pytest.raises(CheckpointError):
        model_from_checkpoint(Checkpoint({"kind": "other", "model": TINY.to_dict()}))


def test_missing_tensor():
    ckpt = checkpoint_from_model(Classifier(TINY, rng=0))
    del ckpt.tensors["head.bias"]
    with pytest.raises(CheckpointError):
        model_from_checkpoint(ckpt)
