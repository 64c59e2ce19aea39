"""Binary classification on top of a (pretrained) Actigraphy Transformer."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .metrics import auc
from .model import ActigraphyTransformer, Linear, ModelConfig
from .optim import Adam
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)

BCE_CLAMP = 1e-7


class CheckpointError(ValueError):
    """Checkpoint content does not fit the requested model."""


@dataclass(frozen=True)
class FinetuneConfig:
    mode: str = "FT"
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    early_stop_patience: int = 10
    pooling: str = "mean"

    def __post_init__(self):
        if self.mode not in ("FT", "LP"):
            raise ContractError(f"mode must be FT or LP, got {self.mode!r}")
        if self.pooling not in ("mean", "flatten"):
            raise ContractError(f"pooling must be mean or flatten, got {self.pooling!r}")

    def to_dict(self):
        return asdict(self)


class Classifier(ActigraphyTransformer):
    """embed -> +positional -> encoder -> pool over tokens -> affine -> sigmoid."""

    def __init__(self, cfg: ModelConfig, rng=None, pooling="mean"):
        rng = np.random.default_rng(rng)
        super().__init__(cfg, rng)
        self.pooling = pooling
        width = cfg.embed_dim if pooling == "mean" else cfg.embed_dim * cfg.num_patches
        self.head = Linear(width, 1, rng)

    def logits(self, series, rng=None):
        x, _ = self.encode(series, rng=rng)
        if self.pooling == "mean":
            pooled = x.mean(axis=1)
        else:
            pooled = x.reshape(x.shape[0], -1)
        return self.head(pooled).reshape(x.shape[0])

    def __call__(self, series, rng=None):
        return T.sigmoid(self.logits(series, rng))


def attach_head(encoder_ckpt, cfg: ModelConfig, rng=None, pooling="mean") -> Classifier:
    """Build a classifier whose embedder and encoder come from ``encoder_ckpt``.

    ``encoder_ckpt`` may be a Checkpoint, any ActigraphyTransformer, or None
    for a randomly initialised (not pretrained) model.
    """
    model = Classifier(cfg, rng, pooling)
    if encoder_ckpt is None:
        return model
    if isinstance(encoder_ckpt, ActigraphyTransformer):
        src_cfg = encoder_ckpt.cfg
        arrays = {n: p.data for n, p in encoder_ckpt.backbone_parameters().items()}
    else:
        src_cfg = ModelConfig.from_dict(encoder_ckpt.config["model"])
        arrays = {
            n: a for n, a in encoder_ckpt.tensors.items()
            if n.startswith(("embed.", "encoder."))
        }
    mine, theirs = cfg.to_dict(), src_cfg.to_dict()
    for key in mine:
        # dropout is a training setting and may differ between stages
        if key != "dropout" and mine[key] != theirs.get(key):
            raise CheckpointError(
                f"checkpoint config mismatch on {key}: checkpoint has {theirs.get(key)!r}, "
                f"requested {mine[key]!r}"
            )
    backbone = model.backbone_parameters()
    missing = [n for n in backbone if n not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors {missing[:3]}")
    model.load_arrays(arrays, strict=False)
    return model


def binary_cross_entropy(p, y):
    """Mean of -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7]."""
    if not isinstance(p, Tensor):
        p = Tensor(np.atleast_1d(p))
    y = np.asarray(y, dtype=p.data.dtype).reshape(p.shape)
    pc = T.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = T.log(pc) * y + T.log(1.0 - pc) * (1.0 - y)
    return -ll.mean()


def _arrays(data):
    """Accept (X, y) tuples or labeled record lists."""
    if isinstance(data, tuple):
        X, y = data
    else:
        from .data import as_matrix, labels_of

        X, y = as_matrix(data), labels_of(data)
    return np.asarray(X, dtype=np.float32), np.asarray(y, dtype=np.int64)


def predict_batch(model: Classifier, X, batch_size=64):
    """Probabilities for each row of ``X`` with dropout disabled."""
    X = model.check_series(X)
    was = model.training
    model.eval()
    out = []
    try:
        with T.no_grad():
            for start in range(0, len(X), batch_size):
                out.append(model(X[start : start + batch_size]).data)
    finally:
        model.train(was)
    return np.concatenate(out).astype(np.float64)


def predict(model: Classifier, series) -> float:
    series = np.asarray(series)
    if series.ndim != 1:
        raise ContractError("predict takes one series; use predict_batch for many")
    return float(predict_batch(model, series[None, :])[0])


def snapshot(model):
    return {n: p.data.copy() for n, p in model.named_parameters()}


def finetune(model: Classifier, train, val, cfg: FinetuneConfig, progress=None):
    """Mini-batch Adam training; keeps the weights with the best validation AUC.

    Returns ``(model, history)`` where history holds per-epoch train loss and
    validation AUC.
    """
    Xtr, ytr = _arrays(train)
    Xva, yva = _arrays(val)
    if len(np.unique(ytr)) < 2:
        raise ContractError("training set contains a single class")
    if len(np.unique(yva)) < 2:
        raise ContractError("validation set contains a single class")

    if cfg.mode == "LP":
        for p in model.backbone_parameters().values():
            p.requires_grad = False
            p.grad = None
    trainable = {n: p for n, p in model.named_parameters() if p.requires_grad}
    opt = Adam(trainable, lr=cfg.lr)

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    drop_rng = np.random.default_rng(seeds[1])

    history = []
    best_auc, best_state, stale = -np.inf, snapshot(model), 0
    for epoch in range(cfg.epochs):
        # frozen backbone runs deterministically in LP mode
        model.train(cfg.mode == "FT")
        model.head.train(True)
        order = shuffle_rng.permutation(len(Xtr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = binary_cross_entropy(model(Xtr[idx], rng=drop_rng), ytr[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        val_auc = auc(predict_batch(model, Xva), yva)
        history.append({"epoch": epoch, "train_loss": total / len(Xtr), "val_auc": val_auc})
        if progress is not None:
            progress(history[-1])
        log.debug("epoch %d loss %.5f val_auc %.4f", epoch, total / len(Xtr), val_auc)
        if val_auc > best_auc:
            best_auc, best_state, stale = val_auc, snapshot(model), 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    model.load_arrays(best_state)
    model.eval()
    return model, history
