"""Masked-autoencoder pretraining for the Actigraphy Transformer."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .model import (
    ActigraphyTransformer,
    Linear,
    ModelConfig,
    Parameter,
    TransformerEncoder,
    patchify,
    positional_embedding,
)
from .optim import Adam
from .tensor import ContractError, ShapeError, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskPlan:
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    mask_ratio: float

    @property
    def num_patches(self):
        return len(self.visible_idx) + len(self.masked_idx)


@dataclass(frozen=True)
class MAEConfig:
    mask_ratio: float = 0.90
    loss_mode: str = "all"
    decoder_dim: int = 64
    decoder_layers: int = 1
    decoder_heads: int = 4
    decoder_ffn_dim: int = 128
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    smooth: bool = False

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ContractError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.loss_mode not in ("all", "masked_only"):
            raise ContractError(f"loss_mode must be 'all' or 'masked_only', got {self.loss_mode!r}")
        if self.decoder_dim % 2 or self.decoder_dim % self.decoder_heads:
            raise ContractError("decoder_dim must be even and divisible by decoder_heads")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def masked_count(num_patches, ratio):
    """round(ratio * N), half up, kept within [1, N - 1] so both sides are non-empty."""
    k = int(math.floor(ratio * num_patches + 0.5))
    return min(max(k, 1), num_patches - 1)


def sample_mask(num_patches, ratio, rng) -> MaskPlan:
    """Choose ``round(ratio * N)`` patches uniformly without replacement to hide."""
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"mask ratio must lie in (0, 1), got {ratio}")
    if num_patches < 2:
        raise ContractError("masking needs at least two patches")
    k = masked_count(num_patches, ratio)
    perm = rng.permutation(num_patches)
    masked = np.sort(perm[:k])
    visible = np.sort(perm[k:])
    return MaskPlan(visible, masked, ratio)


def minute_mask(plan: MaskPlan, patch_size):
    """Boolean per-minute indicator of masked patches."""
    flags = np.zeros(plan.num_patches, dtype=bool)
    flags[plan.masked_idx] = True
    return np.repeat(flags, patch_size)


class MaskedAutoencoder(ActigraphyTransformer):
    """Encoder sees only visible patches; a small decoder rebuilds every minute."""

    def __init__(self, cfg: ModelConfig, mae_cfg: MAEConfig = MAEConfig(), rng=None):
        rng = np.random.default_rng(rng)
        super().__init__(cfg, rng)
        self.mae_cfg = mae_cfg
        dd = mae_cfg.decoder_dim
        self.decoder_embed = Linear(cfg.embed_dim, dd, rng)
        self.mask_token = Parameter(rng.normal(0.0, 0.02, size=dd))
        self.decoder = TransformerEncoder(
            mae_cfg.decoder_layers, dd, mae_cfg.decoder_heads, dd // mae_cfg.decoder_heads,
            mae_cfg.decoder_ffn_dim, cfg.dropout, rng,
        )
        self.decoder_pred = Linear(dd, cfg.patch_size, rng)

    def encode_visible(self, series, plans, rng=None):
        """Latent tokens (B, K, D) computed from visible patches only."""
        series = self.check_series(series)
        if len(plans) != len(series):
            raise ShapeError(f"{len(series)} series but {len(plans)} mask plans")
        n = self.cfg.num_patches
        for p in plans:
            if p.num_patches != n:
                raise ShapeError(f"mask plan covers {p.num_patches} patches, model has {n}")
        vis = np.stack([p.visible_idx for p in plans])
        if vis.shape[1] == 0:
            raise ContractError("mask plan leaves no visible patch for the encoder")
        patches = patchify(series, self.cfg.patch_size)
        b = np.arange(len(series))[:, None]
        # masked patches are dropped before embedding, so their content cannot leak
        visible = Tensor(patches[b, vis])
        pe = positional_embedding(n, self.cfg.embed_dim)
        tokens = self.embed(visible) + pe[vis]
        latent, _ = self.encoder(tokens, rng=rng)
        return latent, vis

    def __call__(self, series, plans, rng=None):
        """Reconstruct the full (B, T) series from visible patches."""
        latent, vis = self.encode_visible(series, plans, rng)
        bsz, n, dd = len(vis), self.cfg.num_patches, self.mae_cfg.decoder_dim
        z = self.decoder_embed(latent)
        base = T.broadcast_to(self.mask_token, (bsz, n, dd))
        seq = T.put_rows(base, z, vis)
        seq = seq + positional_embedding(n, dd)
        dec, _ = self.decoder(seq, rng=rng)
        out = self.decoder_pred(dec)  # (B, N, S)
        return out.reshape(bsz, self.cfg.series_len)


def mae_forward(series, plan, model: MaskedAutoencoder):
    """Single-series reconstruction at inference (dropout off)."""
    was = model.training
    model.eval()
    try:
        with T.no_grad():
            out = model(np.asarray(series)[None, :], [plan])
    finally:
        model.train(was)
    return out.data[0]


def reconstruction_loss(inputs, recon, plans, mode="all", patch_size=None):
    """Minute-level MSE between standardized input and reconstruction.

    ``mode='all'`` averages over every minute; ``mode='masked_only'`` averages
    over minutes inside masked patches. Works on single series with a single
    plan or on (B, T) batches with a list of plans; returns a scalar Tensor.
    """
    if not isinstance(recon, Tensor):
        recon = Tensor(recon)
    target = np.asarray(inputs, dtype=recon.data.dtype)
    if target.shape != recon.shape:
        raise ShapeError(f"input shape {target.shape} differs from reconstruction {recon.shape}")
    diff = recon - target
    sq = diff * diff
    if mode == "all":
        return sq.mean()
    if mode != "masked_only":
        raise ContractError(f"unknown loss mode {mode!r}")
    if isinstance(plans, MaskPlan):
        plans = [plans]
    length = target.shape[-1]
    if patch_size is None:
        patch_size = length // plans[0].num_patches
    weights = np.stack([minute_mask(p, patch_size) for p in plans]).astype(recon.data.dtype)
    weights = weights.reshape(target.shape)
    total = weights.sum()
    if total == 0:
        raise ContractError("masked_only loss with no masked minutes")
    return (sq * weights).sum() * (1.0 / total)


@dataclass
class PretrainResult:
    model: MaskedAutoencoder
    history: list = field(default_factory=list)


def pretrain_loop(data, cfg: MAEConfig, model_cfg: ModelConfig, model=None, progress=None):
    """Train a masked autoencoder on a (n, T) array of standardized series.

    Each epoch shuffles the data, draws a fresh mask per example and applies
    one Adam update per mini-batch. ``history`` holds the mean training loss
    of each epoch.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or len(data) == 0:
        raise ContractError("pretraining needs a non-empty (n, T) dataset")
    if data.shape[1] != model_cfg.series_len:
        raise ShapeError(f"series length {data.shape[1]} != config {model_cfg.series_len}")
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    if model is None:
        model = MaskedAutoencoder(model_cfg, cfg, np.random.default_rng(seeds[0]))
    shuffle_rng = np.random.default_rng(seeds[1])
    mask_rng = np.random.default_rng(seeds[2])
    drop_rng = np.random.default_rng(seeds[3])
    opt = Adam(model.parameters(), lr=cfg.lr)
    n_patches = model_cfg.num_patches
    history = []
    model.train()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = data[idx]
            plans = [sample_mask(n_patches, cfg.mask_ratio, mask_rng) for _ in idx]
            recon = model(batch, plans, rng=drop_rng)
            loss = reconstruction_loss(batch, recon, plans, cfg.loss_mode, model_cfg.patch_size)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        history.append(total / count)
        if progress is not None:
            progress(epoch, history[-1])
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    model.eval()
    return PretrainResult(model, history)
