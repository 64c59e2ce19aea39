"""Actigraphy Transformer: patch embedding plus a post-norm transformer encoder."""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .tensor import ContractError, ShapeError, Tensor

MINUTES_PER_WEEK = 10080

# Per-head query/key/value width defaults to the embedding width, matching the
# parameter totals of the published S/M/L models.
SIZE_PRESETS = {
    "S": dict(num_layers=1, num_heads=6, ffn_dim=256),
    "M": dict(num_layers=2, num_heads=12, ffn_dim=256),
    "L": dict(num_layers=4, num_heads=12, ffn_dim=256),
}
PARAM_BUDGETS = {"S": 285_000, "M": 1_000_000, "L": 1_990_000}


@dataclass(frozen=True)
class ModelConfig:
    series_len: int = MINUTES_PER_WEEK
    patch_size: int = 18
    embed_dim: int = 96
    num_layers: int = 1
    num_heads: int = 6
    head_dim: int | None = None
    ffn_dim: int = 256
    dropout: float = 0.1
    embed_mode: str = "linear"
    conv_channels: int = 8
    size_tag: str | None = "S"

    def __post_init__(self):
        if self.patch_size <= 0 or self.series_len % self.patch_size:
            raise ContractError(
                f"series length {self.series_len} is not divisible by patch size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads:
            raise ContractError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.embed_dim % 2:
            raise ContractError("embed_dim must be even for sin/cos positional embeddings")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.embed_mode not in ("linear", "conv"):
            raise ContractError(f"unknown embed_mode {self.embed_mode!r}")
        if self.head_dim is None:
            object.__setattr__(self, "head_dim", self.embed_dim)

    @property
    def num_patches(self) -> int:
        return self.series_len // self.patch_size

    @classmethod
    def from_size(cls, size_tag="S", **overrides) -> "ModelConfig":
        if size_tag not in SIZE_PRESETS:
            raise ContractError(f"unknown size tag {size_tag!r}; expected S, M or L")
        kwargs = dict(SIZE_PRESETS[size_tag], size_tag=size_tag)
        kwargs.update(overrides)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


# -- functional pieces ---------------------------------------------------


def patchify(series, patch_size):
    """Split the trailing time axis into non-overlapping patches.

    ``series`` of shape (..., T) becomes (..., T // patch_size, patch_size).
    """
    series = np.asarray(series)
    length = series.shape[-1]
    if patch_size <= 0 or length % patch_size:
        raise ContractError(
            f"series length {length} is not divisible by patch size {patch_size}"
        )
    return series.reshape(series.shape[:-1] + (length // patch_size, patch_size))


@functools.lru_cache(maxsize=32)
def _pe_table(count, dim):
    pos = np.arange(count, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty((count, dim), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def positional_embedding(count, dim):
    """Fixed sine/cosine table of shape (count, dim); not trained."""
    if dim % 2:
        raise ContractError(f"positional embedding width must be even, got {dim}")
    return _pe_table(int(count), int(dim)).astype(T.get_default_dtype())


# -- modules -------------------------------------------------------------


class Parameter(Tensor):
    """A trainable leaf tensor owned by a ``Module``."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container whose ``Parameter`` attributes are its trainable state.

    Parameter names are dotted paths following attribute insertion order, e.g.
    ``encoder.block0.attn.wq``.
    """

    training = False

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}{i}.")

    def parameters(self):
        return dict(self.named_parameters())

    def train(self, mode=True):
        self._set_mode(bool(mode))
        return self

    def eval(self):
        return self.train(False)

    def _set_mode(self, mode):
        self.training = mode
        for value in vars(self).values():
            if isinstance(value, Module):
                value._set_mode(mode)
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        item._set_mode(mode)

    def set_trainable(self, flag):
        for _, p in self.named_parameters():
            p.requires_grad = flag
            p.grad = None

    def load_arrays(self, arrays, strict=True):
        """Copy arrays into parameters by name."""
        params = self.parameters()
        if strict:
            missing = [n for n in params if n not in arrays]
            if missing:
                raise KeyError(f"missing tensors: {missing[:5]}")
        for name, p in params.items():
            if name not in arrays:
                continue
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {a.shape}")
            p.data = a.astype(p.data.dtype, copy=True)


def _normal(rng, shape, std=0.02):
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng):
        self.weight = Parameter(_normal(rng, (n_in, n_out)))
        self.bias = Parameter(np.zeros(n_out))

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self._eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self._eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim, num_heads, head_dim, dropout, rng):
        inner = num_heads * head_dim
        self.wq = Parameter(_normal(rng, (dim, inner)))
        self.bq = Parameter(np.zeros(inner))
        self.wk = Parameter(_normal(rng, (dim, inner)))
        self.bk = Parameter(np.zeros(inner))
        self.wv = Parameter(_normal(rng, (dim, inner)))
        self.bv = Parameter(np.zeros(inner))
        self.wo = Parameter(_normal(rng, (inner, dim)))
        self.bo = Parameter(np.zeros(dim))
        self._heads = num_heads
        self._head_dim = head_dim
        self._dropout = dropout

    def __call__(self, x, rng=None):
        """Return (output, attention weights as a (B, H, N, N) array)."""
        b, n, _ = x.shape
        h, hd = self._heads, self._head_dim

        def split(t):
            return t.reshape(b, n, h, hd).transpose(0, 2, 1, 3)

        # scaling q instead of the scores saves an N x N pass
        q = split(T.linear(x, self.wq, self.bq) * (1.0 / np.sqrt(hd)))
        k = split(T.linear(x, self.wk, self.bk))
        v = split(T.linear(x, self.wv, self.bv))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2))
        attn = T.softmax(scores, axis=-1)
        weights = attn.data
        attn = T.dropout(attn, self._dropout, rng, self.training)
        ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, h * hd)
        return T.linear(ctx, self.wo, self.bo), weights


class EncoderBlock(Module):
    """Self-attention and feed-forward sublayers, each wrapped as norm(x + sublayer(x))."""

    def __init__(self, dim, num_heads, head_dim, ffn_dim, dropout, rng):
        self.attn = MultiHeadSelfAttention(dim, num_heads, head_dim, dropout, rng)
        self.norm1 = LayerNorm(dim)
        self.ffn1 = Linear(dim, ffn_dim, rng)
        self.ffn2 = Linear(ffn_dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self._dropout = dropout

    def __call__(self, x, rng=None):
        a, weights = self.attn(x, rng)
        x = self.norm1(x + a)
        f = self.ffn2(T.gelu(self.ffn1(x)))
        f = T.dropout(f, self._dropout, rng, self.training)
        return self.norm2(x + f), weights


@dataclass
class AttentionBundle:
    """Attention weights per encoder layer, each shaped (..., heads, N', N')."""

    layers: list = field(default_factory=list)

    @property
    def num_layers(self):
        return len(self.layers)

    def last(self):
        return self.layers[-1]


class TransformerEncoder(Module):
    def __init__(self, num_layers, dim, num_heads, head_dim, ffn_dim, dropout, rng):
        self.block = [
            EncoderBlock(dim, num_heads, head_dim, ffn_dim, dropout, rng)
            for _ in range(num_layers)
        ]

    def __call__(self, tokens, capture=False, rng=None):
        """Run all blocks over (B, N', D) tokens; optionally return an AttentionBundle."""
        squeeze = tokens.ndim == 2
        x = tokens.reshape(1, *tokens.shape) if squeeze else tokens
        bundle = AttentionBundle() if capture else None
        for blk in self.block:
            x, weights = blk(x, rng)
            if capture:
                bundle.layers.append(weights[0] if squeeze else weights)
        if squeeze:
            x = x.reshape(x.shape[1:])
        return x, bundle


def encoder_forward(tokens, encoder, capture=False, rng=None):
    """Apply ``encoder`` to tokens that already carry positional embeddings."""
    if not isinstance(tokens, Tensor):
        tokens = Tensor(tokens)
    if tokens.shape[-2] < 1:
        raise ShapeError("encoder needs at least one token")
    return encoder(tokens, capture=capture, rng=rng)


class LinearPatchEmbed(Module):
    def __init__(self, patch_size, dim, rng):
        self.proj = Linear(patch_size, dim, rng)

    def __call__(self, patches):
        return self.proj(patches)


class ConvPatchEmbed(Module):
    """Two kernel-3 convolutions inside each patch, then an affine map to D."""

    def __init__(self, patch_size, dim, channels, rng):
        self.conv1_w = Parameter(_normal(rng, (3, 1, channels)))
        self.conv1_b = Parameter(np.zeros(channels))
        self.conv2_w = Parameter(_normal(rng, (3, channels, channels)))
        self.conv2_b = Parameter(np.zeros(channels))
        self.proj = Linear(patch_size * channels, dim, rng)
        self._channels = channels

    def __call__(self, patches):
        lead = patches.shape[:-1]
        s = patches.shape[-1]
        x = patches.reshape(-1, s, 1)
        x = T.gelu(T.conv1d_same(x, self.conv1_w, self.conv1_b))
        x = T.conv1d_same(x, self.conv2_w, self.conv2_b)
        x = x.reshape(*lead, s * self._channels)
        return self.proj(x)


def embed_patches(patches, embedder):
    """Map (..., N, S) patches to (..., N, D) tokens; row i depends only on patch i."""
    if not isinstance(patches, Tensor):
        patches = Tensor(patches)
    return embedder(patches)


class ActigraphyTransformer(Module):
    """Patch embedder plus encoder stack.

    Subclasses add a reconstruction decoder or a classification head; the
    ``embed.*`` and ``encoder.*`` parameter names are shared by all of them.
    """

    def __init__(self, cfg: ModelConfig, rng=None):
        rng = np.random.default_rng(rng)
        self.cfg = cfg
        if cfg.embed_mode == "linear":
            self.embed = LinearPatchEmbed(cfg.patch_size, cfg.embed_dim, rng)
        else:
            self.embed = ConvPatchEmbed(cfg.patch_size, cfg.embed_dim, cfg.conv_channels, rng)
        self.encoder = TransformerEncoder(
            cfg.num_layers, cfg.embed_dim, cfg.num_heads, cfg.head_dim,
            cfg.ffn_dim, cfg.dropout, rng,
        )

    def backbone_parameters(self):
        return {
            n: p for n, p in self.named_parameters()
            if n.startswith(("embed.", "encoder."))
        }

    def check_series(self, series):
        series = np.asarray(series, dtype=T.get_default_dtype())
        if series.ndim == 1:
            series = series[None, :]
        if series.ndim != 2 or series.shape[1] != self.cfg.series_len:
            raise ShapeError(
                f"expected series of length {self.cfg.series_len}, got shape {series.shape}"
            )
        return series

    def tokens(self, series):
        """Embed a (B, T) batch and add positional embeddings -> (B, N, D)."""
        p = patchify(series, self.cfg.patch_size)
        x = embed_patches(Tensor(p), self.embed)
        return x + positional_embedding(self.cfg.num_patches, self.cfg.embed_dim)

    def encode(self, series, capture=False, rng=None):
        series = self.check_series(series)
        return self.encoder(self.tokens(series), capture=capture, rng=rng)


def count_parameters(cfg: ModelConfig) -> int:
    """Trainable floats in embedder and encoder (heads and decoders excluded)."""
    d, s = cfg.embed_dim, cfg.patch_size
    if cfg.embed_mode == "linear":
        embed = s * d + d
    else:
        c = cfg.conv_channels
        embed = (3 * c + c) + (3 * c * c + c) + (s * c * d + d)
    inner = cfg.num_heads * cfg.head_dim
    attn = 3 * (d * inner + inner) + inner * d + d
    ffn = d * cfg.ffn_dim + cfg.ffn_dim + cfg.ffn_dim * d + d
    norms = 4 * d
    return embed + cfg.num_layers * (attn + ffn + norms)
