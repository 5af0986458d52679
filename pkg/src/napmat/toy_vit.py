"""A small deterministic ViT block: patch embedding, attention and MLP.

Weights are seeded Gaussians; nothing here is trained. The block exists to
produce real attention maps, keys and token features for the reduction
methods to act on.

Inside attention and MLP the tokens are processed in a canonical order
(protected tokens first, then by the smallest grid cell each token holds)
and scattered back afterwards. Floating-point sums then never depend on
where a token sits in the sequence, so reordering tokens before a forward
pass and undoing it afterwards reproduces the unreordered result bit for bit.
"""
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tokens import GridShape, TokenBatch

LN_EPS = 1e-6


@dataclass(frozen=True)
class BlockConfig:
    dim: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    depth: int = 12
    seed: int = 0
    init_std: float = 0.02
    size_weighted: bool = True      # add log(size) to key logits
    fused_attends: bool = True      # the fused token may be attended to

    def __post_init__(self):
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ShapeError(f"dim {self.dim} must be a positive multiple of heads {self.heads}")
        if self.depth < 1:
            raise ShapeError("depth must be >= 1")

    @property
    def head_dim(self):
        return self.dim // self.heads

    @property
    def hidden(self):
        return int(round(self.mlp_ratio * self.dim))


@dataclass(frozen=True)
class AttentionMap:
    weights: np.ndarray   # (B, H, N, N); row q is the distribution of query q over keys

    @property
    def heads(self):
        return self.weights.shape[1]

    @property
    def tokens(self):
        return self.weights.shape[2]


@functools.lru_cache(maxsize=256)
def layer_weights(cfg, layer):
    """Projection matrices of one block, drawn from ``(seed, layer)``."""
    rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, int(layer)])
    c, hid, std = cfg.dim, cfg.hidden, cfg.init_std
    w = {
        "qkv": rng.normal(0.0, 1.0, (c, 3 * c)) * std,
        "proj": rng.normal(0.0, 1.0, (c, c)) * std,
        "fc1": rng.normal(0.0, 1.0, (c, hid)) * std,
        "fc2": rng.normal(0.0, 1.0, (hid, c)) * std,
    }
    for arr in w.values():
        arr.setflags(write=False)
    return w


def layer_norm(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def embed_patches(image, patch=16, dim=384, seed=0):
    """Split an image into patches and project each one to ``dim`` features.

    ``image`` is ``(H, W)``, ``(H, W, ch)`` or a batch ``(B, H, W, ch)``;
    integer images are scaled to [0, 1]. A zero class token is prepended.
    Returns ``(tokens, grid)`` with tokens in row-major patch order.
    """
    img = np.asarray(image)
    scale = 1.0 / np.iinfo(img.dtype).max if np.issubdtype(img.dtype, np.integer) else 1.0
    img = img.astype(np.float64) * scale
    if img.ndim == 2:
        img = img[None, :, :, None]
    elif img.ndim == 3:
        img = img[None]
    elif img.ndim != 4:
        raise ShapeError(f"unsupported image shape {np.shape(image)}")
    b, h, w, ch = img.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible into {patch}px patches")
    grid = GridShape(h // patch, w // patch)
    patches = (img.reshape(b, grid.rows, patch, grid.cols, patch, ch)
               .transpose(0, 1, 3, 2, 4, 5)
               .reshape(b, grid.size, patch * patch * ch))
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xE3BED])
    proj = rng.normal(0.0, 0.02, (patch * patch * ch, dim))
    x = np.zeros((b, grid.size + 1, dim))
    x[:, 1:] = patches @ proj
    return TokenBatch.from_grid(x, grid, protected=1), grid


def synthetic_tokens(grid, dim, batch=1, seed=0, protected=1):
    """Seeded Gaussian tokens on ``grid`` with zero protected tokens in front."""
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])
    x = np.zeros((batch, protected + grid.size, dim))
    x[:, protected:] = rng.normal(size=(batch, grid.size, dim))
    return TokenBatch.from_grid(x, grid, protected=protected)


def _canonical(tokens):
    order = np.argsort(tokens.min_cell(), axis=1, kind="stable")
    return order, np.argsort(order, axis=1)


def _take(a, index, axis):
    shape = [1] * a.ndim
    shape[0] = index.shape[0]
    shape[axis] = index.shape[1]
    return np.take_along_axis(a, index.reshape(shape), axis=axis)


def attention_forward(tokens, cfg, layer):
    """Pre-norm multi-head self-attention with a residual connection.

    Returns ``(tokens, attention_map, keys)``; ``keys`` is ``(B, H, N, d)``.
    """
    if tokens.dim != cfg.dim:
        raise ShapeError(f"token dim {tokens.dim} does not match block dim {cfg.dim}")
    w = layer_weights(cfg, layer)
    order, back = _canonical(tokens)
    x = _take(tokens.x, order, 1)
    b, n, c = x.shape
    hd = cfg.head_dim

    qkv = (layer_norm(x) @ w["qkv"]).reshape(b, n, 3, cfg.heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) / math.sqrt(hd)
    if cfg.size_weighted:
        logits = logits + np.log(_take(tokens.sizes, order, 1))[:, None, None, :]
    if tokens.fused and not cfg.fused_attends:
        masked = order == tokens.num_tokens - 1
        logits = np.where(masked[:, None, None, :], -np.inf, logits)
    attn = softmax(logits)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, c) @ w["proj"]
    x = x + out

    attn = _take(_take(attn, back, 2), back, 3)
    keys = _take(k, back, 2)
    return tokens.replace(x=_take(x, back, 1)), AttentionMap(attn), keys


def mlp_forward(tokens, cfg, layer):
    """Pre-norm two-layer GELU MLP with a residual connection."""
    if tokens.dim != cfg.dim:
        raise ShapeError(f"token dim {tokens.dim} does not match block dim {cfg.dim}")
    w = layer_weights(cfg, layer)
    order, back = _canonical(tokens)
    x = _take(tokens.x, order, 1)
    x = x + gelu(layer_norm(x) @ w["fc1"]) @ w["fc2"]
    return tokens.replace(x=_take(x, back, 1))


def forward(tokens, cfg):
    """Run all ``cfg.depth`` blocks without any token reduction."""
    for layer in range(cfg.depth):
        tokens, _, _ = attention_forward(tokens, cfg, layer)
        tokens = mlp_forward(tokens, cfg, layer)
    return tokens
