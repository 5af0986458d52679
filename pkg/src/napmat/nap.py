"""Neighbor-aware pruning.

Token importance combines the attention a token receives from the class
token with a neighbor-smoothed version of the attention it receives from
everyone. The lowest-scoring image tokens are fused into one representative
token that trails the sequence.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NeighborKernel:
    radius: int
    weights: np.ndarray   # length 2R+1, offsets -R..R


@dataclass(frozen=True)
class ImportanceVector:
    r_attn: np.ndarray
    phi: np.ndarray
    cls_attn: np.ndarray
    xi: np.ndarray
    alpha: float


@dataclass(frozen=True)
class PrunePlan:
    keep_indices: np.ndarray           # (B, k) sequence positions, ascending
    fused_source_indices: np.ndarray   # (B, M-k) positions folded into the fused token
    keep_ratio: float
    absorbed_fused: bool = False       # an earlier fused token was folded in too


@dataclass(frozen=True)
class NAPConfig:
    radius: int = 3
    alpha: float = 0.1
    keep_ratio: float = 0.7
    layers: tuple = (3, 6, 9)
    fused_weighting: str = "uniform"

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError("nap.radius must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("nap.alpha must be in [0, 1]")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError("nap.keep_ratio must be in (0, 1]")
        if self.fused_weighting not in ("uniform", "xi"):
            raise ConfigError("nap.fused_weighting must be 'uniform' or 'xi'")


# profile used for high-resolution (384px) models
HIGH_RES = NAPConfig(radius=3, alpha=0.95)


def received_attention(attn):
    """Attention each image token receives, averaged over all queries and heads.

    Column 0 (the class token) is skipped, so the result is ``(B, N-1)``.
    """
    w = attn.weights if hasattr(attn, "weights") else np.asarray(attn)
    n = w.shape[-1]
    if n < 2:
        raise ShapeError("need at least one token besides the class token")
    return w[..., 1:].sum(axis=2).mean(axis=1) / n


def class_attention(attn):
    """Attention from the class-token query to each image token, head-averaged."""
    w = attn.weights if hasattr(attn, "weights") else np.asarray(attn)
    return w[:, :, 0, 1:].mean(axis=1)


def build_kernel(radius):
    radius = int(radius)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    d = np.arange(-radius, radius + 1)
    raw = 1.0 / (np.abs(d) + 1.0)
    return NeighborKernel(radius, raw / raw.sum())


def neighbor_awareness(r_attn, kernel):
    """Smooth received attention along the sequence; out-of-range terms are zero."""
    return kernels.neighbor_conv(r_attn, kernel.weights)


def importance(cls_attn, phi, alpha, r_attn=None):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    cls_attn = np.asarray(cls_attn, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    xi = (1.0 - alpha) * cls_attn + alpha * phi
    return ImportanceVector(r_attn=r_attn, phi=phi, cls_attn=cls_attn, xi=xi, alpha=alpha)


def score_tokens(attn, tokens, radius=3, alpha=0.1):
    """Importance of the image tokens of ``tokens`` given the layer's attention.

    Protected tokens beyond the class token and a trailing fused token are
    excluded before smoothing, so the fused token is never anyone's neighbor.
    """
    p = tokens.protected
    stop = tokens.num_tokens - 1 - int(tokens.fused)   # exclusive, in image-index space
    r_attn = received_attention(attn)[:, p - 1:stop]
    cls_attn = class_attention(attn)[:, p - 1:stop]
    phi = neighbor_awareness(r_attn, build_kernel(radius))
    return importance(cls_attn, phi, alpha, r_attn=r_attn)


def keep_count(keep_ratio, m):
    # rounding guard: 0.7 * 10 must give 7, not 8
    return min(m, math.ceil(round(keep_ratio * m, 9)))


def top_indices(scores, k):
    """Positions of the ``k`` largest scores per row, returned ascending.

    Ties go to the lower index.
    """
    scores = np.asarray(scores)
    ranked = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(ranked[..., :k], axis=-1)


def prune(tokens, xi, keep_ratio, weighting="uniform"):
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    xi_arr = xi.xi if isinstance(xi, ImportanceVector) else np.asarray(xi)
    plan_tokens, plan = prune_to(tokens, xi_arr, keep_count(keep_ratio, tokens.num_image), weighting)
    return plan_tokens, PrunePlan(plan.keep_indices, plan.fused_source_indices, keep_ratio,
                                  plan.absorbed_fused)


def prune_to(tokens, xi, n_keep, weighting="uniform"):
    """Keep the ``n_keep`` highest-``xi`` image tokens and fuse the rest.

    ``xi`` is ``(B, M)`` over the image tokens (positions ``p .. p+M-1``).
    The fused token is the average of the discarded tokens, weighted by size
    (``"uniform"``: every original patch counts once) or by ``xi``. A fused
    token left by an earlier layer is folded into the new one.
    """
    xi = np.asarray(xi, dtype=np.float64)
    p, m = tokens.protected, tokens.num_image
    if xi.shape != (tokens.batch, m):
        raise ShapeError(f"importance shape {xi.shape} does not match {m} image tokens")
    if not 0 <= n_keep <= m:
        raise ValueError(f"cannot keep {n_keep} of {m} tokens")
    b = tokens.batch
    keep = top_indices(xi, n_keep) + p
    if n_keep == m:
        return tokens, PrunePlan(keep, np.empty((b, 0), dtype=np.int64), 1.0)

    dropped_mask = np.ones((b, m), dtype=bool)
    np.put_along_axis(dropped_mask, keep - p, False, axis=1)
    dropped = np.nonzero(dropped_mask)[1].reshape(b, m - n_keep) + p

    t_out = p + n_keep + 1
    fused_slot = t_out - 1
    group = np.full((b, tokens.num_tokens), fused_slot, dtype=np.int64)
    group[:, :p] = np.arange(p)
    np.put_along_axis(group, keep, np.arange(p, p + n_keep)[None].repeat(b, 0), axis=1)

    if weighting == "uniform":
        weights = tokens.sizes
    elif weighting == "xi":
        # kept and protected tokens are singleton groups; only discards need xi
        weights = np.ones_like(tokens.sizes)
        weights[:, p:p + m] = np.where(dropped_mask, xi, 1.0)
        fused_w = np.where(dropped_mask, xi, 0.0).sum(axis=1)
        if tokens.fused:
            # an earlier fused token enters with the mean importance of the new discards
            weights[:, -1] = fused_w / (m - n_keep)
            fused_w = fused_w + weights[:, -1]
        # all-zero importance would leave the fused mean undefined
        weights = np.where((fused_w <= 0)[:, None], tokens.sizes, weights)
    else:
        raise ConfigError(f"unknown fused weighting {weighting!r}")

    x, _ = kernels.segment_mean(tokens.x, weights, group, t_out)
    sizes = np.zeros((b, t_out))
    np.add.at(sizes, (np.arange(b)[:, None], group), tokens.sizes)
    owner = np.take_along_axis(group, tokens.owner, axis=1)
    out = tokens.replace(x=x, sizes=sizes, owner=owner, fused=True)
    plan = PrunePlan(keep, dropped, n_keep / m, absorbed_fused=tokens.fused)
    return out, plan


def nap_layer(tokens, attn, cfg):
    """Score with the layer's attention map and prune per ``cfg``."""
    xi = score_tokens(attn, tokens, cfg.radius, cfg.alpha)
    return prune(tokens, xi, cfg.keep_ratio, cfg.fused_weighting)
