"""Merging by adjacent tokens.

Only sequence neighbours are compared. The ``r`` most similar neighbour
pairs are merged; runs of consecutive selected pairs collapse onto the first
token of the run, so no token is ever both a source and a destination.

Plan indices are 0-based over the mergeable tokens (the non-protected ones):
pair ``j`` joins mergeable tokens ``j`` and ``j + 1``.
"""
import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, PlanError, ShapeError


class Metric(str, enum.Enum):
    COSINE = "cosine"
    SYMKL = "symkl"


class Feature(str, enum.Enum):
    KMEAN = "kmean"     # key vectors averaged over heads
    X = "x"             # token features
    KL2NORM = "kl2norm" # per-head L2-normalised keys, concatenated


@dataclass(frozen=True)
class SimilarityConfig:
    metric: Metric = Metric.COSINE
    feature: Feature = Feature.KMEAN

    def __post_init__(self):
        try:
            object.__setattr__(self, "metric", Metric(self.metric))
            object.__setattr__(self, "feature", Feature(self.feature))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class MergePlan:
    scores: np.ndarray     # (B, N) pair similarities
    r: int
    selected: np.ndarray   # (B, r) ascending pair indices
    dest: np.ndarray       # (B, r) == selected
    src: np.ndarray        # (B, r) == dest + 1
    filled: np.ndarray     # (B, r) start of each run of consecutive destinations


def _mergeable_slice(tokens):
    return slice(tokens.protected, tokens.num_tokens - int(tokens.fused))


def similarity_features(tokens, keys, feature):
    """Per-token vectors the similarity is measured on, for all tokens."""
    feature = Feature(feature)
    if feature is Feature.X:
        return tokens.x
    if keys is None:
        raise ConfigError(f"feature {feature.value!r} needs the layer's key tensor")
    keys = np.asarray(keys, dtype=np.float64)
    if keys.shape[0] != tokens.batch or keys.shape[2] != tokens.num_tokens:
        raise ShapeError(f"keys shape {keys.shape} does not match {tokens.num_tokens} tokens")
    if feature is Feature.KMEAN:
        return keys.mean(axis=1)
    norms = np.linalg.norm(keys, axis=-1, keepdims=True)
    unit = np.divide(keys, norms, out=np.zeros_like(keys), where=norms > 0)
    b, h, t, d = unit.shape
    return unit.transpose(0, 2, 1, 3).reshape(b, t, h * d)


def _log_softmax(v):
    z = v - v.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def adjacent_symkl(feats):
    """Negated symmetric KL between softmaxed unit vectors of neighbours."""
    norms = np.linalg.norm(feats, axis=-1, keepdims=True)
    unit = np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)
    logp = _log_softmax(unit)
    p = np.exp(logp)
    sym = 0.5 * ((p[:, :-1] - p[:, 1:]) * (logp[:, :-1] - logp[:, 1:])).sum(axis=-1)
    out = -sym
    zero = (norms[..., 0] == 0)
    out[zero[:, :-1] | zero[:, 1:]] = -np.inf
    return out


def adjacent_similarity(tokens, keys=None, cfg=SimilarityConfig()):
    """Similarity of every adjacent pair of mergeable tokens, ``(B, N)``.

    Larger means more similar for both metrics. A pair involving a
    zero-norm vector scores ``-inf``.
    """
    sl = _mergeable_slice(tokens)
    if sl.stop - sl.start < 2:
        raise ShapeError("need at least two mergeable tokens")
    feats = similarity_features(tokens, keys, cfg.feature)[:, sl]
    if cfg.metric is Metric.COSINE:
        return kernels.adjacent_cosine(feats)
    return adjacent_symkl(np.asarray(feats, dtype=np.float64))


def select_pairs(scores, r):
    """Indices of the ``r`` highest scores, ascending; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    if not 0 <= r <= n:
        raise ValueError(f"cannot select {r} of {n} pairs")
    ranked = np.argsort(-scores, axis=-1, kind="stable")
    return np.sort(ranked[..., :r], axis=-1)


def resolve_destinations(selected):
    """Map sorted pair indices to ``(dest, src, filled)``.

    ``filled[k]`` is the first destination of the run of consecutive
    destinations containing ``dest[k]``.
    """
    dest = np.asarray(selected, dtype=np.int64)
    if dest.ndim == 2:
        parts = [resolve_destinations(row) for row in dest]
        return tuple(np.stack([pt[i] for pt in parts]) if parts else dest.copy() for i in range(3))
    if dest.size > 1 and (np.diff(dest) <= 0).any():
        raise ValueError("selected indices must be strictly increasing")
    return dest.copy(), dest + 1, kernels.forward_fill(dest)


def plan_merge(scores, r):
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    selected = select_pairs(scores, r)
    dest, src, filled = resolve_destinations(selected)
    return MergePlan(scores=scores, r=int(r), selected=selected, dest=dest, src=src, filled=filled)


def merge_groups(num_tokens, p, src, filled):
    """Output slot of every token when sources collapse onto their filled destination.

    ``src`` and ``filled`` are ``(B, r)`` mergeable-token indices.
    """
    b = src.shape[0]
    target = np.broadcast_to(np.arange(num_tokens), (b, num_tokens)).copy()
    np.put_along_axis(target, src + p, filled + p, axis=1)
    survive = np.ones((b, num_tokens), dtype=bool)
    np.put_along_axis(survive, src + p, False, axis=1)
    slot = np.cumsum(survive, axis=1) - 1
    return np.take_along_axis(slot, target, axis=1)


def merge(tokens, plan):
    """Collapse each run of selected pairs into its first token (size-weighted mean)."""
    if plan.r == 0:
        return tokens
    src, filled = plan.src, plan.filled
    n_merge = tokens.num_tokens - tokens.protected - int(tokens.fused)
    if src.shape[0] != tokens.batch or (src >= n_merge).any() or (filled < 0).any():
        raise PlanError("merge plan does not fit the token batch")
    for s_row, f_row in zip(src, filled):
        if np.intersect1d(s_row, f_row).size:
            raise PlanError("a token is both a merge source and a final destination")
        if np.unique(s_row).size != s_row.size:
            raise PlanError("a token is merged twice")
    group = merge_groups(tokens.num_tokens, tokens.protected, src, filled)
    t_out = tokens.num_tokens - plan.r
    x, sizes = kernels.segment_mean(tokens.x, tokens.sizes, group, t_out)
    owner = np.take_along_axis(group, tokens.owner, axis=1)
    return tokens.replace(x=x, sizes=sizes, owner=owner)


def mat_reduce(tokens, keys=None, cfg=SimilarityConfig(), r=0, return_plan=False):
    """Similarity, selection, destination resolution and merge in one call."""
    if r == 0:
        return (tokens, None) if return_plan else tokens
    plan = plan_merge(adjacent_similarity(tokens, keys, cfg), r)
    out = merge(tokens, plan)
    return (out, plan) if return_plan else out
