"""Hybrid pruning and merging.

Each layer first prunes by neighbor-aware importance, then merges the
surviving image tokens with bipartite soft matching. The bipartite split
alternates over importance rank: even ranks form the source set A, odd
ranks the destination set B.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .nap import NAPConfig, prune_to, score_tokens


@dataclass(frozen=True)
class HybridSchedule:
    entries: tuple   # per layer (prune_count, merge_count)

    def __post_init__(self):
        entries = tuple((int(a), int(b)) for a, b in self.entries)
        if any(a < 0 or b < 0 for a, b in entries):
            raise ConfigError("hynap schedule counts must be >= 0")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def constant(cls, depth, prune_count, merge_count):
        return cls(((prune_count, merge_count),) * depth)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, layer):
        return self.entries[layer]

    def token_counts(self, initial, protected=1):
        """Token count after each layer, starting from ``initial`` tokens."""
        counts = []
        n, fused = initial, False
        for prune_count, merge_count in self.entries:
            image = n - protected - int(fused)
            if prune_count + merge_count >= image:
                raise ConfigError(
                    f"schedule removes {prune_count + merge_count} of {image} image tokens")
            if merge_count > (image - prune_count) // 2:
                raise ConfigError(
                    f"bipartite matching cannot merge {merge_count} of {image - prune_count} tokens")
            n -= prune_count + merge_count
            if prune_count and not fused:
                n += 1
                fused = True
            counts.append(n)
        return counts


# Per-layer (prune, merge) used when none is configured. On DeiT-S/224 it
# lands at about 2.9 GFLOPs.
DEFAULT_ENTRY = (6, 6)


def _unit_rows(v):
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norms, out=np.zeros_like(v), where=norms > 0), norms[..., 0] > 0


def bsm_merge(tokens, keys, r, order=None, return_groups=False):
    """Bipartite soft matching over the mergeable tokens.

    ``order`` is ``(B, n)``: sequence positions of the mergeable tokens from
    most to least important (default: sequence order). Ranks 0, 2, 4, ...
    form set A and ranks 1, 3, 5, ... set B. Every A token points at its
    most similar B token (cosine over head-averaged keys); the ``r``
    strongest links merge their A token into the B token by size-weighted
    average. Survivors keep their sequence order.
    """
    p = tokens.protected
    stop = tokens.num_tokens - int(tokens.fused)
    n = stop - p
    if not 0 <= r <= n // 2:
        raise ValueError(f"cannot merge {r} tokens with bipartite matching over {n}")
    if r == 0:
        return (tokens, None) if return_groups else tokens
    b = tokens.batch
    if order is None:
        order = np.broadcast_to(np.arange(p, stop), (b, n))
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (b, n):
        raise ShapeError(f"rank order shape {order.shape} does not match {n} mergeable tokens")

    metric = np.asarray(keys, dtype=np.float64).mean(axis=1)   # (B, T, d)
    unit, nonzero = _unit_rows(metric)
    a_idx, b_idx = order[:, 0::2], order[:, 1::2]
    ua = np.take_along_axis(unit, a_idx[..., None], axis=1)
    ub = np.take_along_axis(unit, b_idx[..., None], axis=1)
    sims = ua @ ub.transpose(0, 2, 1)
    valid = (np.take_along_axis(nonzero, a_idx, axis=1)[:, :, None]
             & np.take_along_axis(nonzero, b_idx, axis=1)[:, None, :])
    sims = np.where(valid, sims, -np.inf)
    best_b = sims.argmax(axis=-1)                     # first maximum wins ties
    best = np.take_along_axis(sims, best_b[..., None], axis=-1)[..., 0]
    chosen = np.argsort(-best, axis=-1, kind="stable")[:, :r]

    src = np.take_along_axis(a_idx, chosen, axis=1)
    dst = np.take_along_axis(b_idx, np.take_along_axis(best_b, chosen, axis=1), axis=1)
    target = np.broadcast_to(np.arange(tokens.num_tokens), (b, tokens.num_tokens)).copy()
    np.put_along_axis(target, src, dst, axis=1)
    survive = np.ones((b, tokens.num_tokens), dtype=bool)
    np.put_along_axis(survive, src, False, axis=1)
    slot = np.cumsum(survive, axis=1) - 1
    group = np.take_along_axis(slot, target, axis=1)

    x, sizes = kernels.segment_mean(tokens.x, tokens.sizes, group, tokens.num_tokens - r)
    owner = np.take_along_axis(group, tokens.owner, axis=1)
    out = tokens.replace(x=x, sizes=sizes, owner=owner)
    if return_groups:
        return out, (src, dst)
    return out


def hynap_layer(tokens, attn, keys, entry, nap_cfg=NAPConfig(), return_info=False):
    """One hybrid reduction: prune ``entry[0]`` tokens, then merge ``entry[1]``."""
    prune_count, merge_count = entry
    if prune_count + merge_count >= tokens.num_image:
        raise ConfigError(
            f"cannot remove {prune_count + merge_count} of {tokens.num_image} image tokens")
    info = {"prune": None, "merge": None}
    if prune_count == 0 and merge_count == 0:
        return (tokens, info) if return_info else tokens

    xi = score_tokens(attn, tokens, nap_cfg.radius, nap_cfg.alpha).xi
    p = tokens.protected
    keys = np.asarray(keys)
    if prune_count:
        n_keep = tokens.num_image - prune_count
        tokens, plan = prune_to(tokens, xi, n_keep, nap_cfg.fused_weighting)
        info["prune"] = plan
        kept = plan.keep_indices
        xi = np.take_along_axis(xi, kept - p, axis=1)
        b = tokens.batch
        index = np.concatenate([np.broadcast_to(np.arange(p), (b, p)), kept], axis=1)
        kept_keys = np.take_along_axis(keys, index[:, None, :, None], axis=2)
        pad = np.zeros(kept_keys.shape[:2] + (1,) + kept_keys.shape[3:])
        keys = np.concatenate([kept_keys, pad], axis=2)   # fused token: never merged
    if merge_count:
        rank = np.argsort(-xi, axis=1, kind="stable") + p
        tokens, groups = bsm_merge(tokens, keys, merge_count, order=rank, return_groups=True)
        info["merge"] = groups
    return (tokens, info) if return_info else tokens
