"""End-to-end runs: embed, reorder, then depth x (attention, reduction, MLP)."""
import os
import time
from collections import defaultdict

import numpy as np

from . import netpbm
from .curve import CurveKind, build_order, locality_score, reorder_tokens
from .errors import InputError, ShapeError
from .flops import ModelSpec, schedule_flops
from .hynap import hynap_layer
from .mat import mat_reduce
from .nap import nap_layer
from .tokens import GridShape
from .toy_vit import BlockConfig, attention_forward, embed_patches, mlp_forward, synthetic_tokens

SCHEMA_VERSION = 1

FATE_KEPT, FATE_MERGED, FATE_FUSED = 255, 128, 0


def _pad_protected(tokens, protected):
    # embed_patches makes one class token; extra protected slots are zero tokens
    if protected == tokens.protected:
        return tokens
    extra = protected - tokens.protected
    b, _, c = tokens.x.shape
    x = np.concatenate([tokens.x[:, :1], np.zeros((b, extra, c)), tokens.x[:, 1:]], axis=1)
    sizes = np.concatenate([np.ones((b, extra)), tokens.sizes], axis=1)
    return tokens.replace(x=x, sizes=sizes, owner=tokens.owner + extra, protected=protected)


def initial_tokens(cfg, image=None):
    """Embedded image tokens, or seeded Gaussian tokens when no image is given."""
    if image is None and cfg.image:
        image = netpbm.read(cfg.image)
    if image is not None:
        try:
            tokens, grid = embed_patches(image, cfg.patch, cfg.dim, cfg.seed)
        except ShapeError as exc:
            raise InputError(str(exc)) from None
        return _pad_protected(tokens, cfg.protected), grid, (image.shape[2] if image.ndim == 3 else 1)
    grid = GridShape.parse(cfg.grid)
    return synthetic_tokens(grid, cfg.dim, cfg.batch, cfg.seed, cfg.protected), grid, 0


def _cells(prov, index):
    return sorted(int(c) for c in prov[index])


def _nap_decision(before, plan):
    prov = before.provenance(0)
    fused_cells = set()
    for i in plan.fused_source_indices[0]:
        fused_cells |= prov[i]
    if plan.absorbed_fused:
        fused_cells |= prov[before.num_tokens - 1]
    return {
        "kept": [int(i) for i in plan.keep_indices[0]],
        "fused": [int(i) for i in plan.fused_source_indices[0]],
        "absorbed_previous_fused": bool(plan.absorbed_fused),
        "fused_cells": sorted(int(c) for c in fused_cells),
    }


def _merge_decision(before, pairs):
    prov = before.provenance(0)
    groups = defaultdict(list)
    for s, d in pairs:
        groups[int(d)].append(int(s))
    out = []
    for d in sorted(groups):
        cells = set(prov[d])
        for s in groups[d]:
            cells |= prov[s]
        out.append({"dest": d, "sources": sorted(groups[d]), "cells": sorted(int(c) for c in cells)})
    return out


def fate_image(tokens, grid, b=0):
    """Per-cell fate after a reduction: kept 255, merged 128, pruned/fused 0."""
    tok = tokens.owner[b]
    fate = np.where(tokens.sizes[b, tok] > 1, FATE_MERGED, FATE_KEPT).astype(np.uint8)
    if tokens.fused:
        fate[tok == tokens.num_tokens - 1] = FATE_FUSED
    return fate.reshape(grid.rows, grid.cols)


def run_pipeline(cfg, image=None, render_dir=None):
    """Run one configuration and return the JSON-ready report.

    Everything except the ``timing`` section is a deterministic function
    of the configuration and input.
    """
    timing = defaultdict(float)
    t0 = time.perf_counter()
    tokens, grid, channels = initial_tokens(cfg, image)
    timing["embed"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    order = build_order(grid, cfg.order)
    tokens = reorder_tokens(tokens, order)
    timing["reorder"] += time.perf_counter() - t0

    block = BlockConfig(dim=cfg.dim, heads=cfg.heads, mlp_ratio=cfg.mlp_ratio, depth=cfg.depth,
                        seed=cfg.seed, size_weighted=cfg.size_weighted,
                        fused_attends=cfg.fused_attends)
    nap_cfg, sim_cfg, schedule = cfg.nap_config(), cfg.similarity(), cfg.schedule()
    initial = tokens.num_tokens
    counts, layers = [], []
    if render_dir:
        os.makedirs(render_dir, exist_ok=True)

    for layer in range(cfg.depth):
        t0 = time.perf_counter()
        tokens, attn, keys = attention_forward(tokens, block, layer)
        timing["attention"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        before = tokens
        decision = None
        if cfg.method == "nap" and layer in nap_cfg.layers:
            tokens, plan = nap_layer(tokens, attn, nap_cfg)
            if tokens is not before:
                decision = {"prune": _nap_decision(before, plan)}
        elif cfg.method == "mat" and cfg.mat_r > 0:
            if cfg.mat_r > tokens.num_image - 1:
                raise ShapeError(f"layer {layer}: cannot merge {cfg.mat_r} pairs among "
                                 f"{tokens.num_image} tokens")
            tokens, plan = mat_reduce(tokens, keys, sim_cfg, cfg.mat_r, return_plan=True)
            pairs = [(s + before.protected, f + before.protected)
                     for s, f in zip(plan.src[0], plan.filled[0])]
            decision = {"merge": _merge_decision(before, pairs)}
        elif cfg.method == "hynap" and any(schedule[layer]):
            tokens, info = hynap_layer(tokens, attn, keys, schedule[layer], nap_cfg, return_info=True)
            decision = {}
            if info["prune"] is not None:
                decision["prune"] = _nap_decision(before, info["prune"])
            if info["merge"] is not None:
                # positions refer to the sequence after this layer's pruning
                src, dst = info["merge"]
                decision["merge"] = {"pairs": [[int(s), int(d)] for s, d in zip(src[0], dst[0])]}
        timing["reduction"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        tokens = mlp_forward(tokens, block, layer)
        timing["mlp"] += time.perf_counter() - t0

        counts.append(tokens.num_tokens)
        record = {"layer": layer, "tokens_in": before.num_tokens, "tokens_out": tokens.num_tokens}
        if decision is not None:
            record["decision"] = decision
            if render_dir:
                path = os.path.join(render_dir, f"layer{layer:02d}.pgm")
                netpbm.write(path, fate_image(tokens, grid))
                record["render"] = os.path.basename(path)
        layers.append(record)

    spec = ModelSpec("run", cfg.depth, cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.patch,
                     protected=tokens.protected, channels=channels, grid=(grid.rows, grid.cols))
    flops = schedule_flops(counts, spec)
    radii = [r for r in (1, 2, 3, 4) if r < grid.size]
    report = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.as_dict(),
        "grid": [grid.rows, grid.cols],
        "initial_tokens": initial,
        "token_counts": counts,
        "layers": layers,
        "flops": {"total": flops["total"], "per_layer": flops["per_layer"]},
        "locality": {str(r): locality_score(order, r) for r in radii},
        "final_size_total": float(tokens.sizes[0, tokens.protected:].sum()),
        "timing": {k: round(v, 6) for k, v in sorted(timing.items())},
    }
    return report


def adjacent_pair_similarity(tokens):
    """Mean cosine similarity of sequence-adjacent image tokens.

    Pairs touching a zero vector (an all-black patch) have no defined
    cosine and are left out.
    """
    p = tokens.protected
    feats = tokens.x[:, p:]
    norm = np.linalg.norm(feats, axis=-1)
    valid = (norm[:, :-1] > 0) & (norm[:, 1:] > 0)
    unit = feats / np.where(norm > 0, norm, 1.0)[..., None]
    cos = (unit[:, :-1] * unit[:, 1:]).sum(-1)
    return float(cos[valid].mean()) if valid.any() else 0.0


def ablate_ordering(grid=None, images=(), patch=16, dim=64, seed=0, radii=(1, 2, 3, 4)):
    """Locality and adjacent-token similarity for every curve kind.

    ``images`` are arrays; each is embedded once and re-laid-out along every
    curve. Without images only locality is reported, on ``grid``.
    """
    embedded = [embed_patches(img, patch, dim, seed) for img in images]
    if grid is None:
        if not embedded:
            raise ValueError("need a grid or at least one image")
        grid = embedded[0][1]
    rows = []
    for kind in CurveKind:
        order = build_order(grid, kind)
        entry = {"kind": kind.value,
                 "locality": {str(r): locality_score(order, r) for r in radii if r < grid.size}}
        sims = []
        for tokens, g in embedded:
            sims.append(adjacent_pair_similarity(reorder_tokens(tokens, build_order(g, kind))))
        if sims:
            entry["adjacent_cosine_mean"] = float(np.mean(sims))
            entry["adjacent_cosine_per_image"] = [round(s, 12) for s in sims]
        rows.append(entry)
    return {"grid": [grid.rows, grid.cols], "images": len(embedded), "orders": rows}


def load_corpus(directory):
    """Read every .ppm/.pgm file in ``directory`` in sorted order."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith((".ppm", ".pgm")))
    return [netpbm.read(os.path.join(directory, n)) for n in names]
