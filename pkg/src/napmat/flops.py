"""Analytic FLOPs of a ViT forward pass under a token-count schedule.

Convention: one multiply-add counts as one FLOP, which is how the usual
DeiT figures (4.6G for DeiT-S/224) are quoted. LayerNorm, softmax and GELU
element-wise costs are left out. All arithmetic is on Python ints.
"""
from dataclasses import dataclass

from .errors import ConfigError
from .nap import keep_count


@dataclass(frozen=True)
class ModelSpec:
    name: str
    depth: int
    dim: int
    heads: int
    mlp_ratio: float = 4.0
    patch: int = 16
    resolution: int = 224
    protected: int = 1
    channels: int = 3
    num_classes: int = 1000
    grid: tuple = None   # (rows, cols) patch grid; derived from resolution when unset

    def __post_init__(self):
        for f in ("depth", "dim", "heads", "patch", "resolution"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be positive")
        if self.dim % self.heads:
            raise ConfigError("dim must be divisible by heads")
        if self.grid is None and self.resolution % self.patch:
            raise ConfigError("resolution must be divisible by patch")

    @property
    def num_patches(self):
        if self.grid is not None:
            return self.grid[0] * self.grid[1]
        return (self.resolution // self.patch) ** 2

    @property
    def initial_tokens(self):
        return self.num_patches + self.protected

    @property
    def hidden(self):
        return int(round(self.mlp_ratio * self.dim))


PRESETS = {
    "deit-s": ModelSpec("DeiT-S/224", 12, 384, 6),
    "deit-b": ModelSpec("DeiT-B/224", 12, 768, 12),
    "deit-b-384": ModelSpec("DeiT-B/384", 12, 768, 12, resolution=384),
    "vit-l": ModelSpec("ViT-L/224", 24, 1024, 16),
}


def get_preset(name):
    key = name.strip().lower().replace("_", "-").replace("/", "-")
    aliases = {"deit-s-224": "deit-s", "deit-b-224": "deit-b", "deit-b384": "deit-b-384",
               "vit-l-224": "vit-l", "vit-b": "deit-b", "vit-b-224": "deit-b"}
    key = aliases.get(key, key)
    if key not in PRESETS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[key]


def attention_flops(n, spec):
    """QKV and output projections plus the two N x N matmuls."""
    c = spec.dim
    return 4 * n * c * c + 2 * n * n * c


def mlp_flops(n, spec):
    return 2 * n * spec.dim * spec.hidden


def block_flops(n, spec):
    if n < 1:
        raise ValueError("a block needs at least one token")
    return attention_flops(n, spec) + mlp_flops(n, spec)


def embed_flops(spec):
    return spec.num_patches * spec.patch * spec.patch * spec.channels * spec.dim


def head_flops(spec):
    return spec.dim * spec.num_classes


def check_schedule(counts, spec):
    counts = [int(n) for n in counts]
    if len(counts) != spec.depth:
        raise ConfigError(f"schedule has {len(counts)} layers, model has {spec.depth}")
    prev = spec.initial_tokens
    for n in counts:
        if n > prev:
            raise ConfigError("token schedule must be non-increasing")
        if n < 1 + spec.protected:
            raise ConfigError(f"schedule drops below {1 + spec.protected} tokens")
        prev = n
    return counts


def schedule_flops(counts, spec):
    """Total FLOPs for per-layer token counts.

    ``counts[l]`` is the number of tokens after layer ``l``'s reduction.
    Attention runs on the count entering the layer, the MLP on the reduced
    count. Returns ``{"total", "per_layer", "embed", "head"}``.
    """
    counts = check_schedule(counts, spec)
    per_layer = []
    prev = spec.initial_tokens
    for n in counts:
        per_layer.append(attention_flops(prev, spec) + mlp_flops(n, spec))
        prev = n
    emb, head = embed_flops(spec), head_flops(spec)
    return {"total": sum(per_layer) + emb + head, "per_layer": per_layer, "embed": emb, "head": head}


def baseline_flops(spec):
    return schedule_flops([spec.initial_tokens] * spec.depth, spec)["total"]


def nap_schedule(spec, keep_ratio=0.7, layers=(3, 6, 9)):
    """Counts for pruning at ``layers``; all discards share one fused token."""
    image, fused, counts = spec.num_patches, 0, []
    for layer in range(spec.depth):
        if layer in layers and keep_ratio < 1.0:
            kept = keep_count(keep_ratio, image)
            if kept < image:
                image, fused = kept, 1
        counts.append(spec.protected + image + fused)
    return counts


def mat_schedule(spec, r):
    counts, n = [], spec.initial_tokens
    for _ in range(spec.depth):
        if n - spec.protected - r < 1:
            raise ConfigError(f"r={r} exhausts the tokens before layer {len(counts)}")
        n -= r
        counts.append(n)
    return counts


def find_mat_r(spec, target):
    """Constant per-layer merge count whose FLOPs land closest to ``target``."""
    best = None
    for r in range(0, spec.num_patches):
        try:
            total = schedule_flops(mat_schedule(spec, r), spec)["total"]
        except ConfigError:
            break
        if best is None or abs(total - target) < abs(best[1] - target):
            best = (r, total)
    return best


def hynap_schedule(spec, entries):
    from .hynap import HybridSchedule

    if not isinstance(entries, HybridSchedule):
        entries = HybridSchedule(tuple(entries))
    return entries.token_counts(spec.initial_tokens, spec.protected)
