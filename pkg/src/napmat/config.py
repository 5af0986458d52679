"""Run configuration: plain ``key = value`` files, env and flag overrides.

Precedence, lowest to highest: defaults, config file, ``NAPMAT_SEED``,
command-line overrides.
"""
import os
from dataclasses import dataclass, field

from .curve import CurveKind
from .errors import ConfigError
from .hynap import DEFAULT_ENTRY, HybridSchedule
from .mat import Feature, Metric, SimilarityConfig
from .nap import NAPConfig

METHODS = ("none", "nap", "mat", "hynap")


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    text = str(text).strip()
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v) if text else ()


def parse_pairs(text):
    """``"6:6"`` (every layer) or ``"0:8,4:4,..."`` (one pair per layer)."""
    if isinstance(text, (list, tuple)):
        return tuple((int(a), int(b)) for a, b in text)
    out = []
    for item in str(text).replace(" ", "").split(","):
        if not item:
            continue
        a, sep, b = item.partition(":")
        if not sep:
            raise ValueError(f"schedule entry {item!r} is not PRUNE:MERGE")
        out.append((int(a), int(b)))
    return tuple(out)


# key -> (attribute, parser)
KEYS = {
    "method": ("method", str),
    "depth": ("depth", int),
    "dim": ("dim", int),
    "heads": ("heads", int),
    "mlp_ratio": ("mlp_ratio", float),
    "seed": ("seed", int),
    "patch": ("patch", int),
    "order": ("order", str),
    "grid": ("grid", str),
    "batch": ("batch", int),
    "image": ("image", str),
    "size_weighted_attention": ("size_weighted", _bool),
    "fused_attends": ("fused_attends", _bool),
    "nap.radius": ("nap_radius", int),
    "nap.alpha": ("nap_alpha", float),
    "nap.keep_ratio": ("nap_keep_ratio", float),
    "nap.layers": ("nap_layers", _int_list),
    "nap.fused_weighting": ("nap_fused_weighting", str),
    "mat.metric": ("mat_metric", str),
    "mat.feature": ("mat_feature", str),
    "mat.r_per_layer": ("mat_r", int),
    "mat.protected": ("protected", int),
    "hynap.schedule": ("hynap_schedule", parse_pairs),
}


@dataclass
class RunConfig:
    method: str = "none"
    depth: int = 12
    dim: int = 384
    heads: int = 6
    mlp_ratio: float = 4.0
    seed: int = 0
    patch: int = 16
    order: str = "hilbert"
    grid: str = "14x14"          # synthetic mode only
    batch: int = 1               # synthetic mode only
    image: str = ""              # PPM/PGM path; empty means synthetic tokens
    size_weighted: bool = True
    fused_attends: bool = True
    nap_radius: int = 3
    nap_alpha: float = 0.1
    nap_keep_ratio: float = 0.7
    nap_layers: tuple = (3, 6, 9)
    nap_fused_weighting: str = "uniform"
    mat_metric: str = "cosine"
    mat_feature: str = "kmean"
    mat_r: int = 8
    protected: int = 1
    hynap_schedule: tuple = field(default_factory=lambda: (DEFAULT_ENTRY,))

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        try:
            CurveKind.parse(self.order)
            Metric(self.mat_metric)
            Feature(self.mat_feature)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.depth < 1 or self.dim < 1 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError("need depth >= 1 and dim a positive multiple of heads")
        if self.protected < 1:
            raise ConfigError("mat.protected must be >= 1 (the class token)")
        if self.mat_r < 0:
            raise ConfigError("mat.r_per_layer must be >= 0")
        if self.batch < 1 or self.patch < 1:
            raise ConfigError("batch and patch must be positive")
        self.nap_config()
        self.schedule()
        return self

    def nap_config(self):
        return NAPConfig(radius=self.nap_radius, alpha=self.nap_alpha,
                         keep_ratio=self.nap_keep_ratio, layers=tuple(self.nap_layers),
                         fused_weighting=self.nap_fused_weighting)

    def similarity(self):
        return SimilarityConfig(Metric(self.mat_metric), Feature(self.mat_feature))

    def schedule(self):
        entries = tuple(self.hynap_schedule)
        if len(entries) == 1:
            entries = entries * self.depth
        if len(entries) != self.depth:
            raise ConfigError(f"hynap.schedule has {len(entries)} entries for depth {self.depth}")
        return HybridSchedule(entries)

    def as_dict(self):
        out = {}
        for key, (attr, _) in KEYS.items():
            v = getattr(self, attr)
            out[key] = [list(e) for e in v] if attr == "hynap_schedule" else (
                list(v) if isinstance(v, tuple) else v)
        return out


def parse_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def apply(cfg, values):
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, parse = KEYS[key]
        try:
            setattr(cfg, attr, parse(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None
    return cfg


def load(path=None, overrides=None, env=None):
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path:
        try:
            with open(path) as fh:
                apply(cfg, parse_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    if env.get("NAPMAT_SEED"):
        apply(cfg, {"seed": env["NAPMAT_SEED"]})
    apply(cfg, dict(overrides or {}))
    return cfg.validate()


def dump(cfg):
    lines = []
    for key, value in cfg.as_dict().items():
        if key == "hynap.schedule":
            value = ",".join(f"{a}:{b}" for a, b in value)
        elif isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"

