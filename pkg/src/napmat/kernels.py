"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used by default. Set ``NAPMAT_DISABLE_NUMBA=1`` (or run
without numba installed) to select the numpy path. Both implementations of
every kernel are always importable through :data:`BACKENDS` so tests and
benchmarks can compare them directly.
"""
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn


def _env_disabled():
    return os.environ.get("NAPMAT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# forward fill of merge destinations


def forward_fill_numpy(dest):
    dest = np.asarray(dest, dtype=np.int64)
    if dest.size == 0:
        return dest.copy()
    starts = np.empty(dest.size, dtype=bool)
    starts[0] = True
    starts[1:] = np.diff(dest) > 1
    run_start = np.maximum.accumulate(np.where(starts, np.arange(dest.size), 0))
    return dest[run_start]


@njit(cache=True)
def forward_fill_numba(dest):
    out = np.empty_like(dest)
    if dest.size == 0:
        return out
    current = dest[0]
    out[0] = current
    for k in range(1, dest.size):
        if dest[k] - dest[k - 1] > 1:
            current = dest[k]
        out[k] = current
    return out


# ---------------------------------------------------------------------------
# zero-padded 1D correlation along the last axis


def neighbor_conv_numpy(values, weights):
    values = np.asarray(values, dtype=np.float64)
    radius = (weights.size - 1) // 2
    m = values.shape[-1]
    padded = np.zeros(values.shape[:-1] + (m + 2 * radius,))
    padded[..., radius:radius + m] = values
    out = np.zeros_like(values)
    for k in range(weights.size):
        out += weights[k] * padded[..., k:k + m]
    return out


@njit(cache=True)
def neighbor_conv_numba(values, weights):
    radius = (weights.size - 1) // 2
    rows, m = values.shape
    out = np.zeros_like(values)
    for b in range(rows):
        for i in range(m):
            acc = 0.0
            for k in range(weights.size):
                j = i + k - radius
                if 0 <= j < m:
                    acc += weights[k] * values[b, j]
            out[b, i] = acc
    return out


# ---------------------------------------------------------------------------
# cosine similarity of sequence-adjacent rows


def adjacent_cosine_numpy(feats):
    feats = np.asarray(feats, dtype=np.float64)
    norms = np.sqrt(np.einsum("btc,btc->bt", feats, feats))
    dots = np.einsum("btc,btc->bt", feats[:, :-1], feats[:, 1:])
    denom = norms[:, :-1] * norms[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = dots / denom
    out[denom == 0] = -np.inf
    return out


@njit(cache=True)
def adjacent_cosine_numba(feats):
    batch, n, dim = feats.shape
    out = np.empty((batch, max(n - 1, 0)))
    for b in range(batch):
        prev_norm = 0.0
        for c in range(dim):
            prev_norm += feats[b, 0, c] * feats[b, 0, c]
        prev_norm = np.sqrt(prev_norm)
        for t in range(1, n):
            dot = 0.0
            sq = 0.0
            for c in range(dim):
                v = feats[b, t, c]
                dot += feats[b, t - 1, c] * v
                sq += v * v
            norm = np.sqrt(sq)
            denom = prev_norm * norm
            if denom == 0.0:
                out[b, t - 1] = -np.inf
            else:
                out[b, t - 1] = dot / denom
            prev_norm = norm
    return out


# ---------------------------------------------------------------------------
# all-pairs reference: best cosine partner of every row (benchmark baseline)


def all_pairs_best_numpy(feats, block=512):
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    norms = np.sqrt(np.einsum("tc,tc->t", feats, feats))
    unit = feats / np.where(norms == 0, 1.0, norms)[:, None]
    best = np.full(n, -np.inf)
    arg = np.full(n, -1, dtype=np.int64)
    for lo in range(0, n, block):
        sims = unit[lo:lo + block] @ unit.T
        rows = np.arange(sims.shape[0])
        sims[rows, lo + rows] = -np.inf
        arg[lo:lo + block] = np.argmax(sims, axis=1)
        best[lo:lo + block] = sims[rows, arg[lo:lo + block]]
    return best, arg


@njit(cache=True)
def all_pairs_best_numba(feats):
    n, dim = feats.shape
    norms = np.empty(n)
    for i in range(n):
        sq = 0.0
        for c in range(dim):
            sq += feats[i, c] * feats[i, c]
        norms[i] = np.sqrt(sq)
    best = np.full(n, -np.inf)
    arg = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            dot = 0.0
            for c in range(dim):
                dot += feats[i, c] * feats[j, c]
            denom = norms[i] * norms[j]
            s = dot / denom if denom != 0.0 else -np.inf
            if s > best[i]:
                best[i] = s
                arg[i] = j
            if s > best[j]:
                best[j] = s
                arg[j] = i
    return best, arg


# ---------------------------------------------------------------------------
# weighted segment mean: rows of x sharing a group id collapse into one row.
# Accumulation runs in ascending token order so results are reproducible.
# Singleton groups copy their token so untouched tokens stay bit-identical.


def segment_mean_numpy(x, weights, group, n_out):
    batch, _, dim = x.shape
    acc = np.zeros((batch, n_out, dim))
    wsum = np.zeros((batch, n_out))
    count = np.zeros((batch, n_out), dtype=np.int64)
    bidx = np.broadcast_to(np.arange(batch)[:, None], group.shape)
    np.add.at(acc, (bidx, group), weights[..., None] * x)
    np.add.at(wsum, (bidx, group), weights)
    np.add.at(count, (bidx, group), 1)
    acc /= wsum[..., None]
    # a token alone in its group passes through untouched
    alone = np.take_along_axis(count, group, axis=1) == 1
    acc[bidx[alone], group[alone]] = x[alone]
    return acc, wsum


@njit(cache=True, error_model="numpy")
def segment_mean_numba(x, weights, group, n_out):
    batch, tokens, dim = x.shape
    acc = np.zeros((batch, n_out, dim))
    wsum = np.zeros((batch, n_out))
    count = np.zeros(n_out, dtype=np.int64)
    first = np.zeros(n_out, dtype=np.int64)
    for b in range(batch):
        count[:] = 0
        for t in range(tokens):
            g = group[b, t]
            w = weights[b, t]
            if count[g] == 0:
                first[g] = t
            count[g] += 1
            wsum[b, g] += w
            for c in range(dim):
                acc[b, g, c] += w * x[b, t, c]
        for g in range(n_out):
            if count[g] == 1:
                for c in range(dim):
                    acc[b, g, c] = x[b, first[g], c]
            else:
                for c in range(dim):
                    acc[b, g, c] /= wsum[b, g]
    return acc, wsum


# ---------------------------------------------------------------------------

BACKENDS = {
    "numpy": {
        "forward_fill": forward_fill_numpy,
        "neighbor_conv": neighbor_conv_numpy,
        "adjacent_cosine": adjacent_cosine_numpy,
        "all_pairs_best": all_pairs_best_numpy,
        "segment_mean": segment_mean_numpy,
    },
}
if HAVE_NUMBA:
    BACKENDS["numba"] = {
        "forward_fill": forward_fill_numba,
        "neighbor_conv": neighbor_conv_numba,
        "adjacent_cosine": adjacent_cosine_numba,
        "all_pairs_best": all_pairs_best_numba,
        "segment_mean": segment_mean_numba,
    }

_active = BACKENDS[BACKEND]


def forward_fill(dest):
    return _active["forward_fill"](np.ascontiguousarray(dest, dtype=np.int64))


def neighbor_conv(values, weights):
    values = np.ascontiguousarray(values, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if values.ndim == 1:
        return _active["neighbor_conv"](values[None], weights)[0]
    return _active["neighbor_conv"](values, weights)


def adjacent_cosine(feats):
    return _active["adjacent_cosine"](np.ascontiguousarray(feats, dtype=np.float64))


def all_pairs_best(feats):
    return _active["all_pairs_best"](np.ascontiguousarray(feats, dtype=np.float64))


def segment_mean(x, weights, group, n_out):
    """Weighted mean of the rows of ``x`` grouped by ``group``.

    Returns ``(means, weight_sums)`` with shapes ``(B, n_out, C)`` and
    ``(B, n_out)``. Every group id in ``0..n_out-1`` must be used.
    """
    return _active["segment_mean"](
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(group, dtype=np.int64),
        int(n_out),
    )
