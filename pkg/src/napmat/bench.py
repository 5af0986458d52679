"""Micro-benchmarks of the reduction kernels and their scaling in T."""
import time

import numpy as np

from . import kernels


def time_ns(fn, *args, repeat=5, min_time=0.02):
    """Best-of-``repeat`` wall time of one call, in nanoseconds.

    Each repeat loops the call until ``min_time`` seconds have passed so
    short kernels are not dominated by timer resolution. One warm-up call
    (which also triggers JIT compilation) is discarded.
    """
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        calls = 0
        start = time.perf_counter_ns()
        while True:
            fn(*args)
            calls += 1
            elapsed = time.perf_counter_ns() - start
            if elapsed >= min_time * 1e9:
                break
        best = min(best, elapsed / calls)
    return best


def loglog_slope(xs, ys):
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


def mat_pair_count(num_tokens, protected=1):
    return num_tokens - protected - 1


def all_pairs_count(num_tokens, protected=1):
    m = num_tokens - protected
    return m * (m - 1) // 2


def similarity_scaling(sizes=(256, 512, 1024, 2048, 4096, 8192), dim=64, backend=None,
                       seed=0, repeat=3, min_time=0.02):
    """Time adjacent-pair vs all-pairs cosine similarity over a sweep of T."""
    impl = kernels.BACKENDS[backend or kernels.BACKEND]
    rng = np.random.default_rng(seed)
    rows = []
    for t in sizes:
        feats = rng.normal(size=(1, t, dim))
        adj = time_ns(impl["adjacent_cosine"], feats, repeat=repeat, min_time=min_time)
        full = time_ns(impl["all_pairs_best"], feats[0], repeat=repeat, min_time=min_time)
        rows.append({
            "T": t,
            "mat_pairs": t - 1,
            "all_pairs": t * (t - 1) // 2,
            "mat_ns": adj,
            "all_pairs_ns": full,
            "mat_ns_per_pair": adj / (t - 1),
            "all_pairs_ns_per_pair": full / (t * (t - 1) // 2),
        })
    ts = [r["T"] for r in rows]
    return {
        "backend": backend or kernels.BACKEND,
        "dim": dim,
        "rows": rows,
        "mat_slope": loglog_slope(ts, [r["mat_ns"] for r in rows]),
        "all_pairs_slope": loglog_slope(ts, [r["all_pairs_ns"] for r in rows]),
    }


def kernel_sweep(sizes=(256, 1024, 4096), dim=64, r=8, radius=3, backend=None, seed=0,
                 repeat=3, min_time=0.01):
    """ns per call of each reduction kernel at several sequence lengths."""
    impl = kernels.BACKENDS[backend or kernels.BACKEND]
    rng = np.random.default_rng(seed)
    weights = 1.0 / (np.abs(np.arange(-radius, radius + 1)) + 1.0)
    weights /= weights.sum()
    rows = []
    for t in sizes:
        x = rng.normal(size=(1, t, dim))
        sizes_ = np.ones((1, t))
        scores = rng.normal(size=t - 1)
        dest = np.sort(np.argsort(-scores, kind="stable")[:r]).astype(np.int64)
        group = np.arange(t, dtype=np.int64)[None].copy()
        group[0, dest + 1] = dest
        # compact the group ids
        _, group[0] = np.unique(group[0], return_inverse=True)
        n_out = int(group.max()) + 1
        r_attn = rng.random((1, t))
        rows.append({
            "T": t,
            "forward_fill_ns": time_ns(impl["forward_fill"], dest, repeat=repeat, min_time=min_time),
            "neighbor_conv_ns": time_ns(impl["neighbor_conv"], r_attn, weights,
                                        repeat=repeat, min_time=min_time),
            "adjacent_cosine_ns": time_ns(impl["adjacent_cosine"], x, repeat=repeat, min_time=min_time),
            "segment_mean_ns": time_ns(impl["segment_mean"], x, sizes_, group, n_out,
                                       repeat=repeat, min_time=min_time),
        })
    return {"backend": backend or kernels.BACKEND, "dim": dim, "r": r, "radius": radius, "rows": rows}


def run(sizes=(256, 512, 1024, 2048, 4096, 8192), dim=64, backends=None, repeat=3):
    backends = backends or [kernels.BACKEND]
    out = {"backends": {}}
    for name in backends:
        out["backends"][name] = {
            "scaling": similarity_scaling(sizes, dim, name, repeat=repeat),
            "kernels": kernel_sweep(sizes[:3], dim, backend=name, repeat=repeat),
        }
    return out
