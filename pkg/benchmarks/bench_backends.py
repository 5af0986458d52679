"""Compare the numba and pure-numpy kernel backends.

    python benchmarks/bench_backends.py [--sizes 256,1024,4096] [--dim 64]

Prints one line per (kernel, T) with ns/call for each backend and the
speed-up, then the log-log slopes of adjacent vs all-pairs similarity.
"""
import argparse

from napmat import bench, kernels


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096")
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    sizes = tuple(int(v) for v in args.sizes.split(","))

    backends = sorted(kernels.BACKENDS)
    sweeps = {b: bench.kernel_sweep(sizes, args.dim, backend=b, repeat=args.repeat) for b in backends}
    names = [k for k in sweeps[backends[0]]["rows"][0] if k.endswith("_ns")]
    print(f"{'kernel':<22}{'T':>6}" + "".join(f"{b:>14}" for b in backends) + f"{'numpy/numba':>14}")
    for name in names:
        for i, t in enumerate(sizes):
            vals = {b: sweeps[b]["rows"][i][name] for b in backends}
            ratio = vals["numpy"] / vals["numba"] if "numba" in vals else float("nan")
            print(f"{name[:-3]:<22}{t:>6}" + "".join(f"{vals[b]:>14.0f}" for b in backends)
                  + f"{ratio:>14.2f}")

    print()
    for b in backends:
        s = bench.similarity_scaling(sizes, args.dim, b, repeat=args.repeat)
        print(f"{b}: adjacent slope {s['mat_slope']:.2f}, all-pairs slope {s['all_pairs_slope']:.2f}")


if __name__ == "__main__":
    main()
