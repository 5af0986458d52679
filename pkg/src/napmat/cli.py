"""Command-line front end: ``napmat order|run|flops|ablate|bench``."""
import argparse
import json
import os
import sys

from . import bench, config, flops, kernels, netpbm, pipeline
from .curve import build_order, order_image
from .errors import ConfigError, InputError, ShapeError
from .tokens import GridShape

EXIT_OK, EXIT_CONFIG, EXIT_INPUT = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _emit_json(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out and out != "-":
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_order(args):
    order = build_order(GridShape(args.rows, args.cols), args.kind)
    if args.emit == "pgm":
        data = netpbm.encode(order_image(order))
        if args.out and args.out != "-":
            with open(args.out, "wb") as fh:
                fh.write(data)
        else:
            sys.stdout.buffer.write(data)
        return EXIT_OK
    _emit_json({"rows": args.rows, "cols": args.cols, "kind": order.kind.value,
                "perm": order.perm.tolist()}, args.out)
    return EXIT_OK


def _overrides(args):
    values = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = value.strip()
    flag_keys = {"method": "method", "seed": "seed", "image": "image", "grid": "grid",
                 "depth": "depth", "dim": "dim", "heads": "heads", "order": "order",
                 "batch": "batch", "r": "mat.r_per_layer", "keep_ratio": "nap.keep_ratio"}
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = str(v)
    return values


def cmd_run(args):
    cfg = config.load(args.config, _overrides(args))
    report = pipeline.run_pipeline(cfg, render_dir=args.render)
    _emit_json(report, args.out)
    return EXIT_OK


def _read_schedule(text):
    if os.path.exists(text):
        with open(text) as fh:
            text = fh.read()
    try:
        return [int(v) for v in text.replace("\n", ",").replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"schedule must be comma-separated token counts, got {text!r}") from None


def cmd_flops(args):
    spec = flops.get_preset(args.model)
    if args.schedule:
        counts = _read_schedule(args.schedule)
    elif args.method == "nap":
        layers = tuple(int(v) for v in args.layers.split(",") if v)
        counts = flops.nap_schedule(spec, args.keep_ratio, layers)
    elif args.method == "mat":
        counts = flops.mat_schedule(spec, args.r)
    elif args.method == "hynap":
        entries = config.parse_pairs(args.hynap)
        if len(entries) == 1:
            entries = entries * spec.depth
        counts = flops.hynap_schedule(spec, entries)
    else:
        counts = [spec.initial_tokens] * spec.depth
    result = flops.schedule_flops(counts, spec)
    _emit_json({"model": spec.name, "schedule": counts, "total": result["total"],
                "per_layer": result["per_layer"], "embed": result["embed"],
                "head": result["head"], "gflops": round(result["total"] / 1e9, 4)}, args.out)
    return EXIT_OK


def cmd_ablate(args):
    images = pipeline.load_corpus(args.corpus) if args.corpus else []
    grid = GridShape(args.rows, args.cols) if args.rows and args.cols else None
    if grid is None and not images:
        raise ConfigError("ablate needs --rows/--cols or --corpus")
    report = pipeline.ablate_ordering(grid, images, patch=args.patch, dim=args.dim, seed=args.seed)
    _emit_json(report, args.out)
    return EXIT_OK


def cmd_bench(args):
    sizes = tuple(int(v) for v in args.sizes.split(","))
    if args.backend == "both":
        backends = sorted(kernels.BACKENDS)
    else:
        if args.backend not in kernels.BACKENDS:
            raise ConfigError(f"backend {args.backend!r} is not available")
        backends = [args.backend]
    _emit_json(bench.run(sizes, args.dim, backends, args.repeat), args.out)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="napmat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("order", help="emit a curve order as JSON or a PGM image")
    o.add_argument("--rows", type=int, required=True)
    o.add_argument("--cols", type=int, required=True)
    o.add_argument("--kind", default="hilbert", choices=["hilbert", "row", "boustro", "z"])
    o.add_argument("--emit", default="json", choices=["json", "pgm"])
    o.add_argument("--out")
    o.set_defaults(func=cmd_order)

    r = sub.add_parser("run", help="run the reduction pipeline and write a JSON report")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    r.add_argument("--method", choices=list(config.METHODS))
    r.add_argument("--image", help="binary PPM/PGM input")
    r.add_argument("--grid", help="synthetic token grid, e.g. 14x14")
    r.add_argument("--batch", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--depth", type=int)
    r.add_argument("--dim", type=int)
    r.add_argument("--heads", type=int)
    r.add_argument("--order", choices=["hilbert", "row", "boustro", "z"])
    r.add_argument("--r", type=int, help="MAT merges per layer")
    r.add_argument("--keep-ratio", dest="keep_ratio", type=float)
    r.add_argument("--render", metavar="DIR", help="write one fate map PGM per reduction layer")
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("flops", help="analytic FLOPs for a model and token schedule")
    f.add_argument("--model", default="deit-s")
    f.add_argument("--schedule", help="comma-separated per-layer token counts, or a file of them")
    f.add_argument("--method", choices=["none", "nap", "mat", "hynap"], default="none")
    f.add_argument("--keep-ratio", dest="keep_ratio", type=float, default=0.7)
    f.add_argument("--layers", default="3,6,9")
    f.add_argument("--r", type=int, default=8)
    f.add_argument("--hynap", default="6:6", help="PRUNE:MERGE for every layer, or one per layer")
    f.add_argument("--out")
    f.set_defaults(func=cmd_flops)

    a = sub.add_parser("ablate", help="compare curve orderings")
    a.add_argument("--rows", type=int)
    a.add_argument("--cols", type=int)
    a.add_argument("--corpus", help="directory of PPM/PGM images")
    a.add_argument("--patch", type=int, default=16)
    a.add_argument("--dim", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time reduction kernels")
    b.add_argument("--sizes", default="256,512,1024,2048,4096,8192")
    b.add_argument("--dim", type=int, default=64)
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--backend", default=kernels.BACKEND, help="numba, numpy or both")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, OSError) as exc:
        print(f"napmat: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ShapeError, ValueError) as exc:
        print(f"napmat: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
