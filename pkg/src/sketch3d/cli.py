"""Command line surface: gen-data, train, eval, infer, serve, bench, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run prints its
resolved configuration before doing work.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

__all__ = ["main", "build_parser"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1, not 2."""

    def error(self, message):
        raise UsageError(message)


def _csv_ints(text: str):
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser() -> _Parser:
    p = _Parser(prog="sketch3d",
                description="Single free-hand sketch to 3D mesh, desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[], help="generate a synthetic dataset",
                       add_help=True)
    g.add_argument("--out", required=True)
    g.add_argument("--categories", type=int, default=3,
                   help="number of procedural families to use")
    g.add_argument("--per-category", type=int, default=10)
    g.add_argument("--resolution", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a generator on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--decay-interval", type=int, default=None,
                   help="steps between lr x0.3 decays (default 40%% of steps)")
    t.add_argument("--no-sd", action="store_true", help="disable the shape discriminator")
    t.add_argument("--no-sem", action="store_true", help="disable stroke enhancement")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--precision", choices=("float32", "float64"), default="float32")
    t.add_argument("--sigma", type=float, default=1e-4)
    t.add_argument("--resolutions", type=_csv_ints, default=None,
                   help="multiscale silhouette resolutions, e.g. 64,128,256")
    t.add_argument("--lambda-sd", type=float, default=0.1)
    t.add_argument("--lambda-flatten", type=float, default=5e-4)
    t.add_argument("--lambda-laplacian", type=float, default=5e-3)
    t.add_argument("--n-views", type=int, default=2)
    t.add_argument("--log-every", type=int, default=10)
    t.add_argument("--checkpoint-every", type=int, default=None)
    t.add_argument("--category", default=None,
                   help="train on a single category (one checkpoint per class)")
    t.add_argument("--toy", action="store_true",
                   help="small-network CPU preset (64px input, subdiv-2 template)")

    e = sub.add_parser("eval", help="voxel IoU / Chamfer metrics on a split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--voxel-resolution", type=int, default=32)
    e.add_argument("--chamfer-samples", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default=None, help="optional metrics JSON path")

    i = sub.add_parser("infer", help="sketch image to OBJ mesh")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--sketch", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--pose", default=None, help="az,el,dist (accepted, canonical output)")

    s = sub.add_parser("serve", help="HTTP inference service")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int,
                   default=int(os.environ.get("SKETCH3D_PORT", "8008")))
    s.add_argument("--static", default=None, help="optional studio static dir to mount")
    s.add_argument("--max-concurrency", type=int, default=4)

    b = sub.add_parser("bench", help="inference latency / rasterizer backends")
    b.add_argument("--ckpt", default=None, help="checkpoint (default: fresh toy model)")
    b.add_argument("--iters", type=int, default=50)
    b.add_argument("--sketch", default=None, help="PNG to time (default: synthetic ring)")
    b.add_argument("--rasterizer", action="store_true",
                   help="also compare compiled vs numpy rasterizer backends")
    b.add_argument("--out", default=None, help="optional report JSON path")

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    c.add_argument("--skip-end-to-end", action="store_true")
    return p


def _print_config(command: str, cfg: dict):
    print(json.dumps({"command": command, "config": cfg}, indent=2, sort_keys=True))


def _cmd_gen_data(args) -> int:
    from .pipeline import generate_synthetic_dataset
    _print_config("gen-data", {k: getattr(args, k) for k in
                               ("out", "categories", "per_category", "resolution", "seed")})
    manifest = generate_synthetic_dataset(args.out, args.categories,
                                          args.per_category, args.resolution, args.seed)
    print(f"wrote {len(manifest.entries)} entries under {manifest.root}")
    return 0


def _train_config(args):
    from .pipeline import TrainConfig, toy_train_config
    from .losses import LossWeights
    resolutions = args.resolutions
    kwargs = dict(
        steps=args.steps, batch_size=args.batch_size, learning_rate=args.lr,
        decay_interval=args.decay_interval, use_sd=not args.no_sd,
        use_sem=not args.no_sem, seed=args.seed, precision=args.precision,
        sigma=args.sigma, n_views=args.n_views, log_every=args.log_every,
        checkpoint_every=args.checkpoint_every,
    )
    if resolutions:
        kwargs["multiscale_resolutions"] = resolutions
    kwargs["weights"] = LossWeights(
        lambda_scales=tuple([1.0 / len(resolutions)] * len(resolutions))
        if resolutions else (1 / 3, 1 / 3, 1 / 3),
        lambda_sd=args.lambda_sd, lambda_flatten=args.lambda_flatten,
        lambda_laplacian=args.lambda_laplacian)
    return toy_train_config(**kwargs) if args.toy else TrainConfig(**kwargs)


def _cmd_train(args) -> int:
    from .pipeline import load_manifest, train
    config = _train_config(args)
    _print_config("train", {"data": args.data, "out": args.out,
                            "category": args.category, **config.to_dict()})
    manifest = load_manifest(args.data)
    if args.category:
        manifest = manifest.filter_categories(args.category)
    ckpt = train(config, manifest, args.out)
    print(f"checkpoint written to {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    from .pipeline import evaluate, format_metrics_table, load_generator, save_metrics
    _print_config("eval", {k: getattr(args, k) for k in
                           ("ckpt", "data", "split", "voxel_resolution",
                            "chamfer_samples", "seed")})
    from .pipeline import load_manifest
    generator, ckpt_id, _ = load_generator(args.ckpt)
    manifest = load_manifest(args.data)
    table = evaluate(generator, manifest, split=args.split,
                     voxel_resolution=args.voxel_resolution,
                     chamfer_samples=args.chamfer_samples, seed=args.seed,
                     checkpoint_id=ckpt_id)
    print(format_metrics_table(table))
    if args.out:
        save_metrics(table, args.out)
        print(f"metrics JSON written to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    from .mesh import save_obj
    from .pipeline import load_generator, load_sketch_file
    from .pipeline.infer import infer
    from .render import CameraPose
    _print_config("infer", {"ckpt": args.ckpt, "sketch": args.sketch,
                            "out": args.out, "pose": args.pose})
    pose = None
    if args.pose:
        az, el, dist = (float(x) for x in args.pose.split(","))
        pose = CameraPose(az, el, dist)
    generator, ckpt_id, _ = load_generator(args.ckpt)
    sketch, meta = load_sketch_file(args.sketch, generator.config.input_size)
    if meta["inverted"]:
        print("note: input polarity looked inverted (mostly dark); auto-inverted")
    mesh = infer(generator, sketch, pose)
    save_obj(mesh, args.out)
    print(f"mesh with {mesh.n_vertices} vertices / {mesh.n_faces} faces "
          f"written to {args.out} (checkpoint {ckpt_id})")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    from .pipeline import load_generator
    from .server import create_app
    _print_config("serve", {"ckpt": args.ckpt, "host": args.host, "port": args.port,
                            "static": args.static,
                            "max_concurrency": args.max_concurrency})
    generator, ckpt_id, _ = load_generator(args.ckpt)
    app = create_app(generator, ckpt_id, static_dir=args.static,
                     max_concurrency=args.max_concurrency)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _synthetic_sketch_png(size: int) -> bytes:
    """Ring sketch for benchmarking without a dataset."""
    import io
    from PIL import Image
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(xx - size / 2, yy - size / 2)
    ring = np.abs(r - size * 0.3) < 1.0
    img = np.where(ring, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _cmd_bench(args) -> int:
    from .pipeline import benchmark_rasterizer, benchmark_runtime, load_generator
    _print_config("bench", {"ckpt": args.ckpt, "iters": args.iters,
                            "sketch": args.sketch, "rasterizer": args.rasterizer})
    report: dict = {}
    if args.ckpt:
        generator, _, _ = load_generator(args.ckpt)
    else:
        from .networks import Generator
        from .pipeline.train import toy_train_config
        generator = Generator(toy_train_config().generator_config(0))
    if args.sketch:
        png = Path(args.sketch).read_bytes()
    else:
        png = _synthetic_sketch_png(generator.config.input_size)
    report["inference"] = benchmark_runtime(generator, png, iters=args.iters)
    if args.rasterizer:
        report["rasterizer"] = benchmark_rasterizer()
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    from .verify import run_gradient_suite
    _print_config("gradcheck", {"skip_end_to_end": args.skip_end_to_end})
    results = run_gradient_suite(include_end_to_end=not args.skip_end_to_end)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    return 2 if failed else 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "serve": _cmd_serve,
    "bench": _cmd_bench,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:       # argparse --help path
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
