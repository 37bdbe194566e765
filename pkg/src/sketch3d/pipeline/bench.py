"""Runtime benchmarks: end-to-end inference latency and a rasterizer backend
comparison (compiled kernel vs numpy fallback)."""

from __future__ import annotations

import platform
import time

import numpy as np

from .. import render
from ..mesh import make_icosphere
from ..networks import Generator
from .infer import decode_sketch_bytes

__all__ = ["benchmark_runtime", "benchmark_rasterizer", "PAPER_REFERENCE"]

# published reference latencies; measured on RTX 3090 / Xeon Gold 5218 class
# hardware with full-size networks, NOT comparable to this desk-scale build
PAPER_REFERENCE = {
    "gpu_inference_s": 0.011,
    "cpu_inference_s": 0.062,
    "note": "reference hardware and full-size networks; not comparable to "
            "this toy-scale CPU build",
}


def _hardware_notes() -> dict:
    cpu = platform.processor() or platform.machine()
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    cpu = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "cpu": cpu,
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rasterizer_backend": render.get_backend(),
    }


def benchmark_runtime(generator: Generator, sketch_png: bytes, iters: int = 50,
                      warmup: int = 5) -> dict:
    """Time decode-bytes -> mesh end to end, disk IO excluded."""
    if iters < 10:
        raise ValueError(f"iters must be >= 10, got {iters}")
    size = generator.config.input_size

    def once() -> float:
        t0 = time.perf_counter()
        sketch, _ = decode_sketch_bytes(sketch_png, size)
        generator.generate(sketch)
        return (time.perf_counter() - t0) * 1000.0

    for _ in range(warmup):
        once()
    times = np.array([once() for _ in range(iters)])
    return {
        "iters": iters,
        "warmup": warmup,
        "mean_ms": float(times.mean()),
        "p50_ms": float(np.percentile(times, 50)),
        "p95_ms": float(np.percentile(times, 95)),
        "min_ms": float(times.min()),
        "max_ms": float(times.max()),
        "hardware": _hardware_notes(),
        "paper_reference": PAPER_REFERENCE,
    }


def benchmark_rasterizer(resolution: int = 128, sigma: float = 1e-4,
                         iters: int = 20, subdivisions: int = 3) -> dict:
    """Forward+backward renders per second for each available backend."""
    mesh = make_icosphere(subdivisions).scaled(0.45)
    pose = render.CameraPose(30.0, 15.0, 2.0)
    cfg = render.RenderConfig(resolution=resolution, sigma=sigma)
    results = {}
    previous = render.get_backend()
    try:
        for backend in render.available_backends():
            render.set_backend(backend)
            # warmup
            sil = render.soft_rasterize(mesh, pose, cfg)
            t0 = time.perf_counter()
            for _ in range(iters):
                verts = mesh.vertex_tensor()
                verts.requires_grad = True
                sil = render.soft_rasterize(
                    type(mesh)(verts, mesh.faces), pose, cfg)
                loss = sil.values.sum()
                loss.backward()
            dt = time.perf_counter() - t0
            results[backend] = {
                "renders_per_s": iters / dt,
                "ms_per_render": dt / iters * 1000.0,
            }
    finally:
        render.set_backend(previous)
    if "compiled" in results and "numpy" in results:
        results["speedup_compiled_vs_numpy"] = (
            results["compiled"]["renders_per_s"] / results["numpy"]["renders_per_s"])
    results["config"] = {"resolution": resolution, "sigma": sigma,
                         "iters": iters, "faces": mesh.n_faces}
    return results
