"""Benchmark the compiled rasterizer kernels against the numpy fallback.

Run as `python3 -m splatpipe.bench`. Both backends implement the same
forward/backward tile kernels; this script times them on identical random
scenes and reports the speedup plus the maximum numerical deviation.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from .cameras import build_camera_rig
from .core import Scene
from .raster import _kernels_py
from .raster.projection import project_scene
from .raster.tiles import bin_splats

try:
    from .raster import _kernels_cy
except ImportError:
    _kernels_cy = None


def random_scene(n: int, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    sh = np.zeros((n, 3, 1))
    sh[:, :, 0] = rng.normal(scale=0.5, size=(n, 3))
    return Scene(
        positions=rng.uniform(-1.0, 1.0, (n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=rng.uniform(-3.5, -1.5, (n, 3)),
        opacity_logits=rng.normal(size=n),
        sh=sh,
        sh_degree=0,
    )


def _prepared_inputs(n_splats: int, image_size: int, seed: int):
    scene = random_scene(n_splats, seed)
    camera = build_camera_rig(1, [15.0], 2.5, 49.0, (image_size, image_size)).cameras[0]
    state = project_scene(scene, camera)
    binning = bin_splats(
        state.mean2d, state.radius, state.depth, state.idx, camera.width, camera.height
    )
    colors = np.clip(
        0.28209479177387814 * scene.sh[state.idx, :, 0] + 0.5, 0.0, None
    )
    background = np.ones(3)
    return state, binning, colors, background, camera


def _run_forward(kernels, state, binning, colors, background, camera):
    return kernels.forward(
        camera.height,
        camera.width,
        binning.tiles_x,
        binning.tiles_y,
        binning.tile_ranges,
        binning.point_list,
        state.mean2d,
        state.conic,
        colors,
        state.alpha,
        background,
    )


def _time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_benchmark(n_splats: int = 5000, image_size: int = 256, repeats: int = 3, seed: int = 0):
    if _kernels_cy is None:
        raise RuntimeError("compiled kernels unavailable; build the extension first")
    inputs = _prepared_inputs(n_splats, image_size, seed)
    state, binning, colors, background, camera = inputs

    img_py = _run_forward(_kernels_py, *inputs)
    img_cy = _run_forward(_kernels_cy, *inputs)
    deviation = float(np.abs(img_py[0] - img_cy[0]).max())

    t_py = _time(lambda: _run_forward(_kernels_py, *inputs), repeats)
    t_cy = _time(lambda: _run_forward(_kernels_cy, *inputs), repeats)
    return {
        "n_splats": n_splats,
        "image_size": image_size,
        "python_s": t_py,
        "cython_s": t_cy,
        "speedup": t_py / t_cy,
        "max_deviation": deviation,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--splats", type=int, default=5000)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    result = run_benchmark(args.splats, args.size, args.repeats, args.seed)
    print(
        f"forward pass, {result['n_splats']} splats @ {result['image_size']}^2:\n"
        f"  numpy fallback : {result['python_s'] * 1e3:8.2f} ms\n"
        f"  cython kernels : {result['cython_s'] * 1e3:8.2f} ms\n"
        f"  speedup        : {result['speedup']:8.2f}x\n"
        f"  max |delta|    : {result['max_deviation']:.3e}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
