"""Kernel benchmark: compiled core vs pure numpy fallback.

Shapes mirror the decoder's actual attention sizes (16 queries, 80 hybrid
keys, 256 scene tokens, model width 64), so the reported speedups are the
ones the training loop sees.
"""
from __future__ import annotations

import importlib
import time

import numpy as np

from bevrope import rng
from bevrope.kernels import pure


def _backends():
    backends = {"pure": pure}
    try:
        backends["compiled"] = importlib.import_module("bevrope.kernels._core")
    except ImportError:
        pass
    return backends


def _cases():
    gen = rng.stream(31, rng.CHECK, "bench")
    sm_small = gen.standard_normal((64, 80))
    sm_big = gen.standard_normal((64, 256))
    ln_x = gen.standard_normal((272, 64))
    gain = np.ones(64)
    bias = np.zeros(64)
    rot_x = gen.standard_normal((256, 64))
    rot_c = np.cos(gen.standard_normal((256, 32)))
    rot_s = np.sin(gen.standard_normal((256, 32)))
    ff = gen.standard_normal((16, 128))
    cells = gen.uniform(-50, 50, (256, 2))
    objs = gen.uniform(-25, 25, (4, 2))
    return [
        ("softmax_rows (64x80)", "softmax_rows", (sm_small,)),
        ("softmax_rows (64x256)", "softmax_rows", (sm_big,)),
        ("layer_norm (272x64)", "layer_norm", (ln_x, gain, bias, 1e-5)),
        ("rotate_pairs (256x64)", "rotate_pairs", (rot_x, rot_c, rot_s)),
        ("gelu (16x128)", "gelu", (ff,)),
        ("raster_gauss (256 cells)", "raster_gauss", (cells, objs, 6.25)),
    ]


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def run_benchmark(repeats: int = 200) -> list[str]:
    backends = _backends()
    lines = [f"kernel benchmark ({', '.join(backends)}); best of 5 x {repeats}"]
    header = f"{'kernel':28s}" + "".join(f"{name:>14s}" for name in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10s}"
    lines.append(header)
    for label, fname, args in _cases():
        times = {name: _time(getattr(mod, fname), args, repeats)
                 for name, mod in backends.items()}
        row = f"{label:28s}" + "".join(f"{times[n] * 1e6:12.2f}us" for n in times)
        if "compiled" in times and "pure" in times:
            row += f"{times['pure'] / times['compiled']:9.2f}x"
        lines.append(row)
    if "compiled" not in backends:
        lines.append("compiled backend not built; showing pure numpy only")
    return lines
