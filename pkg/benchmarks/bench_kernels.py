"""Time the compiled kernels against the pure-Python fallback.

Both backends run the same public operations on the same inputs; the
kernel table in ``suturegrasp.kernels`` is swapped between runs, and the
outputs are compared so a speedup never hides a disagreement.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--seed 0]
"""
import argparse
import contextlib
import time

import numpy as np

from suturegrasp import kernels
from suturegrasp.masks import TipSeed, extract_centerline, locate_tip, preprocess_mask
from suturegrasp.sequence import SearchParams, out_of_zone_count, trace_sequence, tune_parameters
from suturegrasp.shape import dijkstra
from suturegrasp.synthetic import SceneSpec, generate_scene

KERNELS = ("zhang_suen", "out_of_zone", "trace", "trace_rim", "dijkstra")


@contextlib.contextmanager
def use_backend(mod):
    saved = {k: getattr(kernels, k) for k in KERNELS}
    for k in KERNELS:
        setattr(kernels, k, getattr(mod, k))
    try:
        yield
    finally:
        for k, f in saved.items():
            setattr(kernels, k, f)


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def build_cases(seed):
    spec = SceneSpec(rng_seed=seed, curve_kind="self-intersecting", noise=0.005)
    mask, _, gt = generate_scene(spec)
    zone = preprocess_mask(mask)
    sk = extract_centerline(zone)
    tip = locate_tip(sk, TipSeed(tuple(float(x) for x in gt.trace_l.points[0]), 6.0))

    rng = np.random.default_rng(seed)
    pts = sorted(sk.pixels)
    pairs = [(pts[i], pts[j]) for i, j in rng.integers(0, len(pts), (2000, 2))]
    n = 200
    W = rng.uniform(0.0, 100.0, (n, n))
    W[rng.random((n, n)) < 0.3] = np.inf
    np.fill_diagonal(W, np.inf)

    return {
        "thinning 640x480": lambda: extract_centerline(zone).pixels,
        "out_of_zone x2000": lambda: [out_of_zone_count(a, b, zone) for a, b in pairs if a != b],
        "trace (rim)": lambda: trace_sequence(sk, zone, tip, SearchParams()).points,
        "trace (pixel)": lambda: trace_sequence(sk, zone, tip, SearchParams(mode="pixel")).points,
        "tune 5x5x5": lambda: tune_parameters(sk, zone, tip, SearchParams())[1].points,
        "dijkstra n=200": lambda: dijkstra(W, 0, n - 1),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; run: python3 setup.py build_ext --inplace")
    cases = build_cases(args.seed)
    names = list(backends)
    print(f"{'operation':<20}" + "".join(f"{n:>12}" for n in names) + f"{'speedup':>10}  same")
    for label, fn in cases.items():
        times, outs = {}, {}
        for name in names:
            with use_backend(backends[name]):
                times[name], outs[name] = best_of(fn, args.repeat)
        same = all(outs[n] == outs[names[0]] for n in names[1:])
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        cells = "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        print(f"{label:<20}{cells}{speed:9.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
