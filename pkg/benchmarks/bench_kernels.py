"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--n 5 8 16] [--repeat 200]

Both twins are called on identical inputs; the script also checks that their
outputs agree before timing. The first numba call (compilation or cache load)
is excluded.
"""
import argparse
import time

import numpy as np

from anglerig import kernels as K
from anglerig._backend import HAVE_NUMBA
from anglerig.gradcheck import random_camera_state


def _inputs(n, d, seed=0):
    rng = np.random.default_rng(seed)
    p, R = random_camera_state(rng, n, d, side=25.0)
    mask = K.sensing_mask_np(p, R, 30.0, 0.5)
    T = K.triples_from_mask_np(mask)
    w = K.angle_weights_np(p, R, T, 24.0, 30.0, 0.5, 0.7)
    nu = rng.normal(size=(n, d))
    nu /= np.linalg.norm(nu)
    alpha = K.angle_values_np(p, T)
    ph = p + rng.normal(scale=0.5, size=p.shape)
    targets = p + rng.normal(scale=10.0, size=p.shape)
    th = rng.normal(scale=0.1, size=(n, d * (d - 1) // 2))
    edges = np.argwhere(mask).astype(np.int64)
    return {
        "angle_matrix": (p, T),
        "bearing_matrix": (p, R, edges),
        "weighted_gram": (p, T, w),
        "sensing_mask": (p, R, 30.0, 0.5),
        "angle_weights": (p, R, T, 24.0, 30.0, 0.5, 0.7),
        "rigidity_gradient": (p, R, T, nu, 24.0, 30.0, 0.5, 0.7),
        "localization_flow": (ph, T, alpha, 0, 1, float(np.linalg.norm(p[1] - p[0])), 1000.0, 0.05),
        "collision_flow": (p, mask, 30.0),
        "mission_flow": (p, R, targets, 6.0, 1.0, 20.0),
        "right_exp": (R, th),
    }


def _time(fn, args, repeat):
    fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[5, 8, 16])
    ap.add_argument("--d", type=int, default=3, choices=(2, 3))
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    print(f"{'kernel':20s} {'N':>4s} {'numba [us]':>11s} {'numpy [us]':>11s} {'speedup':>8s}")
    for n in args.n:
        for name, a in _inputs(n, args.d).items():
            fast = getattr(K, name + "_loop")
            slow = getattr(K, name + "_np")
            if not _same(fast(*a), slow(*a)):
                raise SystemExit(f"{name}: twins disagree for N={n}")
            tf = _time(fast, a, args.repeat) * 1e6
            ts = _time(slow, a, args.repeat) * 1e6
            print(f"{name:20s} {n:4d} {tf:11.1f} {ts:11.1f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
