"""Timing comparison of the numba and numpy kernel backends.

Run:  python3 benchmarks/bench_kernels.py [n_splats] [repeats]

Times the three hot per-step kernels (cone rows, baseline rows, audit
margins) on a synthetic activation set, plus one end-to-end filter step on a
170k-splat scene. Numba timings exclude JIT compilation (warmup call first).
"""
import sys
import time

import numpy as np

from splatcone import kernels
from splatcone.filter import FilterConfig, filter_step
from splatcone.simulator import RobotState
from splatcone.synthetic import SyntheticSpec, make_synthetic_scene


def make_batch(rng, m):
    means = rng.normal(size=(m, 3)) * 8.0
    q = rng.normal(size=(m, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    from splatcone.scene import rotation_from_quat
    R = rotation_from_quat(q)
    s = rng.uniform(0.08, 0.3, size=(m, 3))
    inv_s = 1.0 / s
    L = inv_s[:, :, None] * np.swapaxes(R, 1, 2)
    inv_cov = np.einsum("nji,njk->nik", L, L)
    return means, np.ascontiguousarray(inv_cov), s.min(axis=1)


def timeit(fn, repeats):
    fn()  # warmup (includes JIT on first numba call)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    repeats = int(sys.argv[2]) if len(sys.argv) > 2 else 50
    rng = np.random.default_rng(0)
    means, inv_cov, s_min = make_batch(rng, m)
    p = np.zeros(3)
    v = np.array([1.0, 0.4, -0.2])
    c2eff = np.full(m, 11.345)
    pts = rng.normal(size=(256, 3)) * 8.0

    cases = {
        "cone_rows": lambda: kernels.cone_rows(p, v, means, inv_cov, c2eff, 1.0),
        "cone_rows_inflated": lambda: kernels.cone_rows_inflated(
            p, v, means, inv_cov, s_min, 3.368, 0.3, 1.0),
        "baseline_rows": lambda: kernels.baseline_rows(p, v, means, inv_cov, c2eff, 1.0, 1.0),
        "min_margin(256 pts)": lambda: kernels.min_margin(pts, means, inv_cov, c2eff),
    }

    print(f"batch kernels, m = {m} splats, best of {repeats}")
    print(f"{'kernel':24s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name, fn in cases.items():
        t = {}
        for backend in ("numba", "numpy"):
            kernels.set_backend(backend)
            t[backend] = timeit(fn, repeats)
        print(f"{name:24s} {t['numba']*1e6:10.1f}us {t['numpy']*1e6:10.1f}us "
              f"{t['numpy']/t['numba']:8.2f}x")

    print("\nend-to-end filter step, 170k-splat scene, ~2000 active")
    scene = make_synthetic_scene(
        SyntheticSpec(pattern="clutter", count=170000, extent=17.7,
                      scale_range=(0.05, 0.15), anisotropy_range=(1.0, 3.0)),
        seed=11)
    cfg = FilterConfig(p_k=8.0, activation_radius=5.0, a_max=10.0, v_max=2.5)
    state = RobotState(p=np.zeros(3), v=np.array([1.0, 0.5, 0.2]), t=0.0)
    u_ref = np.array([2.0, 0.0, 0.0])
    for backend in ("numba", "numpy"):
        kernels.set_backend(backend)
        for _ in range(3):
            filter_step(scene, state, u_ref, cfg)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            filter_step(scene, state, u_ref, cfg)
            times.append(time.perf_counter() - t0)
        med = float(np.median(times))
        print(f"{backend:8s} median {med*1e3:.3f} ms  ({1.0/med:.0f} Hz)")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
