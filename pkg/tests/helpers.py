"""Shared test oracles, independent of the library's solution paths."""
from __future__ import annotations

import numpy as np


def dykstra_projection(point, halfspaces, balls, iters=20000, tol=1e-13):
    """Projection of `point` onto the intersection of half-spaces
    {a.u >= b} (a unit-norm) and balls {||u - q|| <= R} by Dykstra's
    alternating projections. Slow, provably convergent reference."""
    sets = []
    for a, b in halfspaces:
        a = np.asarray(a, dtype=np.float64)
        na = np.linalg.norm(a)
        sets.append(("h", a / na, b / na))
    for q, R in balls:
        sets.append(("b", np.asarray(q, dtype=np.float64), float(R)))
    u = np.asarray(point, dtype=np.float64).copy()
    corrections = [np.zeros(3) for _ in sets]
    for it in range(iters):
        u_prev = u.copy()
        for k, s in enumerate(sets):
            y = u + corrections[k]
            if s[0] == "h":
                _, a, b = s
                viol = b - a @ y
                proj = y + max(0.0, viol) * a
            else:
                _, q, R = s
                d = y - q
                nd = np.linalg.norm(d)
                proj = q + d * (R / nd) if nd > R else y
            corrections[k] = y - proj
            u = proj
        if it > 10 and np.linalg.norm(u - u_prev) < tol:
            break
    return u


def grid_refine_projection(point, halfspaces, balls, center, width, levels=14, n=21):
    """Brute-force dense-grid search for the projection, successively zoomed.
    Conservative shrink (3 cells per level) so a boundary optimum stays inside
    the refined box. Coarse cross-check of other oracles."""
    point = np.asarray(point, dtype=np.float64)
    best = None
    best_val = np.inf
    c = np.asarray(center, dtype=np.float64)
    w = float(width)
    for _ in range(levels):
        axes = [np.linspace(c[i] - w, c[i] + w, n) for i in range(3)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        feas = np.ones(len(pts), dtype=bool)
        for a, b in halfspaces:
            feas &= pts @ np.asarray(a) >= b - 1e-12
        for q, R in balls:
            feas &= np.linalg.norm(pts - np.asarray(q), axis=1) <= R + 1e-12
        if feas.any():
            cand = pts[feas]
            d = np.linalg.norm(cand - point, axis=1)
            k = int(np.argmin(d))
            if d[k] < best_val:
                best_val = float(d[k])
                best = cand[k]
                c = cand[k]
        w *= 3.0 / (n - 1) * 2.0  # keep +-3 cells around the incumbent
    return best


def enumeration_projection(point, halfspaces, ball):
    """Exact projection onto {a.u >= b} intersect one ball by enumerating
    candidate active subsets (closed-form equality solves, feasibility filter,
    nearest wins). Independent of any iterative solver."""
    from itertools import combinations

    point = np.asarray(point, dtype=np.float64)
    q, R = np.asarray(ball[0], dtype=np.float64), float(ball[1])
    m = len(halfspaces)
    A = np.array([np.asarray(a, dtype=np.float64) for a, _ in halfspaces]).reshape(m, 3)
    b = np.array([float(bb) for _, bb in halfspaces])

    def affine_project(x, idx):
        """Min-norm-correction projection of x onto {A[idx] u = b[idx]}."""
        if not idx:
            return x.copy()
        Ai = A[list(idx)]
        bi = b[list(idx)]
        lam, *_ = np.linalg.lstsq(Ai @ Ai.T, bi - Ai @ x, rcond=None)
        u = x + Ai.T @ lam
        if np.abs(Ai @ u - bi).max() > 1e-8 * (1 + np.abs(bi).max()):
            return None  # inconsistent equalities
        return u

    candidates = [point.copy()]
    subsets = [()]
    for k in (1, 2, 3):
        subsets.extend(combinations(range(m), k))
    for idx in subsets:
        u = affine_project(point, idx)
        if u is not None:
            candidates.append(u)
        # same equalities plus the sphere boundary
        qa = affine_project(q, idx)
        ua = affine_project(point, idx)
        if qa is None or ua is None:
            continue
        rad2 = R * R - float((qa - q) @ (qa - q))
        if rad2 < -1e-12:
            continue
        rad = np.sqrt(max(rad2, 0.0))
        d = ua - qa
        nd = np.linalg.norm(d)
        if nd < 1e-12:
            continue
        candidates.append(qa + rad * d / nd)
        candidates.append(qa - rad * d / nd)

    scale = 1.0 + np.abs(b).max(initial=0.0) + R
    best, best_d = None, np.inf
    for u in candidates:
        if m and (A @ u - b).min() < -1e-9 * scale:
            continue
        if np.linalg.norm(u - q) > R * (1 + 1e-9) + 1e-12:
            continue
        d = np.linalg.norm(u - point)
        if d < best_d:
            best, best_d = u, d
    return best


def random_spd(rng, scale_lo=0.1, scale_hi=10.0):
    """Random SPD matrix A = R diag(1/s^2) R^T from a random rotation and
    axis scales, mirroring how splat inverse covariances arise."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    s = rng.uniform(scale_lo, scale_hi, size=3)
    A = R @ np.diag(1.0 / s**2) @ R.T
    return 0.5 * (A + A.T), s, R


def finite_difference_gradient(f, x, step=1e-6):
    """Central finite-difference gradient of scalar f at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def finite_difference_jacobian(f, x, step=1e-6):
    """Central finite-difference Jacobian of vector f at x: J[i, j] = df_i/dx_j."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        J[:, j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * step)
    return J
