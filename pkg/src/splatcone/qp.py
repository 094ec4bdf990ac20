"""Minimally-invasive control filter solve.

The per-step program projects a reference acceleration onto the intersection
of barrier half-spaces and norm balls:

    min ||u - u_ref||^2
    s.t. a_i^T u >= b_i                 (one row per active splat)
         ||u|| <= a_max                 (acceleration bound)
         ||v + dt u|| <= v_max          (optional velocity bound, a ball in u)

Half-spaces are handled by a dual active-set projection (no feasible start
needed, detects infeasibility); each ball enters through a scalar multiplier
nu >= 0 found by root-finding on the complementarity condition, exploiting
that ||u*(nu) - center|| is monotone in nu. With slack enabled the rows turn
into quadratic penalties and the same ball machinery wraps a piecewise
Newton solve.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constraints import LinearControlConstraint


class SolverError(RuntimeError):
    """Solver failed to converge; carries residual diagnostics."""

    def __init__(self, msg: str, residuals: dict | None = None):
        super().__init__(msg)
        self.residuals = residuals or {}


_ZERO_NORMAL = 1e-30
_FEAS_TOL = 1e-9


@dataclass
class FilterProblem:
    """One filter step's convex program, stored row-wise for speed."""

    reference: np.ndarray
    a_max: float
    normals: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    splat_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    h_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_current: np.ndarray | None = None
    v_max: float | None = None
    dt: float | None = None
    slack_weight: float | None = None

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.float64)
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        m = self.normals.shape[0]
        if self.splat_ids.shape[0] != m:
            self.splat_ids = np.full(m, -1, dtype=np.intp)
        if self.h_values.shape[0] != m:
            self.h_values = np.full(m, np.nan)

    @classmethod
    def from_constraints(
        cls,
        reference: np.ndarray,
        constraints: list[LinearControlConstraint],
        a_max: float,
        **kwargs,
    ) -> "FilterProblem":
        m = len(constraints)
        normals = np.zeros((m, 3))
        offsets = np.zeros(m)
        ids = np.full(m, -1, dtype=np.intp)
        hs = np.full(m, np.nan)
        for i, c in enumerate(constraints):
            normals[i] = c.normal
            offsets[i] = c.offset
            ids[i] = c.splat_id
            hs[i] = c.h_value
        return cls(reference=reference, a_max=a_max, normals=normals,
                   offsets=offsets, splat_ids=ids, h_values=hs, **kwargs)

    @property
    def constraints(self) -> list[LinearControlConstraint]:
        return [
            LinearControlConstraint(normal=self.normals[i], offset=float(self.offsets[i]),
                                    splat_id=int(self.splat_ids[i]), h_value=float(self.h_values[i]))
            for i in range(self.normals.shape[0])
        ]


@dataclass
class FilterSolution:
    u: np.ndarray | None
    status: str                      # optimal | infeasible | degraded
    active_ids: np.ndarray
    slack_used: float
    solve_time: float
    kkt_residual: float


def _project_polyhedron(c: np.ndarray, N: np.ndarray, b: np.ndarray, max_iter: int = 200):
    """min ||u - c||^2 / 2 s.t. N u >= b, rows of N unit-norm.

    Dual active-set iteration starting from the unconstrained optimum.
    Returns (u, lam, feasible); lam is None when infeasible.
    """
    m = N.shape[0]
    u = c.copy()
    if m == 0:
        return u, np.zeros(0), True
    W: list[int] = []
    lamW: list[float] = []
    scale = 1.0 + float(np.abs(b).max()) + float(np.linalg.norm(c))
    ftol = 1e-12 * scale
    step_cap = 1e9 * scale  # longer steps mean numerically unreachable constraints

    for _ in range(max_iter):
        s = N @ u - b
        for j in W:
            s[j] = 0.0
        p = int(np.argmin(s))
        sp = float(s[p])
        if sp >= -ftol:
            lam = np.zeros(m)
            lam[W] = lamW
            return u, lam, True
        npv = N[p]
        lam_p = 0.0
        while True:
            if W:
                Nw = N[W]
                M = Nw @ Nw.T
                rhs = Nw @ npv
                try:
                    rr = np.linalg.solve(M, rhs)
                except np.linalg.LinAlgError:
                    rr = np.linalg.lstsq(M, rhs, rcond=None)[0]
                z = npv - Nw.T @ rr
            else:
                rr = np.zeros(0)
                z = npv.copy()
            zz = float(z @ z)
            # rows are unit norm, so zz is the squared independent component;
            # near-dependence gets the dual-only branch to avoid huge steps
            if zz > 1e-12 and -sp / zz <= step_cap:
                t_full = -sp / zz
                t_block = np.inf
                j_block = -1
                for j, rj in enumerate(rr):
                    if rj > 1e-14 and lamW[j] / rj < t_block:
                        t_block = lamW[j] / rj
                        j_block = j
                t = min(t_full, t_block)
                u += t * z
                for j in range(len(W)):
                    lamW[j] -= t * rr[j]
                lam_p += t
                if t_full <= t_block:
                    W.append(p)
                    lamW.append(lam_p)
                    break
                sp += t * zz
                del W[j_block], lamW[j_block]
            else:
                # new normal is dependent on the working set
                t_block = np.inf
                j_block = -1
                for j, rj in enumerate(rr):
                    if rj > 1e-14 and lamW[j] / rj < t_block:
                        t_block = lamW[j] / rj
                        j_block = j
                if j_block < 0:
                    return u, None, False  # constraint p can never be reached
                for j in range(len(W)):
                    lamW[j] -= t_block * rr[j]
                lam_p += t_block
                del W[j_block], lamW[j_block]
    raise SolverError("active-set projection hit iteration cap",
                      {"min_violation": float((N @ u - b).min())})


def _project_with_balls(ubar, N, b, balls, sweeps: int = 60):
    """Projection onto {N u >= b} intersect balls. Returns (u, lam, nus, status)."""
    u, lam, feas = _project_polyhedron(ubar, N, b)
    if not feas:
        return None, None, None, "infeasible"
    nus = np.zeros(len(balls))
    if all(np.linalg.norm(u - q) <= R * (1 + _FEAS_TOL) for q, R in balls):
        return u, lam, nus, "optimal"

    centers = [np.asarray(q, dtype=np.float64) for q, _ in balls]
    radii = [float(R) for _, R in balls]

    def solve_at(nu_vec):
        sigma = 1.0 + nu_vec.sum()
        target = ubar.copy()
        for nu, q in zip(nu_vec, centers):
            target = target + nu * q
        return _project_polyhedron(target / sigma, N, b)

    u_cur = u
    lam_cur = lam
    for _ in range(sweeps):
        moved = 0.0
        for k in range(len(balls)):
            qk, Rk = centers[k], radii[k]

            def g(nu_k):
                trial = nus.copy()
                trial[k] = nu_k
                uu, _, _ = solve_at(trial)
                return float(np.linalg.norm(uu - qk)) - Rk

            old = nus[k]
            if g(0.0) <= 0.0:
                new = 0.0
            else:
                hi = max(1.0, 2.0 * old)
                while g(hi) > 0.0:
                    hi *= 4.0
                    if hi > 1e13:
                        u_lim, _, _ = _project_polyhedron(qk.copy(), N, b)
                        if np.linalg.norm(u_lim - qk) > Rk + 1e-8:
                            return None, None, None, "infeasible"
                        break
                if hi > 1e13:
                    new = hi
                else:
                    new = brentq(g, 0.0, hi, xtol=1e-14, maxiter=200)
            moved = max(moved, abs(new - old))
            nus[k] = new
        u_cur, lam_cur, _ = solve_at(nus)
        ok = all(np.linalg.norm(u_cur - q) <= R * (1 + _FEAS_TOL) + 1e-12
                 for q, R in zip(centers, radii))
        if ok and moved <= 1e-12:
            break
    else:
        viol = max(np.linalg.norm(u_cur - q) - R for q, R in zip(centers, radii))
        if viol > 1e-7 * max(1.0, max(radii)):
            raise SolverError("ball multiplier sweep did not converge",
                              {"ball_violation": float(viol)})
    lam_scaled = lam_cur * (1.0 + nus.sum()) if lam_cur is not None else None
    return u_cur, lam_scaled, nus, "optimal"


def _slack_objective_grad(u, ubar, N, b, sw, nus, centers):
    xi = b - N @ u
    act = xi > 0.0
    grad = 2.0 * (u - ubar)
    if act.any():
        grad = grad - 2.0 * sw * (N[act].T @ xi[act])
    for nu, q in zip(nus, centers):
        grad = grad + 2.0 * nu * (u - q)
    return grad, xi, act


def _solve_slack_at(ubar, N, b, sw, nus, centers, max_iter: int = 100):
    """Piecewise-Newton minimization of the slack-penalized objective for
    fixed ball multipliers. The objective is smooth (C1) convex piecewise
    quadratic, so Newton on the active piece with an Armijo backtrack
    converges globally."""
    u = ubar.copy()
    scale = 1.0 + float(np.linalg.norm(ubar))
    for _ in range(max_iter):
        grad, xi, act = _slack_objective_grad(u, ubar, N, b, sw, nus, centers)
        gn = float(np.linalg.norm(grad))
        if gn <= 1e-11 * scale:
            return u
        H = 2.0 * (1.0 + sum(nus)) * np.eye(3)
        if act.any():
            Na = N[act]
            H = H + 2.0 * sw * (Na.T @ Na)
        d = np.linalg.solve(H, -grad)

        def f(x):
            val = float((x - ubar) @ (x - ubar))
            r = b - N @ x
            r = r[r > 0.0]
            val += sw * float(r @ r)
            for nu, q in zip(nus, centers):
                val += nu * float((x - q) @ (x - q))
            return val

        f0 = f(u)
        t = 1.0
        while f(u + t * d) > f0 + 1e-4 * t * float(grad @ d) and t > 1e-12:
            t *= 0.5
        u = u + t * d
    return u


def _solve_slack(ubar, N, b, sw, balls, sweeps: int = 60):
    centers = [np.asarray(q, dtype=np.float64) for q, _ in balls]
    radii = [float(R) for _, R in balls]
    nus = np.zeros(len(balls))
    u = _solve_slack_at(ubar, N, b, sw, nus, centers)
    for _ in range(sweeps):
        moved = 0.0
        for k in range(len(balls)):
            qk, Rk = centers[k], radii[k]

            def g(nu_k):
                trial = nus.copy()
                trial[k] = nu_k
                return float(np.linalg.norm(_solve_slack_at(ubar, N, b, sw, trial, centers) - qk)) - Rk

            old = nus[k]
            if g(0.0) <= 0.0:
                new = 0.0
            else:
                hi = max(1.0, 2.0 * old)
                while g(hi) > 0.0 and hi <= 1e13:
                    hi *= 4.0
                if hi > 1e13:
                    new = hi  # balls always contain a point: cannot happen for sane inputs
                else:
                    new = brentq(g, 0.0, hi, xtol=1e-14, maxiter=200)
            moved = max(moved, abs(new - old))
            nus[k] = new
        u = _solve_slack_at(ubar, N, b, sw, nus, centers)
        ok = all(np.linalg.norm(u - q) <= R * (1 + _FEAS_TOL) + 1e-12
                 for q, R in zip(centers, radii))
        if ok and moved <= 1e-12:
            break
    return u, nus


def solve_filter(problem: FilterProblem) -> FilterSolution:
    """Solve the per-step program. Hard constraints by default; with
    `slack_weight` set, rows relax to a_i^T u >= b_i - xi_i with quadratic
    slack penalties and status 'degraded' whenever slack is actually used."""
    t0 = time.perf_counter()
    ubar = np.asarray(problem.reference, dtype=np.float64)

    norms = np.linalg.norm(problem.normals, axis=1) if problem.normals.size else np.zeros(0)
    zero = norms <= _ZERO_NORMAL
    if np.any(zero & (problem.offsets > 1e-12)):
        # vacuous row demanding 0 >= positive: nothing to optimize
        return FilterSolution(u=None, status="infeasible", active_ids=np.zeros(0, dtype=np.intp),
                              slack_used=0.0, solve_time=time.perf_counter() - t0,
                              kkt_residual=np.nan)
    keep = ~zero
    N = problem.normals[keep] / norms[keep, None] if keep.any() else np.zeros((0, 3))
    b = problem.offsets[keep] / norms[keep] if keep.any() else np.zeros(0)
    ids = problem.splat_ids[keep]

    balls = [(np.zeros(3), float(problem.a_max))]
    if problem.v_max is not None and problem.v_current is not None and problem.dt:
        balls.append((-np.asarray(problem.v_current, dtype=np.float64) / problem.dt,
                      float(problem.v_max) / problem.dt))

    if problem.slack_weight is not None:
        u, nus = _solve_slack(ubar, N, b, float(problem.slack_weight), balls)
        xi = np.maximum(0.0, b - N @ u) if N.size else np.zeros(0)
        grad, _, _ = _slack_objective_grad(u, ubar, N, b, float(problem.slack_weight),
                                           nus, [q for q, _ in balls])
        slack_used = float(xi.max()) if xi.size else 0.0
        status = "degraded" if slack_used > 1e-8 else "optimal"
        active = ids[xi > 1e-8] if xi.size else np.zeros(0, dtype=np.intp)
        return FilterSolution(u=u, status=status, active_ids=np.asarray(active),
                              slack_used=slack_used, solve_time=time.perf_counter() - t0,
                              kkt_residual=float(np.linalg.norm(grad)) / 2.0)

    u, lam, nus, status = _project_with_balls(ubar, N, b, balls)
    if status == "infeasible":
        return FilterSolution(u=None, status="infeasible", active_ids=np.zeros(0, dtype=np.intp),
                              slack_used=0.0, solve_time=time.perf_counter() - t0,
                              kkt_residual=np.nan)
    # stationarity: (u - ubar) + sum nu_k (u - q_k) - N^T lam = 0
    g = u - ubar
    for nu, (q, _) in zip(nus, balls):
        g = g + nu * (u - q)
    if lam.size:
        g = g - N.T @ lam
    kkt = float(np.linalg.norm(g))
    tight = (np.abs(N @ u - b) <= 1e-7 * (1.0 + np.abs(b))) | (lam > 1e-12) if N.size else np.zeros(0, dtype=bool)
    active = np.asarray(ids[tight]) if N.size else np.zeros(0, dtype=np.intp)
    return FilterSolution(u=u, status="optimal", active_ids=active, slack_used=0.0,
                          solve_time=time.perf_counter() - t0, kkt_residual=kkt)
