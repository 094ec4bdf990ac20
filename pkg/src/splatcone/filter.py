"""Per-step cone safety filter over a splat scene.

Queries the splats near the robot, builds one barrier half-space per active
splat with the batch kernels, and solves the minimally-invasive program.
Splats whose (inflated) ellipsoid already contains the robot break the
barrier premise; policy is configurable: hard (report infeasible) or slack
(relax all rows quadratically and keep flying).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .qp import FilterProblem, FilterSolution, solve_filter
from .scene import Scene

DEFAULT_SLACK_WEIGHT = 1e4


@dataclass(frozen=True)
class FilterConfig:
    p_k: float = 1.0
    confidence: float | None = None      # c^2 override; None uses the scene's
    activation_radius: float = 5.0
    rho: float = 0.0
    inflation_mode: str = "conservative"  # conservative | exact
    a_max: float = 10.0
    v_max: float | None = None
    dt: float = 0.02
    slack_weight: float | None = None
    inside_policy: str = "hard"           # hard | slack
    baseline_alpha1: float | None = None  # distance baseline only; None -> p_k
    baseline_alpha2: float | None = None

    def resolved_c2(self, scene: Scene) -> float:
        return float(self.confidence) if self.confidence is not None else scene.confidence


def effective_c2(scene: Scene, cfg: FilterConfig, idx: np.ndarray) -> np.ndarray:
    """Per-splat squared confidence radius after conservative inflation."""
    c2 = cfg.resolved_c2(scene)
    if cfg.rho == 0.0:
        return np.full(idx.size, c2)
    c = np.sqrt(c2)
    return (c + cfg.rho / scene.s_min[idx]) ** 2


def filter_step(scene: Scene, state, u_ref: np.ndarray, cfg: FilterConfig,
                obstacle_velocities: np.ndarray | None = None):
    """One cone-filter step. Returns (FilterSolution, diagnostics).

    Diagnostics: min_h (+inf sentinel when no splat is active), per-splat h,
    active splat indices, constraint build time, and inside-splat ids.

    `obstacle_velocities` (n_scene, 3) switches the geometry to per-splat
    relative velocities for slowly moving obstacle means. The hook is typed
    and exercised only for plausibility; no moving-obstacle scenarios ship.
    """
    t0 = time.perf_counter()
    p = np.asarray(state.p, dtype=np.float64)
    v = np.asarray(state.v, dtype=np.float64)
    idx = scene.query_nearby(p, cfg.activation_radius)
    c2 = cfg.resolved_c2(scene)
    c = float(np.sqrt(c2))

    fallback_count = 0
    if idx.size and obstacle_velocities is not None:
        # slow path: per-splat relative velocity through the scalar builder
        from .cone import RelativeGeometry
        from .constraints import build_constraint

        normals = np.empty((idx.size, 3))
        offsets = np.empty(idx.size)
        h = np.empty(idx.size)
        eta = np.empty(idx.size)
        for j, i in enumerate(idx):
            v_rel = v - np.asarray(obstacle_velocities[i], dtype=np.float64)
            geom = RelativeGeometry(r=scene.means[i] - p, v=v_rel, A=scene.inv_cov[i],
                                    c2=effective_c2(scene, cfg, np.array([i]))[0])
            con = build_constraint(geom, p_k=cfg.p_k, splat_id=int(i))
            normals[j] = con.normal
            offsets[j] = con.offset
            h[j] = con.h_value
            eta[j] = geom.gamma
    elif idx.size:
        means = scene.means[idx]
        A = scene.inv_cov[idx]
        if cfg.rho > 0.0 and cfg.inflation_mode == "exact":
            normals, offsets, h, eta, fb = kernels.cone_rows_inflated(
                p, v, means, A, scene.s_min[idx], c, cfg.rho, cfg.p_k)
            fallback_count = int(fb.sum())
        else:
            c2eff = effective_c2(scene, cfg, idx)
            normals, offsets, h, eta = kernels.cone_rows(p, v, means, A, c2eff, cfg.p_k)
    else:
        normals = np.zeros((0, 3))
        offsets = np.zeros(0)
        h = np.zeros(0)
        eta = np.zeros(0)

    inside = np.nonzero(eta <= 0.0)[0]
    build_time = time.perf_counter() - t0
    diagnostics = {
        "min_h": float(h.min()) if h.size else float("inf"),
        "h": h,
        "active_splats": idx,
        "inside_ids": idx[inside] if inside.size else np.zeros(0, dtype=np.intp),
        "build_time": build_time,
        "n_active": int(idx.size),
        "inflation_fallbacks": fallback_count,
    }

    slack_weight = cfg.slack_weight
    if inside.size and cfg.inside_policy == "hard":
        sol = FilterSolution(u=None, status="infeasible",
                             active_ids=diagnostics["inside_ids"], slack_used=0.0,
                             solve_time=0.0, kkt_residual=np.nan)
        return sol, diagnostics
    if inside.size and slack_weight is None:
        slack_weight = DEFAULT_SLACK_WEIGHT

    problem = FilterProblem(
        reference=np.asarray(u_ref, dtype=np.float64),
        a_max=cfg.a_max,
        normals=normals,
        offsets=offsets,
        splat_ids=idx,
        h_values=h,
        v_current=v if cfg.v_max is not None else None,
        v_max=cfg.v_max,
        dt=cfg.dt,
        slack_weight=slack_weight,
    )
    sol = solve_filter(problem)
    return sol, diagnostics
