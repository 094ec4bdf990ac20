"""Forward collision cone geometry for a single ellipsoidal obstacle.

A point robot at p with velocity v approaches an ellipsoid
{x : (x - mu)^T A (x - mu) <= c2}. With r = mu - p and the scalars

    beta  = v^T A v,   delta = r^T A v,   gamma = r^T A r - c2,

the ray p + t v (t >= 0) intersects the ellipsoid iff

    h = beta * gamma - delta^2 <= 0   and   delta >= 0,

provided the robot starts outside (gamma > 0). h doubles as a barrier
function: h >= 0 is the safe (no-collision) set. All functions here are pure
and stateless; batch versions live in `kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Invalid geometric configuration for the requested operation."""


class InsideEllipsoidError(GeometryError):
    """Robot position is inside the (inflated) confidence ellipsoid."""


class ZeroVelocityError(GeometryError):
    """Operation requires a nonzero relative velocity."""


class DegenerateDirectionError(GeometryError):
    """Sight line parallel to velocity: exact inflation direction undefined."""


@dataclass(frozen=True)
class RelativeGeometry:
    """Relative robot/obstacle state: r = mu - p, relative velocity v,
    inverse covariance A, and effective squared confidence radius c2."""

    r: np.ndarray
    v: np.ndarray
    A: np.ndarray
    c2: float

    @property
    def beta(self) -> float:
        return float(self.v @ self.A @ self.v)

    @property
    def delta(self) -> float:
        return float(self.r @ self.A @ self.v)

    @property
    def gamma(self) -> float:
        return float(self.r @ self.A @ self.r - self.c2)


def barrier_value(geom: RelativeGeometry) -> float:
    """h = beta * gamma - delta^2. Nonnegative outside the forward cone."""
    return geom.beta * geom.gamma - geom.delta ** 2


def cone_status(geom: RelativeGeometry) -> str:
    """Total classifier: 'inside_ellipsoid', 'stationary', 'in_cone' or 'clear'.

    A stationary robot outside the ellipsoid never enters it, so v = 0 maps
    to 'clear'. The boundary h = 0 counts as in-cone (conservative).
    """
    if geom.gamma <= 0.0:
        return "inside_ellipsoid"
    if not np.any(geom.v):
        return "stationary"
    if barrier_value(geom) <= 0.0 and geom.delta >= 0.0:
        return "in_cone"
    return "clear"


def in_forward_cone(geom: RelativeGeometry) -> bool:
    """Strict forward-cone membership test.

    Requires gamma > 0 and v != 0; violations raise InsideEllipsoidError or
    ZeroVelocityError so callers can distinguish them. Use `cone_status` for
    the non-raising policy variant.
    """
    if geom.gamma <= 0.0:
        raise InsideEllipsoidError(
            f"robot inside ellipsoid (r^T A r = {geom.gamma + geom.c2:.6g} <= c2 = {geom.c2:.6g})"
        )
    if not np.any(geom.v):
        raise ZeroVelocityError("forward cone undefined for v = 0")
    return barrier_value(geom) <= 0.0 and geom.delta >= 0.0


def oracle_ray_hits(geom: RelativeGeometry, t_max: float = 10.0, steps: int = 2048) -> bool:
    """Ground-truth ray/ellipsoid hit test, independent of the cone algebra.

    Evaluates phi(t) = (r - t v)^T A (r - t v) - c2 two ways: an analytic
    quadratic-root check (primary) and dense sampling of phi on [0, t_max]
    (cross-check); reports a hit if either sees phi <= 0. t_max is extended
    to at least twice the analytic minimizer so the vertex is always covered.
    """
    if steps < 2:
        raise GeometryError("steps must be >= 2")
    a = geom.beta
    b = geom.delta
    d = geom.gamma
    if a == 0.0:
        return d <= 0.0
    t_star = b / a
    if t_star > 0:
        t_max = max(t_max, 2.0 * t_star)

    disc = b * b - a * d
    if d <= 0.0:
        analytic = True  # phi(0) <= 0
    else:
        # both roots share the sign of b when they exist
        analytic = disc >= 0.0 and b >= 0.0

    ts = np.linspace(0.0, t_max, steps)
    phi = a * ts * ts - 2.0 * b * ts + d
    sampled = bool(phi.min() <= 0.0)
    return analytic or sampled


def whitened_test(geom: RelativeGeometry, L: np.ndarray) -> bool:
    """Forward-cone test in whitened coordinates (L maps the ellipsoid to a
    sphere of radius sqrt(c2)); must agree with `in_forward_cone`.

    Requires L^T L = A to modest relative tolerance.
    """
    L = np.asarray(L, dtype=np.float64)
    err = np.linalg.norm(L.T @ L - geom.A) / max(np.linalg.norm(geom.A), 1e-300)
    if err > 1e-6:
        raise GeometryError(f"whitening mismatch: ||L^T L - A|| relative error {err:.3g}")
    rt = L @ geom.r
    vt = L @ geom.v
    gamma_t = float(rt @ rt - geom.c2)
    if gamma_t <= 0.0:
        raise InsideEllipsoidError("whitened position inside confidence sphere")
    if not np.any(vt):
        raise ZeroVelocityError("forward cone undefined for v = 0")
    h_t = float(vt @ vt) * gamma_t - float(rt @ vt) ** 2
    return h_t <= 0.0 and float(rt @ vt) >= 0.0


@dataclass(frozen=True)
class InflationResult:
    """Effective confidence radius after robot-sphere inflation.

    `psi` is the direction-dependent radial factor (1/s_min in conservative
    mode, where it bounds every direction). Gradients are with respect to the
    robot position p and velocity v; conservative mode is state-independent
    so they vanish.
    """

    c_M: float
    psi: float
    grad_cM_p: np.ndarray
    grad_cM_v: np.ndarray
    mode: str  # "exact" | "conservative"


def inflation_terms(geom: RelativeGeometry):
    """Exact-mode internals: (t, psi, grad_t_psi, dt_dr, dt_dv).

    t = r - v * delta / beta is the A-orthogonal projection of the sight line
    onto the plane normal to v; psi = sqrt(t^T A t) / ||t||.
    """
    beta = geom.beta
    if beta <= 0.0:
        raise DegenerateDirectionError("exact inflation requires beta > 0 (v != 0)")
    r, v, A = geom.r, geom.v, geom.A
    delta = geom.delta
    t = r - v * (delta / beta)
    tn = float(np.linalg.norm(t))
    if tn <= 1e-9 * float(np.linalg.norm(r)):
        raise DegenerateDirectionError("sight line parallel to velocity (t ~ 0)")
    At = A @ t
    q = float(np.sqrt(t @ At))
    psi = q / tn
    grad_t_psi = At / (tn * q) - (q / tn ** 3) * t
    Av = A @ v
    Ar = A @ r
    dt_dr = np.eye(3) - np.outer(v, Av) / beta
    dt_dv = -np.outer(v, beta * Ar - 2.0 * delta * Av) / beta ** 2 - (delta / beta) * np.eye(3)
    return t, psi, grad_t_psi, dt_dr, dt_dv


def inflate(
    geom: RelativeGeometry,
    scales: np.ndarray,
    rho: float,
    mode: str = "exact",
) -> InflationResult:
    """Minkowski-sum inflation of the confidence radius by a robot sphere.

    Conservative mode: c_M = c + rho / s_min, valid in every direction and
    state-independent. Exact mode: c_M = c + rho * psi(p, v) with gradients
    via the chain rule through t; note r = mu - p flips the sign of the
    position gradient relative to the r-derivative.
    """
    if rho < 0:
        raise GeometryError("robot radius must be nonnegative")
    if mode not in ("exact", "conservative"):
        raise GeometryError(f"unknown inflation mode {mode!r}")
    c = float(np.sqrt(geom.c2))
    s_min = float(np.min(scales))
    if s_min <= 0:
        raise GeometryError("scales must be positive")
    zero = np.zeros(3)
    if rho == 0.0:
        return InflationResult(c_M=c, psi=1.0 / s_min, grad_cM_p=zero, grad_cM_v=zero, mode=mode)
    if mode == "conservative":
        return InflationResult(c_M=c + rho / s_min, psi=1.0 / s_min,
                               grad_cM_p=zero, grad_cM_v=zero, mode="conservative")
    t, psi, grad_t_psi, dt_dr, dt_dv = inflation_terms(geom)
    grad_r = rho * (dt_dr.T @ grad_t_psi)
    grad_p = -grad_r
    grad_v = rho * (dt_dv.T @ grad_t_psi)
    return InflationResult(c_M=c + rho * psi, psi=psi,
                           grad_cM_p=grad_p, grad_cM_v=grad_v, mode="exact")
