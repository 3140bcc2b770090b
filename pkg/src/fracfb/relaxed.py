"""Relaxed controls on the unit interval and the time-changed motion ``y``.

With ``theta = (tau - t) / (T - t)`` the motion from ``(t, w)`` becomes the
solution of

    y(theta) = a(t + theta (T - t) | t, w)
               + ((T - t)^alpha / Gamma(alpha)) int_0^theta f*(t + zeta (T - t), y(zeta), nu(zeta))
                 (theta - zeta)^(alpha - 1) dzeta,

which lives on a fixed interval for every position.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .controls import (
    ControlSet,
    RelaxedControl,
    lift_ordinary,
    time_change_pi,
    time_change_pi_inverse,
)
from .core import Position, extension_a_many
from .dynamics import PICARD_MAX_ITER, PICARD_TOL, Dynamics, SolverError, _mixed
from .special import gamma

__all__ = [
    "AuxSolution",
    "graded_mesh",
    "lift_ordinary",
    "solve_auxiliary_y",
    "time_change_pi",
    "time_change_pi_inverse",
]

_MERGE_TOL = 1e-10


def graded_mesh(m: int, alpha: float, extra=()) -> np.ndarray:
    """Nodes ``(j/m)^(1/alpha)`` on [0, 1] plus any interior ``extra`` points."""
    if m < 1:
        raise ValueError("mesh needs at least one cell")
    mesh = (np.arange(m + 1) / m) ** (1.0 / alpha)
    mesh[-1] = 1.0
    return _merge(mesh, extra)


def uniform_mesh(m: int, extra=()) -> np.ndarray:
    return _merge(np.linspace(0.0, 1.0, m + 1), extra)


def _merge(mesh: np.ndarray, extra) -> np.ndarray:
    add = [b for b in extra if 0.0 < b < 1.0 and np.min(np.abs(mesh - b)) > _MERGE_TOL]
    return np.union1d(mesh, add) if add else mesh


@lru_cache(maxsize=8)
def _power_moments(alpha: float, mesh_bytes: bytes) -> np.ndarray:
    mesh = np.frombuffer(mesh_bytes, dtype=float)
    s = mesh[1:, None]
    lo = np.minimum(mesh[None, :-1], s)
    hi = np.minimum(mesh[None, 1:], s)
    out = (s - lo) ** alpha - (s - hi) ** alpha
    out.setflags(write=False)
    return out


def power_moments(alpha: float, mesh: np.ndarray) -> np.ndarray:
    """Matrix ``R[k, j] = int_{cell j} (theta_{k+1} - zeta)^(alpha-1) dzeta * alpha`` (lower triangular).

    Divide by ``Gamma(alpha + 1)`` to get the kernel weights of the
    Riemann-Liouville integral.
    """
    return _power_moments(float(alpha), np.ascontiguousarray(mesh, dtype=float).tobytes())


@dataclass(frozen=True, eq=False)
class AuxSolution:
    """Solution of the time-changed equation at the mesh nodes."""

    nodes: np.ndarray
    y: np.ndarray
    cell_weights: np.ndarray
    position: Position
    nu: RelaxedControl

    @property
    def y1(self) -> np.ndarray:
        return self.y[-1].copy()

    def taus(self) -> np.ndarray:
        p = self.position
        return p.t + self.nodes * (p.T - p.t)


def solve_auxiliary_y(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics,
                      steps: int = 2048, mesh: np.ndarray | None = None) -> AuxSolution:
    """Solve the time-changed motion equation on a uniform (or given) mesh of [0, 1].

    Piece boundaries of ``nu`` are inserted into the mesh.
    """
    if p.t >= p.T:
        raise ValueError("initial position must have t < T")
    if nu.interval != (0.0, 1.0):
        raise ValueError("nu must be a relaxed control on [0, 1]")
    if nu.size != len(ctrl):
        raise ValueError("relaxed control weights do not match the control set")
    if mesh is None:
        if steps < 8:
            raise ValueError("steps must be at least 8")
        mesh = uniform_mesh(steps, nu.bounds[1:-1])
    mesh = np.asarray(mesh, dtype=float)
    alpha = p.alpha
    span = p.T - p.t
    scale = span**alpha / gamma(alpha + 1.0)
    R = power_moments(alpha, mesh)
    taus = p.t + mesh * span
    taus[-1] = p.T
    forcing = extension_a_many(p, taus)

    m = mesh.size - 1
    n = p.cfg.n
    weights = np.array([nu.on_cell(mesh[j], mesh[j + 1]) for j in range(m)])
    supports = [np.flatnonzero(w) for w in weights]
    F = np.empty((m, n))
    y = np.empty((m + 1, n))
    y[0] = forcing[0]
    for k in range(m):
        base = forcing[k + 1] + scale * (R[k, :k] @ F[:k]) if k else forcing[k + 1].copy()
        omega = scale * R[k, k]
        tau = taus[k + 1]
        mu = weights[k]
        x = y[k]
        support = supports[k]
        for _ in range(PICARD_MAX_ITER):
            c = _mixed(dyn.f, tau, x, ctrl, mu, support)
            x_new = base + omega * c
            if not np.isfinite(x_new).all():
                raise SolverError(f"non-finite state at theta={mesh[k + 1]}")
            if np.abs(x_new - x).max() <= PICARD_TOL * (1.0 + np.abs(x_new).max()):
                break
            x = x_new
        else:
            raise SolverError(f"Picard iteration did not converge at theta={mesh[k + 1]}")
        F[k] = c
        y[k + 1] = base + omega * c
    return AuxSolution(mesh, y, weights, p, nu)
