"""Order-alpha sensitivities of the terminal cost along the time-changed motion.

For a position ``(t, w)`` and a relaxed control ``nu`` on [0, 1], the pair
``(z, Z)`` solves two linear weakly singular Volterra equations whose
endpoint values give

    dt   = <dsigma/dx(y(1)), z(1)>
    grad = Z(1)^T dsigma/dx(y(1)).

Both unknowns behave like ``theta^(alpha-1)`` near zero.  They are solved on
the graded mesh ``(j/m)^(1/alpha)`` through the bounded regularized unknown
``theta^(1-alpha) z(theta)``, which is taken piecewise constant per cell
against the exact moments of ``zeta^(alpha-1) (theta - zeta)^(alpha-1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special as sp

from .controls import ControlSet, RelaxedControl
from .core import Position, ProblemConfig
from .dynamics import CostFn, Dynamics, _mixed
from .relaxed import AuxSolution, graded_mesh, power_moments, solve_auxiliary_y
from .special import gamma

DEFAULT_M = 2048


class SingularSystemError(ArithmeticError):
    """The per-node linear system of the sensitivity equations is singular."""


@dataclass(frozen=True, eq=False)
class SingularGridFn:
    """Samples of ``theta^(1-alpha) v(theta)`` at the mesh nodes (theta > 0)."""

    nodes: np.ndarray
    regularized: np.ndarray
    alpha: float

    def values(self) -> np.ndarray:
        """The unregularized samples ``v(theta_k)``."""
        factor = self.nodes ** (self.alpha - 1.0)
        return self.regularized * factor.reshape((-1,) + (1,) * (self.regularized.ndim - 1))

    @property
    def end(self) -> np.ndarray:
        return self.values()[-1]


@dataclass(frozen=True, eq=False)
class SensitivitySolution:
    z: SingularGridFn
    Z: SingularGridFn
    aux: AuxSolution

    @property
    def z1(self) -> np.ndarray:
        return self.z.end

    @property
    def Z1(self) -> np.ndarray:
        return self.Z.end


# forcing terms


def forcing_q_many(p: Position, thetas) -> np.ndarray:
    """History forcing of the z-equation at each theta in (0, 1]."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1)
    if np.any(thetas <= 0.0) or np.any(thetas > 1.0):
        raise ValueError("theta must lie in (0, 1]")
    if p.t >= p.T:
        raise ValueError("forcing needs t < T")
    n = p.cfg.n
    if p.caputo.nodes.size < 2:
        return np.zeros((thetas.size, n))
    alpha = p.alpha
    s = (p.t + thetas * (p.T - p.t))[:, None]
    lo, hi = p.caputo.nodes[:-1][None, :], p.caputo.nodes[1:][None, :]
    # int_lo^hi (s - xi)^(alpha - 2) dxi = ((s - hi)^(alpha-1) - (s - lo)^(alpha-1)) / (1 - alpha)
    span = (s - hi) ** (alpha - 1.0) - (s - lo) ** (alpha - 1.0)
    integral = span @ p.caputo.cells
    return -((1.0 - thetas)[:, None] / gamma(alpha)) * integral


def forcing_q(p: Position, theta: float) -> np.ndarray:
    if theta == 0.0:
        raise ValueError("q is singular at theta = 0")
    return forcing_q_many(p, [theta])[0]


def forcing_Q(p: Position, theta: float) -> np.ndarray:
    if theta <= 0.0:
        raise ValueError("Q is singular at theta = 0")
    if p.t >= p.T:
        raise ValueError("forcing needs t < T")
    return np.eye(p.cfg.n) / (gamma(p.alpha) * theta ** (1.0 - p.alpha) * (p.T - p.t) ** (1.0 - p.alpha))


# linearization coefficients


def coeffs_A_b(p: Position, y: AuxSolution, dyn: Dynamics, theta: float, u) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the linearized equation at a node of ``y`` for a fixed control point."""
    idx = np.flatnonzero(np.abs(y.nodes - theta) <= 1e-14)
    if idx.size == 0:
        raise ValueError(f"theta={theta} is not a node of the auxiliary solution")
    k = int(idx[0])
    span = p.T - p.t
    tau = p.t + theta * span
    yk = y.y[k]
    u = np.asarray(u, dtype=float).reshape(-1)
    A = span**p.alpha * np.asarray(dyn.df_dx(tau, yk, u), dtype=float).reshape(p.cfg.n, p.cfg.n)
    b = (1.0 - theta) * span**p.alpha * np.asarray(dyn.df_dtau(tau, yk, u), dtype=float) \
        - p.alpha * np.asarray(dyn.f(tau, yk, u), dtype=float) / span ** (1.0 - p.alpha)
    return A, b


def coeffs_star(weights, A_points, b_points) -> tuple[np.ndarray, np.ndarray]:
    """Probability-weighted means of per-control-point coefficients."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    A_points = np.asarray(A_points, dtype=float)
    b_points = np.asarray(b_points, dtype=float)
    if w.size != A_points.shape[0] or w.size != b_points.shape[0]:
        raise ValueError("weight vector does not match the coefficient lists")
    return np.tensordot(w, A_points, axes=1), np.tensordot(w, b_points, axes=1)


def _cell_coefficients(p: Position, aux: AuxSolution, ctrl: ControlSet, dyn: Dynamics):
    span = p.T - p.t
    alpha = p.alpha
    n = p.cfg.n
    m = aux.nodes.size - 1
    A = np.empty((m, n, n))
    B = np.empty((m, n))
    taus = aux.taus()
    for k in range(m):
        theta = aux.nodes[k + 1]
        tau, yk, mu = taus[k + 1], aux.y[k + 1], aux.cell_weights[k]
        jac = _mixed(lambda *a: np.asarray(dyn.df_dx(*a), dtype=float).reshape(n, n), tau, yk, ctrl, mu)
        dtau = _mixed(dyn.df_dtau, tau, yk, ctrl, mu)
        fval = _mixed(dyn.f, tau, yk, ctrl, mu)
        A[k] = span**alpha * jac
        B[k] = (1.0 - theta) * span**alpha * dtau - alpha * fval / span ** (1.0 - alpha)
    return A, B


# weakly singular moments


@lru_cache(maxsize=8)
def _singular_moments(alpha: float, mesh_bytes: bytes) -> np.ndarray:
    mesh = np.frombuffer(mesh_bytes, dtype=float)
    s = mesh[1:, None]
    lo = np.minimum(mesh[None, :-1], s) / s
    hi = np.minimum(mesh[None, 1:], s) / s
    direct = sp.betainc(alpha, alpha, hi) - sp.betainc(alpha, alpha, lo)
    # I_x(a, a) = 1 - I_{1-x}(a, a): use the upper tail where it is more accurate
    upper = sp.betainc(alpha, alpha, 1.0 - lo) - sp.betainc(alpha, alpha, 1.0 - hi)
    diff = np.where(lo >= 0.5, upper, direct)
    out = s ** (2.0 * alpha - 1.0) * sp.beta(alpha, alpha) * diff
    out = np.tril(out)
    out.setflags(write=False)
    return out


def singular_moments(alpha: float, mesh: np.ndarray) -> np.ndarray:
    """``M[k, j] = int_{cell j} zeta^(alpha-1) (theta_{k+1} - zeta)^(alpha-1) dzeta``."""
    return _singular_moments(float(alpha), np.ascontiguousarray(mesh, dtype=float).tobytes())


# solvers


def solve_sensitivity(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics,
                      m: int = DEFAULT_M, aux: AuxSolution | None = None) -> SensitivitySolution:
    """Solve the z- and Z-equations together on the graded mesh.

    A previously computed ``aux`` (same position, control and mesh) is reused.
    """
    if p.t >= p.T:
        raise ValueError("sensitivities need t < T")
    if aux is None:
        mesh = graded_mesh(m, p.alpha, nu.bounds[1:-1])
        aux = solve_auxiliary_y(p, nu, ctrl, dyn, mesh=mesh)
    A, B = _cell_coefficients(p, aux, ctrl, dyn)
    return _solve_linear(p, aux, A, B)


def _solve_linear(p: Position, aux: AuxSolution, A: np.ndarray, B: np.ndarray) -> SensitivitySolution:
    alpha = p.alpha
    n = p.cfg.n
    mesh = aux.nodes
    m = mesh.size - 1
    theta = mesh[1:]
    M = singular_moments(alpha, mesh)
    R = power_moments(alpha, mesh)
    g = gamma(alpha)
    b_term = (R @ B) / gamma(alpha + 1.0)
    q = forcing_q_many(p, theta)
    # regularized Q is constant in theta
    Q_reg = np.eye(n) / (g * (p.T - p.t) ** (1.0 - alpha))

    V = np.empty((m, n, n + 1))
    AV = np.empty((m, n, n + 1))
    eye = np.eye(n)
    for k in range(m):
        reg = theta[k] ** (1.0 - alpha)
        rhs = np.empty((n, n + 1))
        rhs[:, 0] = reg * (q[k] + b_term[k])
        rhs[:, 1:] = Q_reg
        if k:
            rhs += reg * np.tensordot(M[k, :k], AV[:k], axes=1) / g
        lhs = eye - reg * M[k, k] / g * A[k]
        try:
            V[k] = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"singular step system at theta={theta[k]}") from exc
        AV[k] = A[k] @ V[k]
    z = SingularGridFn(theta, V[:, :, 0].copy(), alpha)
    Z = SingularGridFn(theta, V[:, :, 1:].copy(), alpha)
    return SensitivitySolution(z, Z, aux)


def solve_z(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, m: int = DEFAULT_M) -> SingularGridFn:
    return solve_sensitivity(p, nu, ctrl, dyn, m).z


def solve_Z(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, m: int = DEFAULT_M) -> SingularGridFn:
    return solve_sensitivity(p, nu, ctrl, dyn, m).Z


def solve_linear_volterra(alpha: float, T_minus_t: float, m: int, A_const, b_const):
    """Scalar/vector test harness: solve the z/Z equations for constant coefficients.

    Used to check the scheme against closed forms without going through a
    dynamics object.  Returns ``(z(1), Z(1))``.
    """
    A_const = np.atleast_2d(np.asarray(A_const, dtype=float))
    n = A_const.shape[0]
    cfg = ProblemConfig(alpha, T_minus_t, n)
    p = Position.initial(cfg, np.zeros(n))
    mesh = graded_mesh(m, alpha)
    aux = AuxSolution(mesh, np.zeros((mesh.size, n)), np.zeros((m, 1)), p, None)
    A = np.broadcast_to(A_const, (m, n, n)).copy()
    B = np.broadcast_to(np.asarray(b_const, dtype=float).reshape(n), (m, n)).copy()
    sol = _solve_linear(p, aux, A, B)
    return sol.z1, sol.Z1


# psi and its derivatives


@dataclass(frozen=True)
class PsiDerivatives:
    value: float
    dt: float
    grad: np.ndarray
    y1: np.ndarray


def psi(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
        m: int = DEFAULT_M) -> float:
    """Terminal cost of the motion driven by ``nu`` (on [0, 1]) from ``p``."""
    mesh = graded_mesh(m, p.alpha, nu.bounds[1:-1])
    aux = solve_auxiliary_y(p, nu, ctrl, dyn, mesh=mesh)
    return float(cost.sigma(aux.y1))


def psi_derivatives(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                    m: int = DEFAULT_M, aux: AuxSolution | None = None) -> PsiDerivatives:
    sens = solve_sensitivity(p, nu, ctrl, dyn, m, aux)
    y1 = sens.aux.y1
    ds = np.asarray(cost.dsigma_dx(y1), dtype=float).reshape(-1)
    return PsiDerivatives(float(cost.sigma(y1)), float(ds @ sens.z1), sens.Z1.T @ ds, y1)


def shifted_position(p: Position, f, delta: float) -> Position:
    """History continued by the constant Caputo derivative ``f`` on [t, t + delta]."""
    f = np.asarray(f, dtype=float).reshape(1, -1)
    return p.extend([p.t + delta], f)


def fd_directional_psi(p: Position, nu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                       f, delta: float, m: int = DEFAULT_M) -> float:
    """Difference quotient of psi along the constant-direction extension."""
    if not (0.0 < delta <= 0.5 * (p.T - p.t)):
        raise ValueError(f"delta={delta} must lie in (0, (T - t)/2]")
    base = psi(p, nu, ctrl, dyn, cost, m)
    moved = psi(shifted_position(p, f, delta), nu, ctrl, dyn, cost, m)
    return (moved - base) / delta
