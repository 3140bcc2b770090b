"""Controlled fractional dynamics and their motions.

Motions solve the Volterra form of the Caputo equation,

    x(tau) = a(tau | t, w) + (1/Gamma(alpha)) int_t^tau f(xi, x(xi), u(xi)) (tau - xi)^(alpha-1) dxi,

by product-rectangle integration: the Caputo derivative is constant on each
cell and equal to f at the cell's right node, which makes every node an
implicit equation solved by Picard iteration.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controls import ControlSet, PiecewiseControl, RelaxedControl
from .core import GridFn, Position, ProblemConfig, kernel_moments
from .special import gamma, mittag_leffler

PICARD_TOL = 1e-12
PICARD_MAX_ITER = 50
_NODE_MERGE_TOL = 1e-9


class SolverError(RuntimeError):
    """Raised when a motion cannot be computed (divergence, non-finite state)."""


@dataclass(frozen=True)
class Dynamics:
    """Right-hand side ``f(tau, x, u)`` with its partial derivatives.

    ``c_f`` is the growth constant in ``|f| <= c_f (1 + |x|)``;
    ``lipschitz`` (optional) bounds the Lipschitz constant in ``x`` and is
    used to check that the implicit node update is a contraction.
    """

    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    df_dtau: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    df_dx: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    c_f: float
    lipschitz: float | None = None
    name: str = "custom"

    def validate(self, ctrl: ControlSet, T: float, n: int, radius: float = 3.0,
                 samples: int = 5, rtol: float = 1e-4) -> None:
        """Check growth and derivative callbacks on a lattice; raise ValueError on mismatch."""
        taus = np.linspace(0.0, T, samples)
        xs = _lattice(n, radius, samples)
        eps = 1e-6
        for tau in taus:
            for x in xs:
                for u in ctrl.points:
                    fx = np.asarray(self.f(tau, x, u), dtype=float)
                    if fx.shape != (n,):
                        raise ValueError(f"f returned shape {fx.shape}, expected ({n},)")
                    if np.linalg.norm(fx) > self.c_f * (1 + np.linalg.norm(x)) * (1 + 1e-9) + 1e-12:
                        raise ValueError(f"growth bound c_f={self.c_f} violated at tau={tau}, x={x}")
                    hi, lo = min(tau + eps, T), max(tau - eps, 0.0)
                    fd_t = (np.asarray(self.f(hi, x, u)) - np.asarray(self.f(lo, x, u))) / (hi - lo)
                    _compare(fd_t, np.asarray(self.df_dtau(tau, x, u), dtype=float), rtol, "df_dtau")
                    jac = np.asarray(self.df_dx(tau, x, u), dtype=float).reshape(n, n)
                    fd_x = np.empty((n, n))
                    for j in range(n):
                        e = np.zeros(n)
                        e[j] = eps
                        fd_x[:, j] = (np.asarray(self.f(tau, x + e, u)) - np.asarray(self.f(tau, x - e, u))) / (2 * eps)
                    _compare(fd_x, jac, rtol, "df_dx")


@dataclass(frozen=True)
class CostFn:
    """Terminal cost ``sigma(x)`` with its gradient."""

    sigma: Callable[[np.ndarray], float]
    dsigma_dx: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def validate(self, n: int, radius: float = 3.0, samples: int = 5, rtol: float = 1e-4) -> None:
        eps = 1e-6
        for x in _lattice(n, radius, samples):
            grad = np.asarray(self.dsigma_dx(x), dtype=float).reshape(n)
            fd = np.empty(n)
            for j in range(n):
                e = np.zeros(n)
                e[j] = eps
                fd[j] = (self.sigma(x + e) - self.sigma(x - e)) / (2 * eps)
            _compare(fd, grad, rtol, "dsigma_dx")


def _lattice(n: int, radius: float, samples: int) -> list[np.ndarray]:
    axis = np.linspace(-radius, radius, samples)
    if n == 1:
        return [np.array([v]) for v in axis]
    rng = np.random.default_rng(0)
    return [rng.uniform(-radius, radius, n) for _ in range(samples**2)]


def _compare(fd: np.ndarray, exact: np.ndarray, rtol: float, what: str) -> None:
    scale = max(1.0, float(np.max(np.abs(exact))))
    if np.max(np.abs(fd - exact)) > rtol * scale:
        raise ValueError(f"{what} disagrees with finite differences: {exact} vs {fd}")


@dataclass(frozen=True, eq=False)
class Motion:
    """A solved trajectory on [0, T].

    ``path`` is the whole trajectory as a position at time T (its Caputo
    cells are the recorded right-hand side values); ``states`` holds x at
    every node of ``path``.
    """

    path: Position
    states: GridFn
    start: Position
    control: object = field(default=None)

    @property
    def caputo_samples(self) -> GridFn:
        return self.path.caputo

    @property
    def grid(self) -> GridFn:
        return self.states

    @property
    def terminal(self) -> np.ndarray:
        return self.states.samples[-1].copy()

    def x(self, tau: float) -> np.ndarray:
        return self.path.w(tau)

    def position_at(self, tau: float) -> Position:
        return self.path.restrict(tau)


def f_star(dyn: Dynamics, ctrl: ControlSet, tau: float, x: np.ndarray, mu) -> np.ndarray:
    """Velocity averaged over the probability weights ``mu`` on the control grid."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    if mu.size != len(ctrl):
        raise ValueError(f"{mu.size} weights for a control set of size {len(ctrl)}")
    if np.any(mu < 0.0) or abs(mu.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be non-negative and sum to 1")
    out = None
    for k in np.flatnonzero(mu):
        term = mu[k] * np.asarray(dyn.f(tau, x, ctrl.points[k]), dtype=float)
        out = term if out is None else out + term
    return out


def _mixed(fn, tau, x, ctrl: ControlSet, mu: np.ndarray, support=None):
    out = None
    for k in (np.flatnonzero(mu) if support is None else support):
        term = mu[k] * np.asarray(fn(tau, x, ctrl.points[k]), dtype=float)
        out = term if out is None else out + term
    return out


def hamiltonian(dyn: Dynamics, ctrl: ControlSet, tau: float, x, s) -> float:
    """``min_u <s, f(tau, x, u)>`` over the control grid."""
    return hamiltonian_argmin(dyn, ctrl, tau, x, s)[1]


def hamiltonian_argmin(dyn: Dynamics, ctrl: ControlSet, tau: float, x, s) -> tuple[int, float]:
    """Minimizing index (lowest index on ties) and the minimum value."""
    if len(ctrl) == 0:
        raise ValueError("empty control set")
    x = np.asarray(x, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    vals = [float(s @ np.asarray(dyn.f(tau, x, u), dtype=float)) for u in ctrl.points]
    i = int(np.argmin(vals))
    return i, vals[i]


def convexity_warning(dyn: Dynamics, ctrl: ControlSet, tau: float, x) -> str | None:
    """Heuristic check that the sampled velocity set looks convex.

    Pairs of velocities far apart on the sampling scale must have their
    midpoint near some sampled velocity; a two-point velocity set is always
    flagged.  Returns the warning text (also issued via ``warnings``) or None.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    vel = np.unique(np.array([np.asarray(dyn.f(tau, x, u), dtype=float) for u in ctrl.points]), axis=0)
    if vel.shape[1] > 2 or vel.shape[0] == 1:
        return None
    msg = None
    if vel.shape[0] == 2:
        msg = "velocity set sampled at two points only; relaxation is not convex"
    else:
        d = np.linalg.norm(vel[:, None, :] - vel[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        gap = float(np.median(d.min(axis=1)))
        for i in range(vel.shape[0]):
            for j in range(i + 1, vel.shape[0]):
                if d[i, j] > 1.5 * gap:
                    mid = 0.5 * (vel[i] + vel[j])
                    if np.min(np.linalg.norm(vel - mid, axis=1)) > gap * (1 + 1e-9):
                        msg = f"velocity midpoint {mid.tolist()} is far from the sampled velocity set"
                        break
            if msg:
                break
    if msg:
        warnings.warn(msg, stacklevel=2)
    return msg


def growth_bound(a_norm: float, c_f: float, alpha: float, duration: float) -> float:
    """Bound on ``|x|`` over [t, T] from ``1 + |x| <= (1 + |a|) E_alpha(c_f (T - t)^alpha)``."""
    return (1.0 + a_norm) * mittag_leffler(alpha, 1.0, c_f * duration**alpha) - 1.0


# solver core


def _solver_nodes(t: float, t_end: float, steps: int, extra=()) -> np.ndarray:
    nodes = np.linspace(t, t_end, steps + 1)
    tol = _NODE_MERGE_TOL * max(1.0, t_end - t)
    add = [b for b in extra if t < b < t_end and np.min(np.abs(nodes - b)) > tol]
    if add:
        nodes = np.union1d(nodes, add)
    return nodes


def march(p: Position, nodes: np.ndarray, cell_rhs, lipschitz: float | None = None) -> tuple[Position, np.ndarray]:
    """Advance the history of ``p`` over ``nodes`` (``nodes[0] == p.t``).

    ``cell_rhs(lo, hi, x)`` returns the Caputo derivative on the cell
    ``(lo, hi]`` given the state ``x`` at ``hi``.  Returns the extended
    position and the states at ``nodes[1:]``.
    """
    alpha = p.alpha
    n = p.cfg.n
    g1 = gamma(alpha + 1.0)
    hist_lo = p.caputo.nodes[:-1]
    hist_hi = p.caputo.nodes[1:]
    m = nodes.size - 1
    lo_all = np.concatenate([hist_lo, nodes[:-1]])
    hi_all = np.concatenate([hist_hi, nodes[1:]])
    n_hist = hist_lo.size
    cells = np.empty((n_hist + m, n))
    cells[:n_hist] = p.caputo.cells
    states = np.empty((m, n))
    x_prev = p.wt if n_hist else p.w0.copy()

    if lipschitz is not None and m:
        h = float(np.max(np.diff(nodes)))
        if lipschitz * h**alpha / g1 >= 1.0:
            raise ValueError(f"step {h} too large for a contractive node update (lambda_f={lipschitz})")

    for k in range(m):
        K = n_hist + k
        s = hi_all[K]
        if K:
            weights = kernel_moments(lo_all[:K], hi_all[:K], s, alpha)
            base = p.w0 + weights @ cells[:K]
        else:
            base = p.w0.copy()
        omega = (s - lo_all[K]) ** alpha / g1
        lo, hi = lo_all[K], hi_all[K]
        x = x_prev
        for _ in range(PICARD_MAX_ITER):
            c = np.asarray(cell_rhs(lo, hi, x), dtype=float)
            x_new = base + omega * c
            if not np.isfinite(x_new).all():
                raise SolverError(f"non-finite state at tau={s}")
            if np.abs(x_new - x).max() <= PICARD_TOL * (1.0 + np.abs(x_new).max()):
                break
            x = x_new
        else:
            raise SolverError(f"Picard iteration did not converge at tau={s}")
        cells[K] = c
        states[k] = base + omega * c
        x_prev = states[k]

    all_nodes = np.concatenate([p.caputo.nodes, nodes[1:]])
    new_pos = Position(p.cfg, float(all_nodes[-1]), p.w0, GridFn.from_cells(all_nodes, cells, n))
    return new_pos, states


def _motion_from(p: Position, nodes: np.ndarray, cell_rhs, dyn: Dynamics, control) -> Motion:
    path, new_states = march(p, nodes, cell_rhs, dyn.lipschitz)
    hist_states = p.w_nodes()
    states = np.vstack([hist_states, new_states])
    return Motion(path, GridFn(path.caputo.nodes, states), p, control)


def solve_motion(p: Position, u: PiecewiseControl, dyn: Dynamics, steps: int) -> Motion:
    """Motion from ``p`` under a piecewise-constant control on [t, T]."""
    if p.t >= p.T:
        raise ValueError("initial position must have t < T")
    if steps < 8:
        raise ValueError("steps must be at least 8")
    if u.breakpoints[0] != p.t or abs(u.breakpoints[-1] - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError("control must be defined on [t, T]")
    nodes = _solver_nodes(p.t, p.T, steps, u.breakpoints[1:-1])

    def rhs(lo, hi, x):
        return dyn.f(hi, x, u(0.5 * (lo + hi)))

    return _motion_from(p, nodes, rhs, dyn, u)


def solve_motion_relaxed(p: Position, mu: RelaxedControl, ctrl: ControlSet, dyn: Dynamics, steps: int) -> Motion:
    """Motion from ``p`` under a relaxed control on [t, T]."""
    if p.t >= p.T:
        raise ValueError("initial position must have t < T")
    if steps < 8:
        raise ValueError("steps must be at least 8")
    if mu.size != len(ctrl):
        raise ValueError("relaxed control weights do not match the control set")
    lo_i, hi_i = mu.interval
    if lo_i != p.t or abs(hi_i - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError("relaxed control must be defined on [t, T]")
    nodes = _solver_nodes(p.t, p.T, steps, mu.bounds[1:-1])

    def rhs(lo, hi, x):
        return _mixed(dyn.f, hi, x, ctrl, mu.on_cell(lo, hi))

    return _motion_from(p, nodes, rhs, dyn, mu)


def volterra_residual(motion: Motion, dyn: Dynamics, ctrl: ControlSet | None = None) -> float:
    """Max node residual of the solved grid substituted into the integral equation.

    The right-hand side is re-evaluated from the stored states and control,
    integrated with the cell moments, and compared with the stored states.
    """
    start = motion.start
    nodes = motion.path.caputo.nodes
    states = motion.states.samples
    i0 = start.caputo.nodes.size - 1
    lo, hi = nodes[:-1], nodes[1:]
    cells = motion.path.caputo.cells.copy()
    ctl = motion.control
    for j in range(i0, lo.size):
        mid = 0.5 * (lo[j] + hi[j])
        if isinstance(ctl, RelaxedControl):
            cells[j] = _mixed(dyn.f, hi[j], states[j + 1], ctrl, ctl.on_cell(lo[j], hi[j]))
        else:
            cells[j] = dyn.f(hi[j], states[j + 1], ctl(mid))
    worst = 0.0
    for k in range(i0 + 1, nodes.size):
        w = kernel_moments(lo[:k], hi[:k], nodes[k], start.alpha)
        x = start.w0 + w @ cells[:k]
        worst = max(worst, float(np.max(np.abs(x - states[k]))))
    return worst


# built-in example: (^C D^alpha x)(tau) = Gamma(alpha) g(tau) u, cost -x^2

G_FUNCTIONS: dict[str, tuple[Callable[[float], float], Callable[[float], float]]] = {
    "one": (lambda tau: 1.0, lambda tau: 0.0),
    "cos": (math.cos, lambda tau: -math.sin(tau)),
    "poly": (lambda tau: 1.0 - tau + tau * tau, lambda tau: -1.0 + 2.0 * tau),
}


def g_function(name: str):
    try:
        return G_FUNCTIONS[name]
    except KeyError:
        raise ValueError(f"unknown g function {name!r}; choose from {sorted(G_FUNCTIONS)}") from None


def example_dynamics(alpha: float, g: str = "one", T: float = 1.0) -> Dynamics:
    g_fn, dg_fn = g_function(g)
    gam = gamma(alpha)
    taus = np.linspace(0.0, T, 1001)
    g_max = max(abs(g_fn(tau)) for tau in taus)

    def f(tau, x, u):
        return np.array([gam * g_fn(tau) * u[0]])

    def df_dtau(tau, x, u):
        return np.array([gam * dg_fn(tau) * u[0]])

    def df_dx(tau, x, u):
        return np.zeros((1, 1))

    return Dynamics(f, df_dtau, df_dx, c_f=gam * g_max * 1.001, lipschitz=0.0, name=f"example-g:{g}")


def example_cost() -> CostFn:
    return CostFn(lambda x: -float(x[0]) ** 2, lambda x: np.array([-2.0 * x[0]]), name="neg-square")


def example_controls(points=(-1.0, 0.0, 1.0)) -> ControlSet:
    return ControlSet(np.asarray(points, dtype=float).reshape(-1, 1))


@dataclass(frozen=True)
class ExampleProblem:
    cfg: ProblemConfig
    g: str
    dyn: Dynamics
    cost: CostFn
    ctrl: ControlSet


def example_problem(alpha: float = 0.5, T: float = 1.0, g: str = "one", controls=(-1.0, 0.0, 1.0)) -> ExampleProblem:
    cfg = ProblemConfig(alpha, T, 1)
    return ExampleProblem(cfg, g, example_dynamics(alpha, g, T), example_cost(), example_controls(controls))


def coupled_dynamics() -> Dynamics:
    """Two-state nonlinear system, scalar control: x1' = x2/2 + u, x2' = -sin(x1) - 0.3 x2 + 0.2 tau."""

    def f(tau, x, u):
        return np.array([0.5 * x[1] + u[0], -math.sin(x[0]) - 0.3 * x[1] + 0.2 * tau])

    def df_dtau(tau, x, u):
        return np.array([0.0, 0.2])

    def df_dx(tau, x, u):
        return np.array([[0.0, 0.5], [-math.cos(x[0]), -0.3]])

    return Dynamics(f, df_dtau, df_dx, c_f=2.0, lipschitz=1.5, name="coupled")


def coupled_cost() -> CostFn:
    return CostFn(lambda x: float(x[0] ** 2 + 0.5 * math.sin(x[1])),
                  lambda x: np.array([2.0 * x[0], 0.5 * math.cos(x[1])]), name="coupled")


def coupled_problem(alpha: float = 0.5, T: float = 1.0, g: str = "one", controls=(-1.0, 0.0, 1.0)) -> ExampleProblem:
    """Nonlinear test problem; ``g`` is accepted for registry uniformity and ignored."""
    cfg = ProblemConfig(alpha, T, 2)
    return ExampleProblem(cfg, g, coupled_dynamics(), coupled_cost(), example_controls(controls))


DYNAMICS_REGISTRY = {"example-g": example_problem, "coupled": coupled_problem}
