"""Value functional as a lower envelope, and its order-alpha directional derivatives.

The value at a position is the minimum of psi over relaxed controls on
[0, 1].  A finite :class:`CandidateFamily` stands in for that set; its
active members (those within ``tol`` of the minimum) determine the
directional derivative ``min over active (dt + <grad, f>)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .controls import ControlSet, PiecewiseControl, RelaxedControl
from .core import Position, extension_a
from .dynamics import CostFn, Dynamics, g_function, solve_motion
from .relaxed import graded_mesh, solve_auxiliary_y
from .sensitivity import DEFAULT_M, PsiDerivatives, psi_derivatives
from .special import gamma

ENUMERATION_LIMIT = 10**6


class CandidateFamily(list):
    """Non-empty list of relaxed controls on [0, 1]."""

    def __init__(self, members: Sequence[RelaxedControl]):
        members = list(members)
        if not members:
            raise ValueError("candidate family must not be empty")
        for nu in members:
            if nu.interval != (0.0, 1.0):
                raise ValueError("family members must be relaxed controls on [0, 1]")
        super().__init__(members)

    @classmethod
    def constants(cls, ctrl: ControlSet) -> "CandidateFamily":
        """Constant Dirac controls, one per control point."""
        return cls([RelaxedControl.dirac(ctrl, i) for i in range(len(ctrl))])


@dataclass(frozen=True)
class ActiveSet:
    indices: tuple[int, ...]
    minimum: float
    tol: float
    values: tuple[float, ...]


def default_tol(minimum: float) -> float:
    return 1e-2 * (1.0 + abs(minimum))


def _select_active(values: Sequence[float], tol: float | None) -> ActiveSet:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("empty family")
    lowest = min(values)
    if tol is None:
        tol = default_tol(lowest)
    if not tol > 0:
        raise ValueError("tol must be positive")
    idx = tuple(i for i, v in enumerate(values) if v <= lowest + tol)
    return ActiveSet(idx, lowest, tol, tuple(values))


def _family_aux(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, m: int):
    return [solve_auxiliary_y(p, nu, ctrl, dyn, mesh=graded_mesh(m, p.alpha, nu.bounds[1:-1])) for nu in family]


def family_values(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                  m: int = DEFAULT_M) -> list[float]:
    return [float(cost.sigma(aux.y1)) for aux in _family_aux(p, family, ctrl, dyn, m)]


def active_set(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
               tol: float | None = None, m: int = DEFAULT_M) -> ActiveSet:
    """Members whose psi is within ``tol`` of the family minimum."""
    if not family:
        raise ValueError("empty family")
    return _select_active(family_values(p, family, ctrl, dyn, cost, m), tol)


@dataclass(frozen=True)
class EnvelopeDerivatives:
    """Active set and the (dt, grad) pair of every active member at one position."""

    active: ActiveSet
    members: tuple[PsiDerivatives, ...]

    def dderiv(self, f) -> float:
        f = np.asarray(f, dtype=float).reshape(-1)
        return min(d.dt + float(d.grad @ f) for d in self.members)


def envelope_derivatives(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics,
                         cost: CostFn, tol: float | None = None, m: int = DEFAULT_M) -> EnvelopeDerivatives:
    if not family:
        raise ValueError("empty family")
    auxes = _family_aux(p, family, ctrl, dyn, m)
    act = _select_active([float(cost.sigma(aux.y1)) for aux in auxes], tol)
    members = tuple(psi_derivatives(p, family[i], ctrl, dyn, cost, m, auxes[i]) for i in act.indices)
    return EnvelopeDerivatives(act, members)


def dderiv_value(p: Position, f, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                 tol: float | None = None, m: int = DEFAULT_M) -> float:
    """Order-alpha derivative of the value in direction ``f`` (envelope formula)."""
    env = envelope_derivatives(p, family, ctrl, dyn, cost, tol, m)
    if not env.members:
        raise ValueError("empty active set")
    return env.dderiv(f)


def hjb_residual(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                 tol: float | None = None, m: int = DEFAULT_M) -> float:
    """``min_u dderiv(f(t, w(t), u))``; zero when the envelope is the value functional."""
    env = envelope_derivatives(p, family, ctrl, dyn, cost, tol, m)
    wt = p.wt
    return min(env.dderiv(dyn.f(p.t, wt, u)) for u in ctrl.points)


@dataclass(frozen=True)
class EnvelopeMember:
    """A functional on positions with its order-alpha derivatives."""

    value: Callable[[Position], float]
    derivatives: Callable[[Position], tuple[float, np.ndarray]]


def envelope_dderiv_generic(members: Sequence[EnvelopeMember], p: Position, f, tol: float | None = None) -> float:
    """Directional derivative of ``min_l member_l`` at ``p`` in direction ``f``."""
    if not members:
        raise ValueError("empty family")
    f = np.asarray(f, dtype=float).reshape(-1)
    act = _select_active([mem.value(p) for mem in members], tol)
    best = np.inf
    for i in act.indices:
        dt, grad = members[i].derivatives(p)
        best = min(best, float(dt) + float(np.asarray(grad, dtype=float).reshape(-1) @ f))
    return best


# value by enumeration


def bruteforce_minimizer(p: Position, dyn: Dynamics, cost: CostFn, ctrl: ControlSet, m: int,
                         steps: int | None = None) -> tuple[float, PiecewiseControl]:
    """Best piecewise-constant control with ``m`` equal pieces, by enumeration."""
    if p.t >= p.T:
        return float(cost.sigma(p.wt)), None
    if len(ctrl) ** m > ENUMERATION_LIMIT:
        raise ValueError(f"{len(ctrl)}^{m} controls exceed the enumeration limit {ENUMERATION_LIMIT}")
    if steps is None:
        steps = 64 * m
    steps = max(steps, 8)
    best, best_u = np.inf, None
    for combo in itertools.product(range(len(ctrl)), repeat=m):
        u = PiecewiseControl.equal_pieces(p.t, p.T, ctrl.points[list(combo)])
        motion = solve_motion(p, u, dyn, steps)
        val = float(cost.sigma(motion.terminal))
        if val < best:
            best, best_u = val, u
    return best, best_u


def value_bruteforce(p: Position, dyn: Dynamics, cost: CostFn, ctrl: ControlSet, m: int,
                     steps: int | None = None) -> float:
    return bruteforce_minimizer(p, dyn, cost, ctrl, m, steps)[0]


# closed forms for the built-in example


def g_tail_integral(g: str, alpha: float, T: float, t: float) -> float:
    """``int_t^T |g(tau)| (T - tau)^(alpha-1) dtau`` via ``s = (T - tau)^alpha``."""
    if t >= T:
        return 0.0
    g_fn, _ = g_function(g)
    upper = (T - t) ** alpha
    val, _ = integrate.quad(lambda s: abs(g_fn(T - s ** (1.0 / alpha))), 0.0, upper,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val / alpha


def value_closed_form_example(p: Position, g: str = "one") -> float:
    """Value of the built-in example: ``-(|a(T)| + int_t^T |g| (T - tau)^(alpha-1))^2``."""
    g_function(g)
    aT = float(extension_a(p, p.T)[0])
    return -((abs(aT) + g_tail_integral(g, p.alpha, p.T, p.t)) ** 2)


def example_ci_derivatives(p: Position, g: str = "one") -> tuple[float, float]:
    """ci-derivatives of the example value at a point with ``a(T) != 0``."""
    if p.t >= p.T:
        raise ValueError("ci-derivatives need t < T")
    g_fn, _ = g_function(g)
    aT = float(extension_a(p, p.T)[0])
    if aT == 0.0:
        raise ValueError("the example value is not ci-differentiable where a(T) = 0")
    level = abs(aT) + g_tail_integral(g, p.alpha, p.T, p.t)
    denom = (p.T - p.t) ** (1.0 - p.alpha)
    dt = 2.0 * abs(g_fn(p.t)) / denom * level
    grad = -2.0 * np.sign(aT) / (gamma(p.alpha) * denom) * level
    return dt, grad


def example_directional_derivative(p: Position, f: float, g: str = "one") -> float:
    """Directional derivative of the example value, smooth or not."""
    g_fn, _ = g_function(g)
    aT = float(extension_a(p, p.T)[0])
    f = float(np.asarray(f).reshape(-1)[0])
    if aT != 0.0:
        dt, grad = example_ci_derivatives(p, g)
        return dt + grad * f
    gam = gamma(p.alpha)
    integral = g_tail_integral(g, p.alpha, p.T, p.t)
    return 2.0 * (gam * abs(g_fn(p.t)) - abs(f)) / (gam * (p.T - p.t) ** (1.0 - p.alpha)) * integral
