"""Acceptance suite shared by ``fracfb selftest`` and the test-suite.

Every criterion is a function returning a :class:`CriterionResult`; none
of them raise on a numerical miss, so a failing build reports all misses.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .controls import PiecewiseControl, RelaxedControl, equal_piece_relaxed, time_change_pi_inverse
from .core import Position, extension_a
from .dynamics import coupled_problem, example_problem, solve_motion, solve_motion_relaxed
from .envelope import (
    CandidateFamily,
    EnvelopeMember,
    dderiv_value,
    envelope_dderiv_generic,
    example_ci_derivatives,
    hjb_residual,
    value_bruteforce,
    value_closed_form_example,
)
from .feedback import strategy_envelope, strategy_example, sweep_partitions
from .relaxed import solve_auxiliary_y
from .sensitivity import fd_directional_psi, psi_derivatives, solve_linear_volterra, solve_sensitivity
from .special import gamma, mittag_leffler

SQRT_PI = math.sqrt(math.pi)
ROUNDOFF_FLOOR = 1e-12
EPS_BAND = 0.2
EPS_FLOOR = 1e-9
LATTICE = [(t, w0) for t in (0.0, 0.25, 0.5) for w0 in (-1.0, 0.0, 1.0)]


@dataclass(frozen=True)
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, title: str, budget: float | None, body: Callable[[], tuple[bool, str]]) -> CriterionResult:
    start = time.perf_counter()
    try:
        ok, detail = body()
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed > budget:
        ok, detail = False, f"{detail}; runtime {elapsed:.1f}s exceeds {budget:.0f}s"
    return CriterionResult(number, title, ok, detail, elapsed)


def _example_start(t: float, w0: float, g: str = "one"):
    ex = example_problem(0.5, 1.0, g)
    return ex, Position.constant(ex.cfg, t, w0)


def criterion_1() -> CriterionResult:
    def body():
        ex, p = _example_start(0.0, 0.0)
        u = PiecewiseControl.constant(0.0, 1.0, [1.0])
        errs = []
        for steps in (256, 512, 1024, 2048):
            motion = solve_motion(p, u, ex.dyn, steps)
            nodes = motion.path.caputo.nodes
            errs.append(float(np.max(np.abs(motion.states.samples[:, 0] - 2.0 * np.sqrt(nodes)))))
        ratios_ok = all(b <= ROUNDOFF_FLOOR or a / b >= 1.3 for a, b in zip(errs, errs[1:]))
        ok = errs[-1] <= 5e-3 and ratios_ok
        return ok, "errors " + ", ".join(f"{e:.2e}" for e in errs)

    return _timed(1, "motion solver vs 2*sqrt(tau)", 5.0, body)


def criterion_2() -> CriterionResult:
    def body():
        ex, p = _example_start(0.0, 0.0)
        sens = solve_sensitivity(p, RelaxedControl.dirac(ex.ctrl, 2), ex.ctrl, ex.dyn, 2048)
        z1, Z1 = float(sens.z1[0]), float(sens.Z1[0, 0])
        ok = abs(z1 + 1.0) <= 1e-2 and abs(Z1 - 1.0 / SQRT_PI) <= 1e-3
        parts = [f"z(1)={z1:.6f}", f"Z(1)={Z1:.6f}"]
        for a0 in (-1.0, 0.5):
            _, Zr = solve_linear_volterra(0.5, 1.0, 2048, [[a0]], [0.0])
            exact = mittag_leffler(0.5, 0.5, a0)
            ok &= abs(float(Zr[0, 0]) - exact) <= 1e-2
            parts.append(f"resolvent({a0})={float(Zr[0, 0]):.6f} vs {exact:.6f}")
        return ok, ", ".join(parts)

    return _timed(2, "sensitivity endpoints", 10.0, body)


def fd_cases(seed: int = 7) -> list[tuple]:
    """(problem, position, relaxed control, direction) tuples on a lattice with random histories."""
    rng = np.random.default_rng(seed)
    cases = []
    for g in ("one", "cos", "poly"):
        ex = example_problem(0.5, 1.0, g)
        for t in (0.0, 0.4, 0.8):
            cells = rng.normal(0.0, 1.0, (16, 1)) if t else np.zeros((0, 1))
            p = Position.from_caputo(ex.cfg, t, rng.uniform(-1, 1), cells)
            weights = rng.dirichlet(np.ones(3))
            nu = RelaxedControl.constant(0.0, 1.0, weights) if t != 0.4 else equal_piece_relaxed(
                [[0.0, 0.0, 1.0], weights, [1.0, 0.0, 0.0]])
            cases.append((ex, p, nu, np.array([rng.uniform(-2, 2)])))
    for alpha in (0.3, 0.5, 0.7):
        pr = coupled_problem(alpha, 1.0)
        for t in (0.0, 0.3, 0.6):
            cells = rng.normal(0.0, 0.5, (16, 2)) if t else np.zeros((0, 2))
            p = Position.from_caputo(pr.cfg, t, rng.uniform(-1, 1, 2), cells)
            nu = equal_piece_relaxed([rng.dirichlet(np.ones(3)) for _ in range(3)])
            cases.append((pr, p, nu, rng.uniform(-1.5, 1.5, 2)))
    for alpha in (0.5, 0.9):
        ex = example_problem(alpha, 2.0, "cos")
        p = Position.from_caputo(ex.cfg, 0.5, 0.3, rng.normal(0.0, 1.0, (8, 1)))
        cases.append((ex, p, RelaxedControl.dirac(ex.ctrl, 0), np.array([1.0])))
        cases.append((ex, p, RelaxedControl.constant(0.0, 1.0, [0.25, 0.5, 0.25]), np.array([-0.7])))
    return cases


def criterion_3(m: int = 1024) -> CriterionResult:
    def body():
        worst, n_cases, fails = 0.0, 0, 0
        for pr, p, nu, f in fd_cases():
            d = psi_derivatives(p, nu, pr.ctrl, pr.dyn, pr.cost, m)
            formula = d.dt + float(d.grad @ f)
            fd = fd_directional_psi(p, nu, pr.ctrl, pr.dyn, pr.cost, f, 1e-3 * (p.T - p.t), m)
            scale = 1.0 + abs(d.dt) + float(np.linalg.norm(d.grad)) * float(np.linalg.norm(f))
            gap = abs(formula - fd) / scale
            worst = max(worst, gap)
            fails += gap > 0.02
            n_cases += 1
        return fails == 0 and n_cases >= 20, f"{n_cases} cases, worst relative gap {worst:.2e}"

    return _timed(3, "directional derivative vs finite differences", 60.0, body)


def smooth_positions() -> list[tuple[str, Position]]:
    ex = example_problem()
    rng = np.random.default_rng(3)
    out = [
        ("one", Position.initial(ex.cfg, 0.5)),
        ("one", Position.initial(ex.cfg, -1.0)),
        ("one", Position.constant(ex.cfg, 0.25, 1.0)),
        ("one", Position.constant(ex.cfg, 0.5, -0.5)),
        ("cos", Position.from_caputo(ex.cfg, 0.3, 0.4, rng.uniform(0.0, 1.0, (12, 1)))),
    ]
    return out


def criterion_4(m: int = 1024) -> CriterionResult:
    def body():
        ex, p0 = _example_start(0.0, 0.0)
        fam = CandidateFamily.constants(ex.ctrl)
        worst = 0.0
        for f in (0.0, 1.0, SQRT_PI, 2.0):
            got = dderiv_value(p0, [f], fam, ex.ctrl, ex.dyn, ex.cost, m=m)
            worst = max(worst, abs(got - 4.0 * (1.0 - f / SQRT_PI)))
        smooth = 0.0
        for g, p in smooth_positions():
            exg = example_problem(0.5, 1.0, g)
            aT = float(extension_a(p, p.T)[0])
            if abs(aT) < 0.1:
                return False, f"test position has |a(T)|={abs(aT):.3f} < 0.1"
            dt, grad = example_ci_derivatives(p, g)
            for f in (-1.0, 0.5, SQRT_PI):
                got = dderiv_value(p, [f], fam, exg.ctrl, exg.dyn, exg.cost, m=m)
                smooth = max(smooth, abs(got - (dt + grad * f)))
        return worst <= 5e-2 and smooth <= 5e-2, f"max error at origin {worst:.2e}, at smooth points {smooth:.2e}"

    return _timed(4, "envelope formula on the closed-form example", None, body)


def criterion_5(m: int = 1024) -> CriterionResult:
    def body():
        ex = example_problem()
        fam = CandidateFamily.constants(ex.ctrl)
        res = [hjb_residual(Position.constant(ex.cfg, t, w0), fam, ex.ctrl, ex.dyn, ex.cost, m=m) for t, w0 in LATTICE]
        worst = max(abs(r) for r in res)
        return worst <= 5e-2, f"max |residual| {worst:.2e} over {len(res)} positions"

    return _timed(5, "non-smooth HJB equality", None, body)


def criterion_6() -> CriterionResult:
    def body():
        ex = example_problem()
        worst = 0.0
        for t, w0 in LATTICE:
            p = Position.constant(ex.cfg, t, w0)
            worst = max(worst, abs(value_bruteforce(p, ex.dyn, ex.cost, ex.ctrl, 4) - value_closed_form_example(p)))
        return worst <= 5e-2, f"max gap {worst:.2e}"

    return _timed(6, "brute-force value vs closed form", 60.0, body)


def eps_trend_ok(eps: list[float], final_max: float = 0.05) -> bool:
    """Non-increasing within the relative noise band (plus a roundoff floor) and small at the end."""
    steady = all(b <= (1.0 + EPS_BAND) * max(a, 0.0) + EPS_FLOOR for a, b in zip(eps, eps[1:]))
    return steady and eps[-1] <= final_max


def criterion_7(strategy_m: int = 128) -> CriterionResult:
    def body():
        ex = example_problem()
        fam = CandidateFamily.constants(ex.ctrl)
        diams = [1 / 16, 1 / 64, 1 / 256]
        ok, worst_final, mismatches, compared = True, 0.0, 0, 0
        U_ex = strategy_example("one", ex.ctrl)
        U_env = strategy_envelope(fam, ex.dyn, ex.cost, ex.ctrl, m=strategy_m)
        for w0 in (-1.0, -0.5, 0.0, 0.5, 1.0):
            p = Position.initial(ex.cfg, w0)
            rho = value_closed_form_example(p)
            for U in (U_ex, U_env):
                reports = sweep_partitions(p, U, ex.dyn, ex.cost, ex.ctrl, diams, rho=rho)
                eps = [r.epsilon for r in reports]
                ok &= eps_trend_ok(eps)
                worst_final = max(worst_final, eps[-1])
                if U is U_env:
                    for rep in reports:
                        for j, tau in enumerate(rep.partition.times[:-1]):
                            pos = rep.motion.path.restrict(float(tau))
                            if abs(float(extension_a(pos, pos.T)[0])) > 0.1:
                                compared += 1
                                mismatches += not np.array_equal(U_ex(pos), rep.controls[j])
        ok &= mismatches == 0
        return ok, f"worst final eps {worst_final:.2e}; {mismatches} control mismatches in {compared} smooth nodes"

    return _timed(7, "feedback eps-optimality sweep", 120.0, body)


def criterion_8(seed: int = 11) -> CriterionResult:
    def body():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for i in range(10):
            pr = example_problem(float(rng.uniform(0.3, 0.9)), 1.0, ("one", "cos", "poly")[i % 3]) if i % 2 == 0 \
                else coupled_problem(float(rng.uniform(0.3, 0.9)), 1.0)
            n = pr.cfg.n
            t = float(rng.uniform(0.0, 0.7))
            p = Position.from_caputo(pr.cfg, t, rng.uniform(-1, 1, n), rng.normal(0.0, 0.5, (10, n)))
            nu = equal_piece_relaxed([rng.dirichlet(np.ones(3)) for _ in range(int(rng.integers(1, 5)))])
            aux = solve_auxiliary_y(p, nu, pr.ctrl, pr.dyn, steps=1024)
            motion = solve_motion_relaxed(p, time_change_pi_inverse(nu, p.t, p.T), pr.ctrl, pr.dyn, 1024)
            xs = np.array([motion.x(tau) for tau in aux.taus()])
            worst = max(worst, float(np.max(np.abs(aux.y - xs))))
        return worst <= 1e-2, f"max |y - x| {worst:.2e} over 10 pairs"

    return _timed(8, "time-change consistency", None, body)


def tied_members() -> list[EnvelopeMember]:
    """Two functionals k*a(T|t,w) + t (k = 2, -1) that tie wherever a(T) = 0."""

    def member(k: float) -> EnvelopeMember:
        def value(p: Position) -> float:
            return k * float(extension_a(p, p.T)[0]) + p.t

        def derivatives(p: Position):
            return 1.0, np.array([k / (gamma(p.alpha) * (p.T - p.t) ** (1.0 - p.alpha))])

        return EnvelopeMember(value, derivatives)

    return [member(2.0), member(-1.0)]


def criterion_9() -> CriterionResult:
    def body():
        ex = example_problem()
        members = tied_members()
        worst = 0.0
        for t in (0.0, 0.3, 0.6):
            p = Position.constant(ex.cfg, t, 0.0)
            delta = 1e-3 * (p.T - p.t)
            for f in (-2.0, -0.5, 0.0, 0.7, 1.5):
                formula = envelope_dderiv_generic(members, p, [f])
                moved = p.extend([p.t + delta], [[f]])
                fd = (min(mb.value(moved) for mb in members) - min(mb.value(p) for mb in members)) / delta
                worst = max(worst, abs(formula - fd) / max(1.0, abs(formula)))
        return worst <= 0.02, f"worst relative gap {worst:.2e}"

    return _timed(9, "generic envelope theorem on a tied pair", None, body)


def criterion_10() -> CriterionResult:
    def body():
        g = gamma(0.5)
        e1 = mittag_leffler(1.0, 1.0, 1.0)
        e2 = mittag_leffler(0.5, 1.0, 1.0)
        ok = abs(g - SQRT_PI) <= 5e-13 * SQRT_PI and abs(e1 - math.e) <= 5e-11 * math.e and abs(e2 - 5.0089800) <= 1e-6
        return ok, f"Gamma(0.5)={g:.15f}, E_1,1(1)={e1:.12f}, E_0.5,1(1)={e2:.9f}"

    return _timed(10, "special functions", None, body)


CRITERIA: dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_all(selected=None, report: Callable[[str], None] | None = print) -> list[CriterionResult]:
    results = []
    for number in sorted(selected or CRITERIA):
        res = CRITERIA[number]()
        if report is not None:
            report(res.line())
        results.append(res)
    return results
