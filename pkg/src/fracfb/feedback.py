"""Positional strategies and the sampled feedback procedure.

At every partition node the strategy sees the current position (the
history of the motion so far), picks a control point, and the control is
held until the next node.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .controls import ControlSet
from .core import GridFn, Position, extension_a
from .dynamics import CostFn, Dynamics, Motion, g_function, hamiltonian_argmin, march
from .envelope import CandidateFamily, envelope_derivatives

TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Partition:
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size < 2 or np.any(np.diff(times) <= 0.0):
            raise ValueError("partition times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(cls, t: float, T: float, diam: float) -> "Partition":
        if not diam > 0:
            raise ValueError("diameter must be positive")
        k = max(1, math.ceil((T - t) / diam - 1e-9))
        return cls(np.linspace(t, T, k + 1))

    @property
    def k(self) -> int:
        return self.times.size - 1

    @property
    def diam(self) -> float:
        return float(np.max(np.diff(self.times)))

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.times, np.linspace(self.times[0], self.times[-1], self.times.size),
                                rtol=0.0, atol=1e-12 * max(1.0, abs(self.times[-1]))))


@dataclass(frozen=True)
class Strategy:
    """Map from positions to control points."""

    name: str
    rule: Callable[[Position], np.ndarray]

    def __call__(self, p: Position) -> np.ndarray:
        return np.asarray(self.rule(p), dtype=float).reshape(-1)


@dataclass(eq=False)
class SimReport:
    strategy: str
    partition: Partition
    controls: np.ndarray
    motion: Motion
    cost: float
    u_final: np.ndarray
    rho: float | None = None
    wall_time_ms: float = 0.0

    @property
    def epsilon(self) -> float | None:
        return None if self.rho is None else self.cost - self.rho

    def control_at(self, tau: float) -> np.ndarray:
        if tau >= self.partition.times[-1]:
            return self.u_final
        j = int(np.searchsorted(self.partition.times, tau, side="right")) - 1
        return self.controls[max(j, 0)]

    def to_json(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "partition": self.partition.times.tolist(),
            "controls": self.controls.tolist(),
            "u_final": self.u_final.tolist(),
            "start": self.motion.start.to_json(),
            "path": self.motion.path.to_json() | {"nodes": self.motion.path.caputo.nodes.tolist()},
            "states": self.motion.states.samples.tolist(),
            "cost": self.cost,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "SimReport":
        start = Position.from_json(data["start"])
        path = Position.from_json(data["path"])
        states = GridFn(path.caputo.nodes, np.asarray(data["states"], dtype=float))
        motion = Motion(path, states, start, None)
        return cls(
            strategy=data["strategy"],
            partition=Partition(np.asarray(data["partition"], dtype=float)),
            controls=np.asarray(data["controls"], dtype=float),
            motion=motion,
            cost=float(data["cost"]),
            u_final=np.asarray(data["u_final"], dtype=float),
            rho=None if data.get("rho") is None else float(data["rho"]),
            wall_time_ms=float(data.get("wall_time_ms", 0.0)),
        )


def run_feedback(p: Position, U: Strategy, Delta: Partition, dyn: Dynamics, cost: CostFn, ctrl: ControlSet,
                 steps_per_piece: int = 8, u_final=None, rho: float | None = None) -> SimReport:
    """Recursive feedback procedure from ``p`` on the partition ``Delta``."""
    if abs(Delta.times[0] - p.t) > 1e-12 * max(1.0, p.T) or abs(Delta.times[-1] - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError("partition must run from t to T")
    if steps_per_piece < 1:
        raise ValueError("steps_per_piece must be positive")
    started = time.perf_counter()
    k = Delta.k
    if Delta.is_uniform():
        grid = np.linspace(p.t, p.T, k * steps_per_piece + 1)
        pieces = [grid[j * steps_per_piece:(j + 1) * steps_per_piece + 1] for j in range(k)]
    else:
        pieces = [np.linspace(Delta.times[j], Delta.times[j + 1], steps_per_piece + 1) for j in range(k)]
        for j in range(1, k):
            pieces[j][0] = pieces[j - 1][-1]

    current = p
    controls = np.empty((k, ctrl.n_u))
    new_states = []
    for j in range(k):
        u = U(current)
        ctrl.index_of(u)
        controls[j] = u
        u_fixed = controls[j].copy()

        def rhs(lo, hi, x, u_fixed=u_fixed):
            return dyn.f(hi, x, u_fixed)

        current, states = march(current, pieces[j], rhs, dyn.lipschitz)
        new_states.append(states)

    states = np.vstack([p.w_nodes()] + new_states)
    motion = Motion(current, GridFn(current.caputo.nodes, states), p, None)
    cost_val = float(cost.sigma(motion.terminal))
    u_last = ctrl.points[0].copy() if u_final is None else np.asarray(u_final, dtype=float).reshape(-1)
    elapsed = 1000.0 * (time.perf_counter() - started)
    return SimReport(U.name, Delta, controls, motion, cost_val, u_last, rho, elapsed)


# strategies


def strategy_constant(u, name: str | None = None) -> Strategy:
    u = np.asarray(u, dtype=float).reshape(-1)
    return Strategy(name or f"constant{u.tolist()}", lambda p: u)


def strategy_example(g: str, ctrl: ControlSet, zero_tol: float = 1e-9) -> Strategy:
    """Closed-form optimal rule of the built-in example, snapped to the control grid."""
    g_fn, _ = g_function(g)

    def rule(p: Position) -> np.ndarray:
        aT = float(extension_a(p, p.T)[0])
        sg = float(np.sign(g_fn(p.t)))
        if abs(aT) <= zero_tol * (1.0 + abs(float(p.w0[0]))):
            target = 1.0
        elif aT > 0:
            target = sg
        else:
            target = -sg
        return ctrl.points[ctrl.nearest([target])]

    return Strategy(f"example:{g}", rule)


def strategy_smooth(grad_provider: Callable[[Position], np.ndarray], dyn: Dynamics, ctrl: ControlSet) -> Strategy:
    """``argmin_u <grad(t, w), f(t, w(t), u)>`` with the lowest index on ties."""

    def rule(p: Position) -> np.ndarray:
        i, _ = hamiltonian_argmin(dyn, ctrl, p.t, p.wt, grad_provider(p))
        return ctrl.points[i]

    return Strategy("smooth", rule)


def envelope_choice(p: Position, family: CandidateFamily, ctrl: ControlSet, dyn: Dynamics, cost: CostFn,
                    tol: float | None = None, m: int = 256) -> tuple[int, list[float]]:
    env = envelope_derivatives(p, family, ctrl, dyn, cost, tol, m)
    wt = p.wt
    vals = [env.dderiv(dyn.f(p.t, wt, u)) for u in ctrl.points]
    lowest = min(vals)
    slack = TIE_RTOL * (1.0 + abs(lowest))
    i = next(i for i, v in enumerate(vals) if v <= lowest + slack)
    return i, vals


def strategy_envelope(family: CandidateFamily, dyn: Dynamics, cost: CostFn, ctrl: ControlSet,
                      tol: float | None = None, m: int = 256) -> Strategy:
    """Minimize the envelope directional derivative over the control grid."""

    def rule(p: Position) -> np.ndarray:
        return ctrl.points[envelope_choice(p, family, ctrl, dyn, cost, tol, m)[0]]

    return Strategy("envelope", rule)


def epsilon_check(report: SimReport, rho: float, eps: float) -> bool:
    if not math.isfinite(rho):
        raise ValueError("rho must be finite")
    return report.cost <= rho + eps


def sweep_partitions(p: Position, U: Strategy, dyn: Dynamics, cost: CostFn, ctrl: ControlSet,
                     diam_list: Sequence[float], rho: float | None = None,
                     steps_per_piece: int = 8) -> list[SimReport]:
    diams = [float(d) for d in diam_list]
    if not diams or any(d <= 0 for d in diams):
        raise ValueError("diameters must be positive")
    if any(b >= a for a, b in zip(diams, diams[1:])):
        raise ValueError("diameters must be decreasing")
    return [run_feedback(p, U, Partition.uniform(p.t, p.T, d), dyn, cost, ctrl, steps_per_piece, rho=rho)
            for d in diams]


SWEEP_COLUMNS = ("diam", "cost", "rho", "epsilon", "k", "wall_time_ms")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.12g}"


def sweep_csv(rows: Sequence[tuple[float, SimReport]], extra: Sequence[str] = ()) -> str:
    """CSV text with one row per (diameter, report)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(extra) + list(SWEEP_COLUMNS))
    for item in rows:
        *labels, diam, rep = item
        writer.writerow([str(x) for x in labels] + [
            _fmt(diam), _fmt(rep.cost), _fmt(rep.rho), _fmt(rep.epsilon), rep.partition.k, f"{rep.wall_time_ms:.3f}",
        ])
    return buf.getvalue()
