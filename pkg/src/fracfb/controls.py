"""Control sets, piecewise-constant open-loop controls and relaxed controls."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Finite grid of control points standing in for a compact set P."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.shape[0] == 0:
            raise ValueError("control set must not be empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("control set contains duplicate points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.points[i]

    @property
    def n_u(self) -> int:
        return self.points.shape[1]

    def index_of(self, u, tol: float = 1e-12) -> int:
        u = np.asarray(u, dtype=float).reshape(-1)
        d = np.max(np.abs(self.points - u), axis=1)
        i = int(np.argmin(d))
        if d[i] > tol:
            raise ValueError(f"control {u.tolist()} is not in the control set")
        return i

    def nearest(self, u) -> int:
        u = np.asarray(u, dtype=float).reshape(-1)
        return int(np.argmin(np.linalg.norm(self.points - u, axis=1)))

    def dirac(self, i: int) -> np.ndarray:
        w = np.zeros(len(self))
        w[i] = 1.0
        return w

    def check_weights(self, weights) -> np.ndarray:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if w.size != len(self):
            raise ValueError(f"{w.size} weights for a control set of size {len(self)}")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must be non-negative and sum to 1")
        return w


def _check_breaks(breaks: np.ndarray, lo: float, hi: float):
    if breaks.size < 2 or np.any(np.diff(breaks) <= 0.0):
        raise ValueError("breakpoints must be strictly increasing")
    if breaks[0] != lo or breaks[-1] != hi:
        raise ValueError(f"breakpoints must run from {lo} to {hi}")


@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """Control equal to ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if b.size < 2 or np.any(np.diff(b) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if v.shape[0] != b.size - 1:
            raise ValueError("one control value per piece is required")
        b.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, t: float, T: float, u) -> "PiecewiseControl":
        return cls(np.array([t, T]), np.atleast_2d(np.asarray(u, dtype=float)))

    @classmethod
    def equal_pieces(cls, t: float, T: float, values) -> "PiecewiseControl":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        return cls(np.linspace(t, T, values.shape[0] + 1), values)

    def validate(self, ctrl: ControlSet, t: float, T: float) -> None:
        _check_breaks(self.breakpoints, t, T)
        for v in self.values:
            ctrl.index_of(v)

    def piece_index(self, tau: float) -> int:
        i = int(np.searchsorted(self.breakpoints, tau, side="right")) - 1
        return min(max(i, 0), self.values.shape[0] - 1)

    def __call__(self, tau: float) -> np.ndarray:
        return self.values[self.piece_index(tau)]


@dataclass(frozen=True, eq=False)
class RelaxedControl:
    """Piecewise-constant-in-time probability weights over a :class:`ControlSet`.

    Piece ``i`` covers ``[bounds[i], bounds[i+1])`` and carries ``weights[i]``.
    """

    bounds: np.ndarray
    weights: np.ndarray
    origin: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        if b.size < 2 or np.any(np.diff(b) <= 0.0):
            raise ValueError("piece boundaries must be strictly increasing")
        if w.shape[0] != b.size - 1:
            raise ValueError("one weight vector per piece is required")
        if np.any(w < 0.0) or np.any(np.abs(w.sum(axis=1) - 1.0) > WEIGHT_SUM_TOL):
            raise ValueError("weights must be non-negative and sum to 1")
        b.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, lo: float, hi: float, weights) -> "RelaxedControl":
        return cls(np.array([lo, hi]), np.asarray(weights, dtype=float).reshape(1, -1))

    @classmethod
    def dirac(cls, ctrl: ControlSet, i: int, lo: float = 0.0, hi: float = 1.0) -> "RelaxedControl":
        return cls.constant(lo, hi, ctrl.dirac(i))

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.bounds[0]), float(self.bounds[-1])

    @property
    def size(self) -> int:
        return self.weights.shape[1]

    def piece_index(self, tau: float) -> int:
        i = int(np.searchsorted(self.bounds, tau, side="right")) - 1
        return min(max(i, 0), self.weights.shape[0] - 1)

    def at(self, tau: float) -> np.ndarray:
        return self.weights[self.piece_index(tau)]

    def on_cell(self, lo: float, hi: float) -> np.ndarray:
        """Weights on the cell ``(lo, hi]``; cells are assumed not to straddle a boundary."""
        return self.at(0.5 * (lo + hi))

    def to_json(self) -> dict[str, Any]:
        return {
            "interval": [float(self.bounds[0]), float(self.bounds[-1])],
            "pieces": [
                {"until": float(u), "weights": w.tolist()}
                for u, w in zip(self.bounds[1:], self.weights)
            ],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "RelaxedControl":
        lo, hi = (float(x) for x in data["interval"])
        pieces = data["pieces"]
        bounds = [lo] + [float(p["until"]) for p in pieces]
        if bounds[-1] != hi:
            raise ValueError("last piece must end at the interval end")
        return cls(np.array(bounds), np.array([p["weights"] for p in pieces], dtype=float))


def lift_ordinary(u: PiecewiseControl, ctrl: ControlSet) -> RelaxedControl:
    """Dirac-measure relaxed control matching ``u`` piece by piece."""
    weights = np.array([ctrl.dirac(ctrl.index_of(v)) for v in u.values])
    return RelaxedControl(u.breakpoints.copy(), weights)


def time_change_pi(mu: RelaxedControl, t: float, T: float) -> RelaxedControl:
    """Map a relaxed control on [t, T] to [0, 1] via ``theta = (tau - t) / (T - t)``."""
    if not t < T:
        raise ValueError(f"degenerate interval [{t}, {T}]")
    if mu.interval != (t, T):
        raise ValueError(f"relaxed control lives on {mu.interval}, expected ({t}, {T})")
    theta = (mu.bounds - t) / (T - t)
    theta[0], theta[-1] = 0.0, 1.0
    return RelaxedControl(theta, mu.weights.copy(), origin=(t, T, mu.bounds.copy()))


def time_change_pi_inverse(nu: RelaxedControl, t: float, T: float) -> RelaxedControl:
    """Inverse of :func:`time_change_pi`; exact on controls produced by it."""
    if not t < T:
        raise ValueError(f"degenerate interval [{t}, {T}]")
    if nu.interval != (0.0, 1.0):
        raise ValueError("expected a relaxed control on [0, 1]")
    if nu.origin is not None and nu.origin[0] == t and nu.origin[1] == T:
        bounds = nu.origin[2].copy()
    else:
        bounds = t + nu.bounds * (T - t)
        bounds[0], bounds[-1] = t, T
    return RelaxedControl(bounds, nu.weights.copy())


def equal_piece_relaxed(weights: Sequence, lo: float = 0.0, hi: float = 1.0) -> RelaxedControl:
    weights = np.asarray(weights, dtype=float)
    return RelaxedControl(np.linspace(lo, hi, weights.shape[0] + 1), weights)
