"""Fractional-calculus primitives and the position data model.

A function of class AC^alpha on [0, t] is stored by its initial value and
its Caputo derivative, which is taken piecewise constant on the cells of a
grid.  Sample ``k >= 1`` of a :class:`GridFn` holds the value on the cell
``(nodes[k-1], nodes[k]]``; sample 0 repeats sample 1 (or is zero for an
empty grid).  Under this convention every Riemann-Liouville integral of the
history is a finite sum of exact kernel moments.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .special import gamma

_SPAN_RTOL = 1e-12


@dataclass(frozen=True)
class ProblemConfig:
    alpha: float
    T: float
    n: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha out of (0,1): {self.alpha}")
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")


@dataclass(frozen=True, eq=False)
class GridFn:
    """Vector samples on the nodes ``0 = nodes[0] < ... < nodes[-1] = t_end``."""

    nodes: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if nodes.size == 0 or nodes[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if samples.shape[0] != nodes.size:
            raise ValueError(f"{samples.shape[0]} samples for {nodes.size} nodes")
        if not np.all(np.isfinite(samples)):
            raise ValueError("grid samples must be finite")
        nodes.setflags(write=False)
        samples.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "samples", samples)

    @classmethod
    def uniform(cls, step: float, samples) -> "GridFn":
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if not step > 0:
            raise ValueError("step must be positive")
        nodes = step * np.arange(samples.shape[0], dtype=float)
        return cls(nodes, samples)

    @classmethod
    def from_cells(cls, nodes, cells, dim: int) -> "GridFn":
        nodes = np.asarray(nodes, dtype=float)
        cells = np.asarray(cells, dtype=float).reshape(-1, dim)
        if cells.shape[0] == 0:
            first = np.zeros((1, dim))
        else:
            first = cells[:1]
        return cls(nodes, np.vstack([first, cells]))

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def cells(self) -> np.ndarray:
        return self.samples[1:]

    @property
    def step(self) -> float:
        if self.nodes.size < 2:
            return 0.0
        return float(np.max(np.diff(self.nodes)))

    @property
    def is_uniform(self) -> bool:
        if self.nodes.size < 2:
            return True
        h = self.nodes[1]
        expected = h * np.arange(self.nodes.size)
        return bool(np.allclose(self.nodes, expected, rtol=0.0, atol=_SPAN_RTOL * max(1.0, self.t_end)))


def kernel_moments(lo: np.ndarray, hi: np.ndarray, s: float, alpha: float) -> np.ndarray:
    """Weights ``(1/Gamma(alpha)) * int_lo^hi (s - xi)^(alpha-1) dxi`` for cells ending before ``s``."""
    upper = np.maximum(s - lo, 0.0)
    lower = np.maximum(s - hi, 0.0)
    return (upper**alpha - lower**alpha) / gamma(alpha + 1.0)


def kernel_moment_matrix(lo: np.ndarray, hi: np.ndarray, s: np.ndarray, alpha: float) -> np.ndarray:
    """Row ``i`` holds :func:`kernel_moments` at ``s[i]``; cells past ``s[i]`` are clipped."""
    s = np.asarray(s, dtype=float)[:, None]
    lo_c = np.minimum(lo[None, :], s)
    hi_c = np.minimum(hi[None, :], s)
    return ((s - lo_c) ** alpha - (s - hi_c) ** alpha) / gamma(alpha + 1.0)


def rl_integral(f: GridFn, alpha: float, tau: float) -> np.ndarray:
    """Riemann-Liouville integral of order ``alpha`` of ``f`` at ``tau``.

    ``f`` is read as piecewise constant on its cells; each cell contributes
    its value times the exact moment of the kernel over the cell.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha out of (0,1): {alpha}")
    if not (0.0 <= tau <= f.t_end * (1 + _SPAN_RTOL) + 1e-300):
        raise ValueError(f"tau={tau} outside the grid range [0, {f.t_end}]")
    if f.nodes.size < 2 or tau == 0.0:
        return np.zeros(f.dim)
    lo, hi = f.nodes[:-1], f.nodes[1:]
    keep = lo < tau
    w = kernel_moments(lo[keep], np.minimum(hi[keep], tau), tau, alpha)
    return w @ f.cells[keep]


@dataclass(frozen=True, eq=False)
class Position:
    """A time ``t`` and a motion history on [0, t].

    ``caputo`` carries the Caputo derivative of the history; the history
    itself is ``w(tau) = w0 + I^alpha[caputo](tau)``.
    """

    cfg: ProblemConfig
    t: float
    w0: np.ndarray
    caputo: GridFn

    def __post_init__(self):
        w0 = np.asarray(self.w0, dtype=float).reshape(-1)
        if w0.size != self.cfg.n:
            raise ValueError(f"w0 has dimension {w0.size}, expected {self.cfg.n}")
        if not np.all(np.isfinite(w0)):
            raise ValueError("w0 must be finite")
        if self.caputo.dim != self.cfg.n:
            raise ValueError("caputo history dimension mismatch")
        if not (0.0 <= self.t <= self.cfg.T * (1 + _SPAN_RTOL)):
            raise ValueError(f"t={self.t} outside [0, T={self.cfg.T}]")
        if abs(self.caputo.t_end - self.t) > _SPAN_RTOL * max(1.0, self.cfg.T):
            raise ValueError(f"history spans [0, {self.caputo.t_end}] but t={self.t}")
        w0.setflags(write=False)
        object.__setattr__(self, "w0", w0)
        object.__setattr__(self, "t", float(self.t))

    # constructors

    @classmethod
    def initial(cls, cfg: ProblemConfig, w0) -> "Position":
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        return cls(cfg, 0.0, w0, GridFn(np.zeros(1), np.zeros((1, cfg.n))))

    @classmethod
    def constant(cls, cfg: ProblemConfig, t: float, w0, steps: int = 64) -> "Position":
        """History ``w == w0`` on [0, t] (zero Caputo derivative)."""
        if t == 0.0:
            return cls.initial(cfg, w0)
        return cls.from_caputo(cfg, t, w0, np.zeros((steps, cfg.n)))

    @classmethod
    def from_caputo(cls, cfg: ProblemConfig, t: float, w0, cells) -> "Position":
        """Uniform history on [0, t] with the given per-cell Caputo values."""
        cells = np.asarray(cells, dtype=float).reshape(-1, cfg.n)
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        if t == 0.0:
            if cells.shape[0]:
                raise ValueError("t=0 needs an empty history")
            return cls.initial(cfg, w0)
        nodes = np.linspace(0.0, t, cells.shape[0] + 1)
        return cls(cfg, t, w0, GridFn.from_cells(nodes, cells, cfg.n))

    # derived quantities

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    @property
    def T(self) -> float:
        return self.cfg.T

    def w(self, tau: float) -> np.ndarray:
        """Value of the history at ``tau`` in [0, t]."""
        if tau > self.t * (1 + _SPAN_RTOL) + 1e-300:
            raise ValueError(f"tau={tau} beyond the history end t={self.t}")
        return self.w0 + rl_integral(self.caputo, self.alpha, min(tau, self.t))

    def w_at(self, taus: Sequence[float]) -> np.ndarray:
        """History values at many points (each clipped to [0, t])."""
        taus = np.minimum(np.asarray(taus, dtype=float), self.t)
        return self.w0 + self._history_integral(taus)

    def w_nodes(self) -> np.ndarray:
        return self.w_at(self.caputo.nodes)

    def _history_integral(self, taus: np.ndarray) -> np.ndarray:
        if self.caputo.nodes.size < 2:
            return np.zeros((taus.size, self.cfg.n))
        lo, hi = self.caputo.nodes[:-1], self.caputo.nodes[1:]
        W = kernel_moment_matrix(lo, hi, taus, self.alpha)
        return W @ self.caputo.cells

    @property
    def wt(self) -> np.ndarray:
        """w(t), the current state."""
        return self.w(self.t)

    def extend(self, new_nodes, new_cells) -> "Position":
        """History continued past ``t`` with given Caputo cells."""
        new_nodes = np.asarray(new_nodes, dtype=float).reshape(-1)
        new_cells = np.asarray(new_cells, dtype=float).reshape(-1, self.cfg.n)
        if new_nodes.size != new_cells.shape[0] or (new_nodes.size and new_nodes[0] <= self.t):
            raise ValueError("extension nodes must start after t, one per cell")
        nodes = np.concatenate([self.caputo.nodes, new_nodes])
        cells = np.vstack([self.caputo.cells, new_cells])
        t_new = float(nodes[-1]) if new_nodes.size else self.t
        return Position(self.cfg, t_new, self.w0, GridFn.from_cells(nodes, cells, self.cfg.n))

    def restrict(self, t_new: float) -> "Position":
        """Restriction of the history to [0, t_new]; ``t_new`` must be a node."""
        idx = int(np.searchsorted(self.caputo.nodes, t_new - _SPAN_RTOL * max(1.0, self.T)))
        if idx >= self.caputo.nodes.size or abs(self.caputo.nodes[idx] - t_new) > _SPAN_RTOL * max(1.0, self.T):
            raise ValueError(f"t={t_new} is not a node of the history grid")
        nodes = self.caputo.nodes[: idx + 1]
        cells = self.caputo.cells[:idx]
        return Position(self.cfg, float(nodes[-1]), self.w0, GridFn.from_cells(nodes, cells, self.cfg.n))

    # serialization

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "alpha": self.alpha,
            "T": self.T,
            "t": self.t,
            "w0": self.w0.tolist(),
            "step": self.caputo.step,
            "caputo": self.caputo.samples.tolist(),
        }
        if not self.caputo.is_uniform:
            out["nodes"] = self.caputo.nodes.tolist()
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any] | str) -> "Position":
        if isinstance(data, str):
            data = json.loads(data)
        w0 = np.atleast_1d(np.asarray(data["w0"], dtype=float))
        cfg = ProblemConfig(float(data["alpha"]), float(data["T"]), int(w0.size))
        samples = np.asarray(data["caputo"], dtype=float).reshape(-1, cfg.n)
        if "nodes" in data:
            nodes = np.asarray(data["nodes"], dtype=float)
        elif samples.shape[0] == 1:
            nodes = np.zeros(1)
        else:
            nodes = np.linspace(0.0, float(data["t"]), samples.shape[0])
            if abs(nodes[1] - float(data["step"])) > 1e-9 * max(1.0, cfg.T):
                raise ValueError("step inconsistent with t and the number of samples")
        return cls(cfg, float(data["t"]), w0, GridFn(nodes, samples))


def extension_a(p: Position, tau: float) -> np.ndarray:
    """Continuation of the history with zero Caputo derivative after ``t``.

    For ``tau <= t`` this is the history itself; both branches are the same
    finite sum of kernel moments, so the junction at ``tau = t`` is exact.
    """
    if tau < 0.0 or tau > p.T * (1 + _SPAN_RTOL):
        raise ValueError(f"tau={tau} outside [0, T={p.T}]")
    if p.caputo.nodes.size < 2:
        return p.w0.copy()
    lo, hi = p.caputo.nodes[:-1], p.caputo.nodes[1:]
    keep = lo < tau
    w = kernel_moments(lo[keep], np.minimum(hi[keep], tau), tau, p.alpha)
    return p.w0 + w @ p.caputo.cells[keep]


def extension_a_many(p: Position, taus) -> np.ndarray:
    """Vectorized :func:`extension_a` for points in [0, T]."""
    taus = np.asarray(taus, dtype=float).reshape(-1)
    if np.any(taus < 0.0) or np.any(taus > p.T * (1 + _SPAN_RTOL)):
        raise ValueError("evaluation points outside [0, T]")
    return p.w0 + p._history_integral(taus)


def extension_xf(p: Position, f, tau: float) -> np.ndarray:
    """Continuation of the history with constant Caputo derivative ``f`` after ``t``."""
    if p.t >= p.T:
        raise ValueError("constant-direction extension needs t < T")
    f = np.asarray(f, dtype=float).reshape(-1)
    base = extension_a(p, tau)
    if tau <= p.t:
        return base
    return base + (tau - p.t) ** p.alpha * f / gamma(p.alpha + 1.0)


def dist(p: Position, q: Position) -> float:
    """``|t - t'| + max_tau |w(min(tau, t)) - w'(min(tau, t'))|`` on the merged grid."""
    if p.cfg.n != q.cfg.n:
        raise ValueError("positions have different state dimensions")
    taus = np.union1d(np.union1d(p.caputo.nodes, q.caputo.nodes), [p.t, q.t, max(p.T, q.T)])
    diff = p.w_at(taus) - q.w_at(taus)
    return abs(p.t - q.t) + float(np.max(np.linalg.norm(diff, axis=1)))
