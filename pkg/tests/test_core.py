import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracfb.core import (
    GridFn,
    Position,
    ProblemConfig,
    dist,
    extension_a,
    extension_a_many,
    extension_xf,
    kernel_moments,
    rl_integral,
)
from fracfb.special import gamma

CFG = ProblemConfig(0.5, 1.0, 1)


def cells_grid(fn, t_end, steps):
    """Right-endpoint cell values of ``fn`` on a uniform grid of [0, t_end]."""
    nodes = np.linspace(0.0, t_end, steps + 1)
    return GridFn.from_cells(nodes, fn(nodes[1:]).reshape(-1, 1), 1)


@pytest.mark.parametrize("alpha, T, n", [(0.0, 1.0, 1), (1.0, 1.0, 1), (1.5, 1.0, 1), (0.5, 0.0, 1), (0.5, 1.0, 0)])
def test_problem_config_rejects(alpha, T, n):
    with pytest.raises(ValueError):
        ProblemConfig(alpha, T, n)


def test_alpha_message():
    with pytest.raises(ValueError, match=r"alpha out of \(0,1\)"):
        ProblemConfig(1.5, 1.0)


@pytest.mark.parametrize("nodes, samples", [
    ([0.0, 0.5, 0.4], [1.0, 1.0, 1.0]),
    ([0.1, 0.5], [1.0, 1.0]),
    ([0.0, 0.5], [1.0, np.nan]),
    ([0.0, 0.5], [1.0]),
])
def test_gridfn_invariants(nodes, samples):
    with pytest.raises(ValueError):
        GridFn(nodes, samples)


def test_gridfn_uniform_spans_exactly():
    g = GridFn.uniform(0.25, np.ones(5))
    assert g.t_end == 1.0 and g.is_uniform
    np.testing.assert_allclose(g.step, 0.25)


def test_kernel_moments_match_quadrature():
    from scipy import integrate

    lo, hi, s, a = np.array([0.1, 0.4]), np.array([0.4, 0.7]), 0.7, 0.35
    exact = [integrate.quad(lambda x: (s - x) ** (a - 1), l, h)[0] / gamma(a) for l, h in zip(lo, hi)]
    np.testing.assert_allclose(kernel_moments(lo, hi, s, a), exact, rtol=1e-8)


def test_rl_integral_of_zero():
    assert np.all(rl_integral(cells_grid(np.zeros_like, 1.0, 16), 0.5, 0.7) == 0.0)


@pytest.mark.parametrize("steps", [1, 7, 64])
def test_rl_integral_of_one(steps):
    np.testing.assert_allclose(rl_integral(cells_grid(np.ones_like, 1.0, steps), 0.5, 1.0), 1.1283792, rtol=1e-7)


def test_rl_integral_of_identity():
    np.testing.assert_allclose(rl_integral(cells_grid(lambda x: x, 1.0, 4096), 0.5, 1.0), 0.7522528, atol=1e-3)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_rl_integral_order(alpha):
    exact = gamma(2.0) / gamma(alpha + 2.0)
    errs = [abs(rl_integral(cells_grid(lambda x: x, 1.0, m), alpha, 1.0)[0] - exact) for m in (128, 256, 512, 1024)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.9 * min(1.0, 2 * alpha))


def test_rl_integral_outside_grid():
    with pytest.raises(ValueError):
        rl_integral(cells_grid(np.ones_like, 0.5, 8), 0.5, 0.6)


def test_semigroup_spot_check():
    # I^(1-a) I^a cos = I^1 cos = sin
    alpha = 0.4
    errs = []
    for m in (128, 512):
        nodes = np.linspace(0.0, 1.0, m + 1)
        f = cells_grid(np.cos, 1.0, m)
        inner = np.array([rl_integral(f, alpha, s)[0] for s in nodes[1:]])
        g = GridFn.from_cells(nodes, inner.reshape(-1, 1), 1)
        errs.append(abs(rl_integral(g, 1.0 - alpha, 1.0)[0] - math.sin(1.0)))
    assert errs[1] < errs[0] and errs[1] < 5e-3


def test_extension_a_empty_history():
    p = Position.initial(CFG, 0.3)
    for tau in (0.0, 0.5, 1.0):
        np.testing.assert_array_equal(extension_a(p, tau), [0.3])


@pytest.mark.parametrize("t, c, tau", [(0.3, 1.0, 0.8), (0.5, -2.0, 1.0), (0.9, 0.7, 0.95)])
def test_extension_a_constant_history(t, c, tau):
    p = Position.from_caputo(CFG, t, 0.2, np.full((10, 1), c))
    expected = 0.2 + c * (tau**0.5 - (tau - t) ** 0.5) / gamma(1.5)
    np.testing.assert_allclose(extension_a(p, tau), [expected], rtol=1e-13)


def test_extension_a_restricts_and_is_continuous(rng):
    p = Position.from_caputo(CFG, 0.6, 0.1, rng.normal(size=(12, 1)))
    for tau in (0.1, 0.35, 0.6):
        np.testing.assert_allclose(extension_a(p, tau), p.w(tau), rtol=1e-13, atol=1e-15)
    # Hoelder-alpha continuity across t: gap shrinks like h^alpha
    gaps = [abs(extension_a(p, 0.6 + h) - p.wt)[0] for h in (1e-8, 1e-12)]
    assert gaps[1] < 1e-5 and gaps[1] < gaps[0]
    np.testing.assert_allclose(extension_a_many(p, [0.2, 0.9]), [extension_a(p, 0.2), extension_a(p, 0.9)], rtol=1e-13)


def test_extension_a_beyond_T():
    with pytest.raises(ValueError):
        extension_a(Position.initial(CFG, 0.0), 1.5)


def test_extension_xf_cases(rng):
    p = Position.from_caputo(CFG, 0.4, 0.0, rng.normal(size=(8, 1)))
    for tau in (0.2, 0.4, 0.7, 1.0):
        np.testing.assert_array_equal(extension_xf(p, [0.0], tau), extension_a(p, tau))
    np.testing.assert_allclose(extension_xf(p, [3.0], 0.4), p.wt, rtol=1e-13)
    np.testing.assert_allclose(extension_xf(Position.initial(CFG, 0.0), [1.0], 1.0), [1.1283792], rtol=1e-7)


def test_extension_xf_at_horizon():
    p = Position.from_caputo(CFG, 1.0, 0.0, np.zeros((4, 1)))
    with pytest.raises(ValueError):
        extension_xf(p, [1.0], 1.0)


def test_extension_xf_has_constant_caputo_derivative(rng):
    # a history continued by Caputo cells equal to f reproduces x^(f)
    p = Position.from_caputo(CFG, 0.3, 0.5, rng.normal(size=(6, 1)))
    f = 1.7
    q = p.extend(np.linspace(0.3, 0.9, 7)[1:], np.full((6, 1), f))
    for tau in (0.35, 0.6, 0.9):
        np.testing.assert_allclose(q.w(tau), extension_xf(p, [f], tau), rtol=1e-12)


def test_dist_examples():
    p = Position.constant(CFG, 0.2, 1.0)
    q = Position.constant(CFG, 0.4, 1.0)
    assert dist(p, p) == 0.0
    np.testing.assert_allclose(dist(p, q), 0.2, rtol=1e-12)
    shifted = Position.constant(CFG, 0.2, 1.3)
    assert dist(p, shifted) >= 0.3 - 1e-12


def test_dist_dimension_mismatch():
    with pytest.raises(ValueError):
        dist(Position.initial(CFG, 0.0), Position.initial(ProblemConfig(0.5, 1.0, 2), [0.0, 0.0]))


positions = st.builds(
    lambda t, w0, cells: Position.from_caputo(CFG, t, w0, np.asarray(cells).reshape(-1, 1) if t else np.zeros((0, 1))),
    st.sampled_from([0.0, 0.25, 0.5, 0.75]),
    st.floats(-2, 2),
    st.lists(st.floats(-3, 3), min_size=4, max_size=4),
)


@settings(max_examples=40, deadline=None)
@given(positions, positions, positions)
def test_dist_is_a_metric(p, q, r):
    assert dist(p, q) == dist(q, p)
    assert dist(p, r) <= dist(p, q) + dist(q, r) + 1e-12
    assert dist(p, p) == 0.0


@settings(max_examples=40, deadline=None)
@given(positions)
def test_position_json_round_trip(p):
    q = Position.from_json(json.dumps(p.to_json()))
    assert q.t == p.t
    np.testing.assert_array_equal(q.w0, p.w0)
    np.testing.assert_array_equal(q.caputo.samples, p.caputo.samples)
    np.testing.assert_allclose(q.caputo.nodes, p.caputo.nodes, rtol=0, atol=1e-15)


def test_position_json_shape_and_nonuniform_round_trip():
    p = Position.from_caputo(CFG, 0.5, 0.1, np.ones((4, 1)))
    data = p.to_json()
    assert set(data) == {"alpha", "T", "t", "w0", "step", "caputo"}
    q = p.extend([0.55, 0.7], [[2.0], [3.0]])
    r = Position.from_json(q.to_json())
    np.testing.assert_array_equal(r.caputo.nodes, q.caputo.nodes)
    np.testing.assert_allclose(r.wt, q.wt, rtol=1e-14)


def test_restrict_and_extend(rng):
    p = Position.from_caputo(CFG, 0.5, 0.0, rng.normal(size=(10, 1)))
    r = p.restrict(0.25)
    assert r.t == 0.25
    np.testing.assert_allclose(r.wt, p.w(0.25), rtol=1e-13)
    with pytest.raises(ValueError):
        p.restrict(0.26)
    with pytest.raises(ValueError):
        p.extend([0.5], [[1.0]])
