import csv
import io
import json

import numpy as np
import pytest

from fracfb.controls import ControlSet, PiecewiseControl
from fracfb.core import Position, extension_a
from fracfb.dynamics import coupled_problem, example_problem, solve_motion
from fracfb.envelope import example_ci_derivatives, value_closed_form_example
from fracfb.feedback import (
    SWEEP_COLUMNS,
    Partition,
    SimReport,
    Strategy,
    envelope_choice,
    epsilon_check,
    run_feedback,
    strategy_constant,
    strategy_envelope,
    strategy_example,
    strategy_smooth,
    sweep_csv,
    sweep_partitions,
)

DIAMS = [1 / 16, 1 / 64, 1 / 256]


def position_with_a(ex, t, target):
    """Constant-history position whose free extension ends at ``target``."""
    return Position.constant(ex.cfg, t, target) if t else Position.initial(ex.cfg, target)


def test_partition_invariants():
    with pytest.raises(ValueError):
        Partition([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        Partition.uniform(0.0, 1.0, 0.0)
    part = Partition.uniform(0.2, 1.0, 0.3)
    assert part.k == 3 and part.diam <= 0.3 and part.is_uniform()
    assert not Partition([0.0, 0.1, 1.0]).is_uniform()
    assert Partition.uniform(0.0, 1.0, 1 / 256).k == 256


def test_constant_strategy_reduces_to_open_loop(ex):
    p = Position.constant(ex.cfg, 0.25, 0.3)
    rep = run_feedback(p, strategy_constant([1.0]), Partition.uniform(0.25, 1.0, 0.75 / 8), ex.dyn, ex.cost,
                       ex.ctrl, steps_per_piece=4)
    mot = solve_motion(p, PiecewiseControl.constant(0.25, 1.0, [1.0]), ex.dyn, 32)
    np.testing.assert_array_equal(rep.motion.states.nodes, mot.states.nodes)
    np.testing.assert_allclose(rep.motion.states.samples, mot.states.samples, rtol=1e-14, atol=1e-15)
    assert rep.cost == pytest.approx(ex.cost.sigma(mot.terminal), rel=1e-14)


def test_controls_are_piecewise_constant_on_partition(ex):
    p = Position.initial(ex.cfg, -0.2)
    part = Partition([0.0, 0.1, 0.45, 1.0])
    rep = run_feedback(p, strategy_example("one", ex.ctrl), part, ex.dyn, ex.cost, ex.ctrl, steps_per_piece=16)
    assert rep.controls.shape == (3, 1)
    for j in range(part.k):
        lo, hi = part.times[j], part.times[j + 1]
        for tau in np.linspace(lo, hi, 5, endpoint=False):
            np.testing.assert_array_equal(rep.control_at(tau), rep.controls[j])
    np.testing.assert_array_equal(rep.control_at(1.0), ex.ctrl.points[0])


@pytest.mark.parametrize("w0, rho", [(0.5, -6.25), (0.0, -4.0)])
def test_example_strategy_is_near_optimal(ex, w0, rho):
    p = Position.initial(ex.cfg, w0)
    rep = run_feedback(p, strategy_example("one", ex.ctrl), Partition.uniform(0.0, 1.0, 1 / 256), ex.dyn, ex.cost,
                       ex.ctrl, rho=rho)
    assert abs(rep.cost - rho) <= 0.05
    assert epsilon_check(rep, rho, 0.05)


@pytest.mark.parametrize("target, expected", [(0.3, 1.0), (0.0, 1.0), (-0.3, -1.0)])
def test_strategy_example_branches(ex, target, expected):
    U = strategy_example("one", ex.ctrl)
    p = position_with_a(ex, 0.4, target)
    np.testing.assert_allclose(float(extension_a(p, 1.0)[0]), target, atol=1e-15)
    np.testing.assert_array_equal(U(p), [expected])


def test_strategy_example_follows_sign_of_g():
    ex = example_problem(0.5, 3.0, "cos")
    U = strategy_example("cos", ex.ctrl)
    # cos(2) < 0 flips the choice
    np.testing.assert_array_equal(U(Position.constant(ex.cfg, 2.0, 0.3)), [-1.0])
    np.testing.assert_array_equal(U(Position.constant(ex.cfg, 2.0, -0.3)), [1.0])


def test_strategy_example_snaps_to_grid():
    ex = example_problem(0.5, 1.0, "one", controls=(-0.5, 0.0, 0.5))
    np.testing.assert_array_equal(strategy_example("one", ex.ctrl)(Position.initial(ex.cfg, 1.0)), [0.5])


def test_strategy_smooth(ex):
    U = strategy_smooth(lambda p: np.atleast_1d(example_ci_derivatives(p)[1]), ex.dyn, ex.ctrl)
    np.testing.assert_array_equal(U(Position.initial(ex.cfg, 0.4)), [1.0])
    np.testing.assert_array_equal(U(Position.initial(ex.cfg, -0.4)), [-1.0])
    tie = strategy_smooth(lambda p: np.zeros(1), ex.dyn, ex.ctrl)
    np.testing.assert_array_equal(tie(Position.initial(ex.cfg, 0.4)), ex.ctrl.points[0])
    single = ControlSet([0.25])
    np.testing.assert_array_equal(strategy_smooth(lambda p: np.ones(1), ex.dyn, single)(Position.initial(ex.cfg, 0)),
                                  [0.25])
    with pytest.raises(ValueError):
        strategy_smooth(lambda p: np.atleast_1d(example_ci_derivatives(p)[1]), ex.dyn, ex.ctrl)(
            Position.initial(ex.cfg, 0.0))


def test_envelope_choice_at_nonsmooth_origin(ex, fam):
    i, vals = envelope_choice(Position.initial(ex.cfg, 0.0), fam, ex.ctrl, ex.dyn, ex.cost, m=256)
    assert i == 0
    np.testing.assert_allclose([vals[0], vals[2]], [0.0, 0.0], atol=5e-2)
    np.testing.assert_allclose(vals[1], 4.0, atol=5e-2)


@pytest.mark.parametrize("t, target", [(0.0, 1.0), (0.0, -1.0), (0.3, 0.4), (0.6, -0.2)])
def test_envelope_agrees_with_example_in_smooth_region(ex, fam, t, target):
    p = position_with_a(ex, t, target)
    env = strategy_envelope(fam, ex.dyn, ex.cost, ex.ctrl, m=128)
    np.testing.assert_array_equal(env(p), strategy_example("one", ex.ctrl)(p))
    smooth = strategy_smooth(lambda q: np.atleast_1d(example_ci_derivatives(q)[1]), ex.dyn, ex.ctrl)
    np.testing.assert_array_equal(env(p), smooth(p))


def test_envelope_strategy_short_run(ex, fam):
    p = Position.initial(ex.cfg, 0.5)
    rep = run_feedback(p, strategy_envelope(fam, ex.dyn, ex.cost, ex.ctrl, m=64), Partition.uniform(0, 1, 1 / 8),
                       ex.dyn, ex.cost, ex.ctrl, rho=-6.25)
    np.testing.assert_array_equal(rep.controls, np.ones((8, 1)))
    assert rep.epsilon <= 0.05


def test_epsilon_check():
    class Fake:
        cost = -4.0

    assert epsilon_check(Fake, -4.0, 1e-12)
    Fake.cost = -3.9
    assert not epsilon_check(Fake, -4.0, 0.05)
    with pytest.raises(ValueError):
        epsilon_check(Fake, float("nan"), 0.05)


def test_sweep_trend_example(ex):
    p = Position.initial(ex.cfg, 0.5)
    reps = sweep_partitions(p, strategy_example("one", ex.ctrl), ex.dyn, ex.cost, ex.ctrl, DIAMS, rho=-6.25)
    eps = [r.epsilon for r in reps]
    assert all(b <= a * 1.2 + 1e-9 for a, b in zip(eps, eps[1:]))
    assert eps[-1] <= 0.05
    assert [r.partition.k for r in reps] == [16, 64, 256]


def test_sweep_single_and_constant(ex):
    p = Position.initial(ex.cfg, 0.5)
    assert len(sweep_partitions(p, strategy_example("one", ex.ctrl), ex.dyn, ex.cost, ex.ctrl, [0.25])) == 1
    reps = sweep_partitions(p, strategy_constant([-1.0]), ex.dyn, ex.cost, ex.ctrl, [1 / 4, 1 / 16], rho=-6.25,
                            steps_per_piece=64)
    gap = ex.cost.sigma(solve_motion(p, PiecewiseControl.constant(0, 1, [-1.0]), ex.dyn, 1024).terminal) + 6.25
    np.testing.assert_allclose([r.epsilon for r in reps], [gap, gap], rtol=1e-9)


@pytest.mark.parametrize("diams", [[], [0.1, 0.2], [0.1, -0.1]])
def test_sweep_rejects_bad_diameters(ex, diams):
    with pytest.raises(ValueError):
        sweep_partitions(Position.initial(ex.cfg, 0.0), strategy_constant([0.0]), ex.dyn, ex.cost, ex.ctrl, diams)


def test_determinism():
    pr = coupled_problem(0.5, 1.0)
    p = Position.constant(pr.cfg, 0.1, [0.2, -0.1])

    def rule(q):
        return pr.ctrl.points[0 if q.wt[0] > 0 else 2]

    U = Strategy("sign", rule)
    a = run_feedback(p, U, Partition.uniform(0.1, 1.0, 0.05), pr.dyn, pr.cost, pr.ctrl)
    b = run_feedback(p, U, Partition.uniform(0.1, 1.0, 0.05), pr.dyn, pr.cost, pr.ctrl)
    assert a.motion.states.samples.tobytes() == b.motion.states.samples.tobytes()
    assert a.controls.tobytes() == b.controls.tobytes() and a.cost == b.cost


def test_final_control_does_not_affect_cost(ex):
    p = Position.initial(ex.cfg, 0.2)
    U = strategy_example("one", ex.ctrl)
    a = run_feedback(p, U, Partition.uniform(0, 1, 0.125), ex.dyn, ex.cost, ex.ctrl)
    b = run_feedback(p, U, Partition.uniform(0, 1, 0.125), ex.dyn, ex.cost, ex.ctrl, u_final=[1.0])
    assert a.cost == b.cost
    np.testing.assert_array_equal(a.u_final, [-1.0])
    np.testing.assert_array_equal(b.u_final, [1.0])
    assert a.cost == ex.cost.sigma(a.motion.states.samples[-1])


def test_report_json_round_trip(ex):
    p = Position.constant(ex.cfg, 0.2, 0.1)
    rep = run_feedback(p, strategy_example("one", ex.ctrl), Partition.uniform(0.2, 1.0, 0.1), ex.dyn, ex.cost,
                       ex.ctrl, rho=value_closed_form_example(p))
    back = SimReport.from_json(json.loads(json.dumps(rep.to_json())))
    assert back.cost == rep.cost and back.rho == rep.rho and back.epsilon == rep.epsilon
    np.testing.assert_array_equal(back.controls, rep.controls)
    np.testing.assert_array_equal(back.motion.states.samples, rep.motion.states.samples)
    np.testing.assert_array_equal(back.partition.times, rep.partition.times)


def test_sweep_csv(ex):
    p = Position.initial(ex.cfg, 0.5)
    reps = sweep_partitions(p, strategy_example("one", ex.ctrl), ex.dyn, ex.cost, ex.ctrl, [0.25, 0.125], rho=-6.25)
    text = sweep_csv([("example", d, r) for d, r in zip([0.25, 0.125], reps)], ("strategy",))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == ("strategy",) + SWEEP_COLUMNS
    assert [int(r["k"]) for r in rows] == [4, 8]
    np.testing.assert_allclose(float(rows[1]["epsilon"]), reps[1].epsilon, rtol=1e-11)
    no_rho = sweep_csv([(0.25, run_feedback(p, strategy_constant([0.0]), Partition.uniform(0, 1, 0.25), ex.dyn,
                                            ex.cost, ex.ctrl))])
    assert next(csv.DictReader(io.StringIO(no_rho)))["epsilon"] == ""


def test_strategy_outside_control_set(ex):
    with pytest.raises(ValueError, match="not in the control set"):
        run_feedback(Position.initial(ex.cfg, 0.0), strategy_constant([0.5]), Partition.uniform(0, 1, 0.5), ex.dyn,
                     ex.cost, ex.ctrl)


def test_partition_must_span_interval(ex):
    with pytest.raises(ValueError):
        run_feedback(Position.initial(ex.cfg, 0.0), strategy_constant([0.0]), Partition([0.0, 0.5]), ex.dyn,
                     ex.cost, ex.ctrl)
