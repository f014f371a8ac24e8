import numpy as np
import pytest

from gamebridge.bridge import GridSpec, TimeSlicedGrid, build_target_cylinder
from gamebridge.flows import PiecewiseControl, flow_piecewise
from gamebridge.gamespec import Cylinder, GameProblem, TerminalSet, sample_control_set
from gamebridge.simulate import (
    ConstantAdversary,
    ExtremalShift,
    LookaheadAdversary,
    Partition,
    StrategyError,
    TrialReport,
    capture_radius,
    run_trials,
    sample_starts,
    step_motion,
)
from gamebridge.vectorfield import FieldSignature, parse_field

BAND = TerminalSet.from_descriptor({"box": [[-0.2, 0.2]]})


def game(src, P=None, Q=None, n=1):
    names = ("x",) if n == 1 else ("y", "z")
    f = parse_field(src, FieldSignature(n, (("u", 1), ("v", 1)), names))
    P = P or sample_control_set({"interval": [-1, 1], "count": 9})
    Q = Q or sample_control_set({"interval": [-.5, .5], "count": 5})
    return GameProblem(f, P, Q, 1.0, Cylinder(BAND))


def test_partition():
    p = Partition.uniform(0.0, 1.0, 4)
    assert p.times == (0.0, 0.25, 0.5, 0.75, 1.0) and p.fineness == 0.25
    with pytest.raises(ValueError):
        Partition((0.0, 0.0))


def test_zero_field_stays_put():
    tr = step_motion(game(["0*u"]), lambda t, x, v: [0.0], lambda t, x: [0.5],
                     Partition.uniform(0, 1, 5), Partition.uniform(0, 1, 3), (0.0, [0.7]))
    assert np.all(tr.states == 0.7) and tr.exit_reason is None
    assert len(tr.times) == 8  # joint refinement of the two partitions


def test_counter_strategy_cancels():
    tr = step_motion(game(["u + v"]), lambda t, x, v: -np.asarray(v), lambda t, x: [0.5 * np.cos(7 * t)],
                     Partition.uniform(0, 1, 10), Partition.uniform(0, 1, 10), (0.0, [0.3]))
    assert np.allclose(tr.states, 0.3, atol=1e-15)


def test_double_integrator_closed_form():
    tr = step_motion(game(["z", "u + v"], n=2), lambda t, x, v: [1.0], lambda t, x: [0.0],
                     Partition.uniform(0, 1, 4), Partition.uniform(0, 1, 2), (0.0, [0.0, 0.0]))
    assert np.allclose(tr.endpoint, [0.5, 1.0], atol=1e-9)


def test_constant_strategies_match_flow():
    p = game(["z", "u + v - y/3"], n=2)
    whole = Partition((0.0, 1.0))
    tr = step_motion(p, lambda t, x, v: [0.75], lambda t, x: [-0.5], whole, whole, (0.0, [0.2, -0.1]))
    ref = flow_piecewise(p.f, [0.2, -0.1], 0.0, PiecewiseControl([(1.0, 0.75)]), "u", {"v": [-0.5]})
    assert np.allclose(tr.endpoint, ref.endpoint, atol=1e-12, rtol=0)


def test_leaving_bounds_truncates():
    tr = step_motion(game(["u + v"]), lambda t, x, v: [1.0], lambda t, x: [0.5],
                     Partition.uniform(0, 1, 10), Partition.uniform(0, 1, 10), (0.0, [0.0]),
                     bounds=[(-1.0, 1.0)])
    assert tr.exit_reason == "left bounds" and tr.times[-1] < 1.0


def band_bridge(spec, c0=0.7):
    c, t = spec.axis_centers(0), spec.times()
    return TimeSlicedGrid(spec, np.abs(c)[None, :] <= c0 - 0.5 * t[:, None] + 1e-12)


def test_extremal_shift_degenerate_tie():
    p = game(["u"], P=sample_control_set({"points": [-1, 0, 1]}))
    spec = GridSpec(((-1.0, 1.0),), (5,), 2, 1.0)
    bits = np.zeros(spec.shape, bool)
    bits[:, 2] = True
    U = ExtremalShift(TimeSlicedGrid(spec, bits), p)
    assert U(0.0, [0.0], [0.0])[0] == -1.0


def test_extremal_shift_pushes_toward_band():
    spec = GridSpec(((-2.0, 2.0),), (41,), 10, 1.0)
    p = game(["u + v"])
    U = ExtremalShift(band_bridge(spec), p)
    for v in p.Q.points:
        assert U(0.0, [1.5], v)[0] == -1.0
        assert U(0.0, [-1.5], v)[0] == 1.0
    batch = U(0.0, np.array([[1.5], [-1.5]]), np.array([[0.5], [-0.5]]))
    assert batch[:, 0].tolist() == [-1.0, 1.0]


def test_extremal_shift_on_empty_bridge():
    spec = GridSpec(((-2.0, 2.0),), (41,), 10, 1.0)
    U = ExtremalShift(TimeSlicedGrid.empty(spec), game(["u + v"]))
    with pytest.raises(StrategyError):
        U(0.0, [0.0], [0.0])


def test_trials_from_the_target():
    spec = GridSpec(((-2.0, 2.0),), (41,), 10, 1.0)
    p = game(["u + v"])
    M = build_target_cylinder(BAND, spec)
    rep, _ = run_trials(p, band_bridge(spec), M, [[0.0], [0.1]], {"c": ConstantAdversary((0.5,))}, [10])
    assert rep.success_fraction == 1.0
    assert all(r.capture_time == 0.0 for r in rep.records)
    empty, trajs = run_trials(p, TimeSlicedGrid.empty(spec), M, [[0.0]], {"c": ConstantAdversary((0.5,))}, [10])
    assert empty.vacuous and empty.success_fraction is None and trajs == []
    assert TrialReport().vacuous


def test_starts_sampling():
    spec = GridSpec(((-2.0, 2.0),), (41,), 10, 1.0)
    W = band_bridge(spec)
    inside = sample_starts(W, 50, seed=3)
    assert np.all(np.abs(inside) <= 0.7 - 2 * spec.widths[0] + 1e-9)
    outside = sample_starts(W, 50, seed=3, outside=True)
    assert np.all(np.abs(outside) > 0.7 + 2 * spec.widths[0] - 1e-9)
    assert np.array_equal(inside, sample_starts(W, 50, seed=3))
    assert capture_radius(spec) == pytest.approx(1.5 * spec.widths[0])


def test_trials_are_deterministic(cylinder):
    starts = sample_starts(cylinder.direct.grid, 20, seed=9)
    advs = {"c": ConstantAdversary((0.25,)), "lookahead": "lookahead"}
    a, ta = run_trials(cylinder.problem, cylinder.direct.grid, cylinder.M, starts, advs, [25], keep=True)
    b, tb = run_trials(cylinder.problem, cylinder.direct.grid, cylinder.M, starts, advs, [25], keep=True)
    assert a.records == b.records
    assert all(np.array_equal(x.states, y.states) for x, y in zip(ta, tb))


def test_refinement_keeps_robust_successes(cylinder):
    W, M, spec = cylinder.direct.grid, cylinder.M, cylinder.spec
    starts = sample_starts(W, 60, seed=5)
    eps = capture_radius(spec)
    advs = {f"c{v[0]}": ConstantAdversary(tuple(v)) for v in cylinder.problem.Q.points}
    advs["lookahead"] = "lookahead"
    coarse, _ = run_trials(cylinder.problem, W, M, starts, advs, [50], eps / 2)
    fine, _ = run_trials(cylinder.problem, W, M, starts, advs, [100], eps)
    assert all(f.success for c, f in zip(coarse.records, fine.records) if c.success)


def test_lookahead_pushes_away():
    spec = GridSpec(((-2.0, 2.0),), (41,), 10, 1.0)
    p = game(["u + v"])
    W = band_bridge(spec)
    adv = LookaheadAdversary(p, W, ExtremalShift(W, p), 0.1)
    assert adv(0.0, [1.0])[0] == 0.5
    assert adv(0.0, [-1.0])[0] == -0.5
