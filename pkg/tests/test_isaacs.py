import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamebridge.gamespec import (
    AuxiliarySystem,
    Cylinder,
    GameProblem,
    TerminalSet,
    build_transformed,
    sample_control_set,
)
from gamebridge.isaacs import (
    GENERAL_TOL,
    SEPARATED_TOL,
    default_directions,
    default_tolerance,
    is_separated,
    isaacs_gap,
    isaacs_gap_transformed,
    sample_states,
)
from gamebridge.vectorfield import FieldSignature, parse_field

UV1 = FieldSignature(1, (("u", 1), ("v", 1)))
PM = sample_control_set({"points": [-1, 1]})


def island(g_src=("w", "0")):
    yz = ("y", "z")
    f = parse_field(["z", "u + v"], FieldSignature(2, (("u", 1), ("v", 1)), yz))
    g = parse_field(list(g_src), FieldSignature(2, (("w", 1),), yz))
    P = sample_control_set({"interval": [-2, 2], "count": 9})
    Q = sample_control_set({"interval": [-.5, .5], "count": 5})
    aux = AuxiliarySystem(g, sample_control_set({"interval": [-1, 1], "count": 9}),
                          TerminalSet.from_descriptor({"point": [0, 0]}))
    return GameProblem(f, P, Q, 1.0, Cylinder(aux.F)), aux


def test_product_game_gap_two():
    f = parse_field(["u * v"], UV1)
    r = isaacs_gap(f, PM, PM, [[0.0]], [[1.0]])
    assert r.minmax[0] == 1.0 and r.maxmin[0] == -1.0 and r.max_gap == 2.0
    assert not is_separated(f) and default_tolerance(f) == GENERAL_TOL


def test_separated_dynamics_have_no_gap():
    problem, aux = island()
    xs = sample_states([(-2, 2), (-2, 2)], 300, seed=4)
    ss = default_directions(2, 300)
    assert isaacs_gap(problem.f, problem.P, problem.Q, xs, ss).max_gap == 0.0
    r = isaacs_gap_transformed(build_transformed(problem, aux), xs, ss)
    assert r.max_gap == 0.0 and set(r.case) <= {"f", "g"}
    assert is_separated(problem.f) and default_tolerance(problem.f) == SEPARATED_TOL


def test_g_branch_wins_when_it_is_slower():
    # along s = (0, 1) every f velocity is u + v >= 1.5 while g contributes 0
    problem, aux = island()
    P = sample_control_set({"interval": [2, 3], "count": 3})
    tp = build_transformed(GameProblem(problem.f, P, problem.Q, 1.0, problem.target), aux)
    r = isaacs_gap_transformed(tp, [[0.3, 0.1]], [[0.0, 1.0]])
    assert r.case == ["g"] and r.minmax[0] == 0.0 and r.max_gap == 0.0


def test_zero_auxiliary_singleton():
    problem, _ = island()
    zero = AuxiliarySystem(parse_field(["0", "0"], FieldSignature(2, (("w", 1),), ("y", "z"))),
                           sample_control_set({"points": [0.0]}), TerminalSet("empty"))
    tp = build_transformed(problem, zero)
    xs = sample_states([(-2, 2), (-2, 2)], 50, 1)
    ss = default_directions(2, 50)
    r = isaacs_gap_transformed(tp, xs, ss)
    base = isaacs_gap(problem.f, problem.P, problem.Q, xs, ss)
    assert np.array_equal(r.minmax, np.minimum(base.minmax, 0.0)) and r.max_gap == 0.0


def test_inputs_checked():
    f = parse_field(["u * v"], UV1)
    with pytest.raises(ValueError):
        isaacs_gap(f, PM, PM, [[0.0]], [[0.0]])
    with pytest.raises(ValueError):
        isaacs_gap(f, PM, PM, [[0.0], [1.0]], [[1.0]])


def test_directions():
    d = default_directions(2, 10)
    assert d[:4].tolist() == [[1, 0], [0, 1], [-1, 0], [0, -1]]
    assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.array_equal(d, default_directions(2, 10))
    assert default_directions(1, 5)[:, 0].tolist() == [1, -1, 1, -1, 1]


def test_report_csv(tmp_path):
    f = parse_field(["u * v"], UV1)
    r = isaacs_gap(f, PM, PM, [[0.0], [1.0]], [[1.0], [-2.0]])
    r.to_csv(tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0].startswith("x1,s1,minmax") and len(lines) == 3


field_src = st.sampled_from(["u*v + x", "u - v*v + x*u", "max(u, v) - x", "u*u*v", "u + v"])


@settings(max_examples=60, deadline=None)
@given(field_src, st.lists(st.floats(-2, 2), min_size=1, max_size=8), st.floats(0.01, 100),
       st.integers(0, 2**31))
def test_duality_and_scaling(src, xs, c, seed):
    f = parse_field([src], FieldSignature(1, (("u", 1), ("v", 1)), ("x",)))
    P = sample_control_set({"interval": [-1, 1], "count": 4})
    Q = sample_control_set({"interval": [-1, 0.5], "count": 3})
    xs = np.asarray(xs)[:, None]
    ss = np.random.default_rng(seed).choice([-1.0, 1.0], size=xs.shape) * \
        np.random.default_rng(seed + 1).uniform(0.1, 2, xs.shape)
    r = isaacs_gap(f, P, Q, xs, ss)
    assert np.all(r.maxmin <= r.minmax)
    scaled = isaacs_gap(f, P, Q, xs, c * ss)
    assert np.allclose(scaled.gap, c * r.gap, rtol=1e-12, atol=1e-12)
    assert np.array_equal(scaled.argmin_u, r.argmin_u)
    assert np.array_equal(scaled.argmax_v, r.argmax_v)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_transformed_keeps_zero_gaps(seed):
    problem, aux = island(("w*z", "w"))
    xs = sample_states([(-2, 2), (-2, 2)], 40, seed)
    ss = np.random.default_rng(seed).normal(size=(40, 2))
    base = isaacs_gap(problem.f, problem.P, problem.Q, xs, ss)
    star = isaacs_gap_transformed(build_transformed(problem, aux), xs, ss)
    assert np.all(star.gap[base.gap == 0.0] == 0.0)
