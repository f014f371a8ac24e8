import copy
import json

import pytest

from gamebridge.gamespec import Controllability, Cylinder, ExplicitGrid
from gamebridge.gridio import save_grid
from gamebridge.bridge import TimeSlicedGrid
from gamebridge.problemfile import ProblemFileError, build, load, packaged, packaged_names

BASE = {
    "schema_version": 1,
    "state": ["x"],
    "dynamics": {"f": ["u + v"]},
    "control_sets": {"P": {"interval": [-1, 1], "count": 3}, "Q": {"points": [0.0]}},
    "horizon": 1.0,
    "target": {"kind": "cylinder", "F": {"box": [[-0.2, 0.2]]}},
    "grid": {"bounds": [[-1, 1]], "cells": [11], "time_steps": 4},
}


def doc(**changes):
    d = copy.deepcopy(BASE)
    for path, value in changes.items():
        node = d
        keys = path.split("__")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        if value is None:
            node.pop(keys[-1])
        else:
            node[keys[-1]] = value
    return d


def test_minimal_document_and_defaults():
    cfg = build(doc())
    assert isinstance(cfg.problem.target, Cylinder)
    assert cfg.solver["mode"] == "interpolate" and cfg.solver["max_iter"] == 30
    assert not cfg.explicit_aux and cfg.aux.omega.points.tolist() == [[0.0]]


def test_unknown_key_is_named():
    d = doc()
    d["targett"] = d.pop("target")
    with pytest.raises(ProblemFileError, match="targett"):
        build(d)


@pytest.mark.parametrize("changes, where", [
    ({"solver__max_iter": 0}, "solver/max_iter"),
    ({"schema_version": 2}, "schema_version"),
    ({"solver__mode": "fast"}, "solver/mode"),
    ({"grid__cells": [1]}, "grid/cells/0"),
    ({"control_sets__P": {"interval": [0, 1], "ball": 1}}, "control_sets/P"),
    ({"horizon": 0}, "horizon"),
])
def test_schema_errors_carry_location(changes, where):
    with pytest.raises(ProblemFileError, match=where):
        build(doc(**changes))


@pytest.mark.parametrize("changes, text", [
    ({"dynamics__f": ["u", "v"]}, "dynamics/f"),
    ({"grid__bounds": [[-1, 1], [-1, 1]], "grid__cells": [3, 3]}, "grid"),
    ({"dynamics__f": ["u + q"]}, "undeclared identifier q"),
    ({"target": {"kind": "controllability"}}, "auxiliary"),
    ({"target": {"kind": "explicit"}}, "target/path"),
])
def test_semantic_errors(changes, text):
    with pytest.raises(ProblemFileError, match=text):
        build(doc(**changes))


def test_auxiliary_section():
    d = doc(auxiliary={"g": ["w"], "F": {"point": [0.0]}}, target={"kind": "controllability"})
    with pytest.raises(ProblemFileError, match="Omega"):
        build(d)
    d["control_sets"]["Omega"] = {"interval": [-1, 1], "count": 3}
    cfg = build(d)
    assert cfg.explicit_aux and isinstance(cfg.problem.target, Controllability)


def test_explicit_target_relative_path(tmp_path):
    cfg = build(doc())
    M = TimeSlicedGrid.full(cfg.spec)
    save_grid(M, tmp_path / "M.grid")
    d = doc(target={"kind": "explicit", "path": "M.grid"})
    (tmp_path / "p.json").write_text(json.dumps(d))
    loaded = load(tmp_path / "p.json")
    assert isinstance(loaded.problem.target, ExplicitGrid) and loaded.problem.target.grid == M


def test_load_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{ nope")
    with pytest.raises(ProblemFileError, match="invalid JSON"):
        load(tmp_path / "bad.json")
    with pytest.raises(ProblemFileError):
        load(tmp_path / "missing.json")


def test_packaged_problems_load():
    names = packaged_names()
    assert {"cylinder_1d", "sinking_island_1d", "rotation_translation", "product_game"} <= set(names)
    for n in names:
        assert packaged(n).problem.name == n
