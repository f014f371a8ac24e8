import json
from pathlib import Path

import numpy as np
import pytest

from gamebridge.bridge import TimeSlicedGrid
from gamebridge.cli import main
from gamebridge.gridio import load_grid, save_grid

PROBLEMS = Path(__file__).resolve().parents[1] / "src" / "gamebridge" / "problems"


def problem(name):
    return str(PROBLEMS / f"{name}.json")


def variant(tmp_path, name, **changes):
    d = json.loads(Path(problem(name)).read_text())
    for k, v in changes.items():
        section, _, key = k.partition("__")
        if key:
            d.setdefault(section, {})[key] = v
        else:
            d[section] = v
    p = tmp_path / f"{name}_variant.json"
    p.write_text(json.dumps(d))
    return str(p)


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", problem("cylinder_1d"), "--out", str(out)]) == 0
    return out


def test_solve_artifacts(solved):
    report = json.loads((solved / "report.json").read_text())
    assert report["converged"] and report["k"] == 1 and report["sizes"][1] == report["sizes"][2]
    W = load_grid(solved / "W.grid")
    assert W.count() == report["sizes"][-1]
    assert (solved / "W.csv").exists() and (solved / "timings.json").exists()


def test_solve_is_deterministic(solved, tmp_path):
    assert main(["solve", problem("cylinder_1d"), "--out", str(tmp_path)]) == 0
    for name in ("W.grid", "W.csv", "M.grid", "report.json"):
        assert (tmp_path / name).read_bytes() == (solved / name).read_bytes()


def test_schema_error_exit(tmp_path, capsys):
    d = json.loads(Path(problem("cylinder_1d")).read_text())
    d["targett"] = d.pop("target")
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert main(["solve", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "targett" in capsys.readouterr().err
    assert main(["solve", variant(tmp_path, "cylinder_1d", solver__max_iter=0), "--out", str(tmp_path)]) == 2


def test_non_convergence_exit(tmp_path):
    p = variant(tmp_path, "sinking_island_small", solver__max_iter=1)
    assert main(["solve", p, "--out", str(tmp_path / "o")]) == 3
    a, b = load_grid(tmp_path / "o" / "W_last.grid"), load_grid(tmp_path / "o" / "W_previous.grid")
    assert a.issubset(b) and a != b


def test_transform_compare_zero_auxiliary(tmp_path, capsys):
    assert main(["transform-compare", problem("cylinder_1d"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["precheck"]["max_discrepancy"] == 0.0 and report["result"] == "pass"
    assert all(r["mutual"] for r in report["per_k"])
    assert (tmp_path / "iterates" / "Wstar_1.grid").exists()
    assert "headline: PASS" in capsys.readouterr().out


def test_transform_compare_refuses_non_commuting(tmp_path, capsys):
    assert main(["transform-compare", problem("rotation_translation"), "--out", str(tmp_path)]) == 4
    assert "max discrepancy" in capsys.readouterr().err
    assert not (tmp_path / "W.grid").exists()
    assert main(["transform-compare", problem("rotation_translation"), "--out", str(tmp_path), "--force"]) in (0, 1)
    assert (tmp_path / "W.grid").exists()


@pytest.mark.parametrize("which, name, code", [
    ("bracket", "sinking_island_1d", 0),
    ("commute", "sinking_island_1d", 0),
    ("isaacs", "sinking_island_1d", 0),
    ("isaacs", "product_game", 1),
    ("commute", "rotation_translation", 1),
])
def test_checks(which, name, code, capsys):
    assert main(["check", which, problem(name)]) == code


def test_isaacs_product_game_prints_gap(capsys):
    main(["check", "isaacs", problem("product_game")])
    assert "max gap 2" in capsys.readouterr().out


def test_sections(solved, tmp_path):
    assert main(["check", "sections", problem("cylinder_1d")]) == 2
    assert main(["check", "sections", problem("cylinder_1d"), "--grid", str(solved / "W.grid"),
                 "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["sections"]["violations"] == 0


def test_simulate(solved, tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", problem("cylinder_1d"), "--grid", str(solved / "W.grid"), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert min(report["inside"]["success_fraction"].values()) >= 0.95
    assert "success" in capsys.readouterr().out
    assert (out / "trials_inside.csv").read_text().count("\n") == 1 + 6 * 200


def test_simulate_input_errors(solved, tmp_path, capsys):
    assert main(["simulate", problem("product_game"), "--grid", str(solved / "W.grid"),
                 "--out", str(tmp_path)]) == 2
    W = load_grid(solved / "W.grid")
    save_grid(TimeSlicedGrid.empty(W.spec), tmp_path / "empty.grid")
    assert main(["simulate", problem("cylinder_1d"), "--grid", str(tmp_path / "empty.grid"),
                 "--out", str(tmp_path / "e")]) == 0
    assert "vacuous" in capsys.readouterr().err
    assert main(["simulate", problem("cylinder_1d"), "--grid", str(tmp_path / "nope.grid"),
                 "--out", str(tmp_path)]) == 2


def test_export_plot(tmp_path, capsys):
    assert main(["solve", problem("sinking_island_small"), "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    M = load_grid(tmp_path / "M.grid")
    half = M.spec.time_steps // 2
    assert main(["export-plot", str(tmp_path / "M.grid"), "--slices", str(half)]) == 0
    rows = [r.split(",") for r in capsys.readouterr().out.splitlines()[1:]]
    h = M.spec.widths
    assert rows and all(abs(float(r[4])) <= 0.5 + h[0] and abs(float(r[5])) < h[1] for r in rows)
    ys = sorted(float(r[4]) for r in rows)
    assert ys[0] < -0.5 + h[0] and ys[-1] > 0.5 - h[0]
    assert main(["export-plot", str(tmp_path / "M.grid"), "--slices", str(M.spec.time_steps + 1)]) == 2
    out = tmp_path / "b.csv"
    assert main(["export-plot", str(tmp_path / "W.grid"), "--slices", "all", "--out", str(out)]) == 0
    assert out.read_text().startswith("t_index,t,i1,i2,x1,x2\n")


def test_usage_errors():
    assert main([]) == 2
    assert main(["check", "nonsense", problem("cylinder_1d")]) == 2
