# =============================================================================
# TESTS: Command-line interface
# =============================================================================

from __future__ import annotations

import csv
import json
import os
import tempfile

import pytest

from cvarlab.cli import main
from cvarlab.serialize import model_to_dict

from tests.helpers import two_trajectory_model


_GRID_ARGS = ["--domain", "gridworld", "--rows", "4", "--cols", "4"]


@pytest.fixture
def workdir():
    with tempfile.TemporaryDirectory() as path:
        yield path


def _read_csv(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _exit_code(argv: list[str]) -> int:
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


class TestGenerate:
    def test_writes_model(self, workdir):
        out = os.path.join(workdir, "river.json")
        main(["generate", "--domain", "river", "--rows", "6", "--cols", "4", "--out", out])
        with open(out, encoding="utf-8") as f:
            data = json.load(f)
        assert data["states"] == 24
        assert data["goals"] == [19]

    def test_obstacle_cells(self, workdir):
        out = os.path.join(workdir, "grid.json")
        main(["generate", *_GRID_ARGS, "--obstacles", "1,1", "2,2", "--out", out])
        with open(out, encoding="utf-8") as f:
            data = json.load(f)
        obstacle = [t for t in data["transitions"] if t["s"] == 5]
        assert all(t["next"] == [[3, 1.0]] for t in obstacle)

    def test_bad_cell(self, workdir):
        out = os.path.join(workdir, "grid.json")
        assert _exit_code(["generate", *_GRID_ARGS, "--obstacles", "1-1", "--out", out]) == 2


class TestSolve:
    def test_writes_solution(self, workdir):
        out = os.path.join(workdir, "sol.json")
        main(["solve", *_GRID_ARGS, "--solver", "vili", "--atoms", "5", "--out", out])
        with open(out, encoding="utf-8") as f:
            data = json.load(f)
        assert data["kind"] == "vili"
        assert len(data["grid"]) == 5
        assert len(data["value"]) == 16

    def test_malformed_model_exits_2(self, workdir, capsys):
        data = model_to_dict(two_trajectory_model())
        data["transitions"][0]["next"] = [[1, 0.1], [2, 0.5]]
        model = os.path.join(workdir, "bad.json")
        with open(model, "w", encoding="utf-8") as f:
            json.dump(data, f)
        assert _exit_code(["solve", "--model", model, "--out", os.path.join(workdir, "sol.json")]) == 2
        assert "ERROR" in capsys.readouterr().err

    def test_missing_model_file(self, workdir):
        argv = ["solve", "--model", os.path.join(workdir, "nope.json"), "--out", os.path.join(workdir, "s.json")]
        assert _exit_code(argv) == 2

    def test_negative_epsilon_exits_2(self, workdir):
        data = model_to_dict(two_trajectory_model())
        model = os.path.join(workdir, "model.json")
        with open(model, "w", encoding="utf-8") as f:
            json.dump(data, f)
        argv = ["solve", "--model", model, "--epsilon", "-1", "--out", os.path.join(workdir, "s.json")]
        assert _exit_code(argv) == 2

    def test_single_atom_exits_2(self, workdir):
        argv = ["solve", *_GRID_ARGS, "--atoms", "1", "--out", os.path.join(workdir, "s.json")]
        assert _exit_code(argv) == 2

    def test_invalid_json_exits_2(self, workdir, capsys):
        model = os.path.join(workdir, "broken.json")
        with open(model, "w", encoding="utf-8") as f:
            f.write('{"states": 3, "goals": [2')
        assert _exit_code(["solve", "--model", model, "--out", os.path.join(workdir, "s.json")]) == 2
        assert "not valid JSON" in capsys.readouterr().err


class TestEvaluate:
    def test_rows_for_each_alpha(self, workdir):
        out = os.path.join(workdir, "rows.csv")
        main(["evaluate", *_GRID_ARGS, "--alpha", "0.1", "1.0", "--no-timings", "--out", out])
        rows = _read_csv(out)
        assert [float(r["alpha"]) for r in rows] == [0.1, 1.0]
        assert all(r["solve_ms"] == "" for r in rows)
        assert all(r["s0"] == "15" for r in rows)

    def test_from_saved_solution(self, workdir):
        model = os.path.join(workdir, "model.json")
        with open(model, "w", encoding="utf-8") as f:
            json.dump(model_to_dict(two_trajectory_model()), f)
        sol = os.path.join(workdir, "sol.json")
        main(["solve", "--model", model, "--atoms", "3", "--epsilon", "1e-9", "--out", sol])
        out = os.path.join(workdir, "rows.csv")
        main(["evaluate", "--model", model, "--solution", sol, "--s0", "0", "--alpha", "1.0", "--out", out])
        (row,) = _read_csv(out)
        assert row["domain"] == "model"
        assert float(row["exact_cvar"]) == pytest.approx(10.9)

    def test_trace_files(self, workdir):
        model = os.path.join(workdir, "model.json")
        with open(model, "w", encoding="utf-8") as f:
            json.dump(model_to_dict(two_trajectory_model()), f)
        traces = os.path.join(workdir, "traces")
        out = os.path.join(workdir, "rows.csv")
        main([
            "evaluate", "--model", model, "--atoms", "3", "--epsilon", "1e-9", "--s0", "0",
            "--alpha", "0.5", "1.0", "--trace-out", traces, "--out", out,
        ])
        assert sorted(os.listdir(traces)) == ["trace_s0_a0.5.json", "trace_s0_a1.json"]
        with open(os.path.join(traces, "trace_s0_a1.json"), encoding="utf-8") as f:
            data = json.load(f)
        assert data["cvar"] == pytest.approx(10.9)
        assert len(data["trace"]) >= 1
        assert all(len(entry) == 3 for entry in data["trace"])

    def test_trace_with_sampling_exits_2(self, workdir):
        argv = [
            "evaluate", *_GRID_ARGS, "--evaluator", "mc", "--samples", "100",
            "--trace-out", os.path.join(workdir, "traces"), "--out", os.path.join(workdir, "rows.csv"),
        ]
        assert _exit_code(argv) == 2

    def test_target_below_alpha0_exits_2(self, workdir):
        out = os.path.join(workdir, "rows.csv")
        assert _exit_code(["evaluate", *_GRID_ARGS, "--alpha", "0.01", "--out", out]) == 2

    def test_bad_start_state_exits_2(self, workdir):
        out = os.path.join(workdir, "rows.csv")
        assert _exit_code(["evaluate", *_GRID_ARGS, "--s0", "99", "--out", out]) == 2


class TestSweep:
    def test_writes_every_config_point(self, workdir):
        out = os.path.join(workdir, "sweep.csv")
        main([
            "sweep", *_GRID_ARGS, "--atoms", "5", "7", "--alpha0", "0.1",
            "--alpha", "0.1", "1.0", "--out", out,
        ])
        rows = _read_csv(out)
        assert len(rows) == 4
        assert [r["N"] for r in rows] == ["5", "5", "7", "7"]

    def test_reruns_match_without_timings(self, workdir):
        paths = [os.path.join(workdir, f"sweep{i}.csv") for i in range(2)]
        for path in paths:
            main(["sweep", *_GRID_ARGS, "--atoms", "5", "--alpha0", "0.1", "0.2", "--no-timings", "--out", path])
        with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
            assert a.read() == b.read()


class TestSimulate:
    def test_histogram_file(self, workdir):
        out = os.path.join(workdir, "mc.json")
        main(["simulate", *_GRID_ARGS, "--samples", "2000", "--alpha", "0.5", "--out", out])
        with open(out, encoding="utf-8") as f:
            data = json.load(f)
        assert sum(data["counts"]) == 2000
        assert data["cvar"] >= data["mean"]
        assert data["alpha"] == 0.5
