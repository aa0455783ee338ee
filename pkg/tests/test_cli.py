import csv
import json

import numpy as np
import pytest

from pima.cli import SIM_CSV_COLUMNS, SPEC_CSV_COLUMNS, main
from pima.data import ingest_csv
from pima.multiverse import ModelSpec, run_multiverse


def write_period_csv(path, n=90, seed=0, effect=0.0):
    rng = np.random.default_rng(seed)
    period = np.array(["Pre", "Lockdown", "Post"] * (n // 3))
    c = rng.normal(size=(n, 4))
    y = c @ np.array([0.5, -0.3, 0.2, 0.1]) + effect * (period == "Post") + rng.normal(size=n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "period", "c1", "c2", "c3", "c4"])
        for i in range(n):
            w.writerow([f"{y[i]:.6f}", period[i], *(f"{v:.6f}" for v in c[i])])
    return path


def write_spec(path, data, **overrides):
    spec = {
        "data": str(data),
        "response": "y",
        "interest": {
            "column": "period",
            "contrasts": {
                "Lockdown-Pre": {"Lockdown": 1, "Pre": -1},
                "Post-Lockdown": {"Post": 1, "Lockdown": -1},
                "Post-Pre": {"Post": 1, "Pre": -1},
            },
        },
        "confounders": {f"c{j}": ["identity", "bspline3", "bspline4"] for j in range(1, 5)},
        "B": 200,
        "seed": 11,
    }
    spec.update(overrides)
    path.write_text(json.dumps(spec), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def period_files(tmp_path):
    data = write_period_csv(tmp_path / "period.csv", effect=0.8)
    return data, write_spec(tmp_path / "spec.json", data)


class TestMultiverseCommand:
    def test_grid_outputs(self, period_files, tmp_path):
        _, spec = period_files
        out_csv, out_json = tmp_path / "r.csv", tmp_path / "r.json"
        assert main(["multiverse", "--spec", str(spec), "--out-csv", str(out_csv), "--out-json", str(out_json)]) == 0
        rows = read_csv(out_csv)
        assert tuple(rows[0]) == SPEC_CSV_COLUMNS
        assert len(rows) == 243
        for g in ("Lockdown-Pre", "Post-Lockdown", "Post-Pre"):
            assert sum(r["group"] == g for r in rows) == 81
        summary = json.loads(out_json.read_text())
        assert summary["K"] == 243 and summary["B"] == 200 and summary["seed"] == 11
        assert set(summary["global"]) == {"Lockdown-Pre", "Post-Lockdown", "Post-Pre", "all"}

    def test_byte_identical_repeats(self, period_files, tmp_path):
        _, spec = period_files
        outs = []
        for k in range(2):
            c, j = tmp_path / f"r{k}.csv", tmp_path / f"r{k}.json"
            assert main(["multiverse", "--spec", str(spec), "--out-csv", str(c), "--out-json", str(j)]) == 0
            outs.append((c.read_bytes(), j.read_bytes()))
        assert outs[0] == outs[1]

    def test_flag_overrides_spec_seed(self, period_files, tmp_path):
        _, spec = period_files
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        main(["multiverse", "--spec", str(spec), "--out-json", str(a)])
        main(["multiverse", "--spec", str(spec), "--seed", "12", "--out-json", str(b)])
        assert json.loads(a.read_text())["seed"] == 11
        assert json.loads(b.read_text())["seed"] == 12

    def test_seed_required(self, tmp_path):
        data = write_period_csv(tmp_path / "d.csv")
        spec = write_spec(tmp_path / "s.json", data, seed=None)
        assert main(["multiverse", "--spec", str(spec)]) == 1

    def test_partial_failure_writes_manifest(self, tmp_path):
        data = write_period_csv(tmp_path / "d.csv")
        # c1 in both roles is collinear; the other spec is fine
        spec = write_spec(tmp_path / "s.json", data, interest=["c1", "c2"], confounders={"c1": "identity"})
        out = tmp_path / "r.json"
        with pytest.warns(RuntimeWarning, match="collinear"):
            assert main(["multiverse", "--spec", str(spec), "--out-json", str(out)]) == 3
        manifest = json.loads((tmp_path / "r.json.failures.json").read_text())
        assert [m["spec_id"] for m in manifest] == ["c1|c1=identity"]
        assert json.loads(out.read_text())["K"] == 1


class TestExitCodes:
    def test_unknown_column(self, tmp_path):
        data = write_period_csv(tmp_path / "d.csv")
        spec = write_spec(tmp_path / "s.json", data, confounders={"age": "identity"})
        assert main(["multiverse", "--spec", str(spec)]) == 2

    def test_missing_data_file(self, tmp_path):
        spec = write_spec(tmp_path / "s.json", tmp_path / "nope.csv")
        assert main(["multiverse", "--spec", str(spec)]) == 2

    @pytest.mark.parametrize(
        "argv",
        [
            ["test", "--seed", "1"],
            ["multiverse", "--seed", "1"],
            ["simulate", "--scenario", "lm", "--seed", "1", "--alpha", "1.5"],
            ["simulate", "--scenario", "lm", "--seed", "1", "--methods", "magic"],
            ["simulate", "--scenario", "nope", "--seed", "1"],
        ],
    )
    def test_usage_errors(self, argv):
        # argparse errors exit directly, validation errors return the code
        try:
            code = main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == 1

    def test_all_specs_fail(self, tmp_path):
        data = write_period_csv(tmp_path / "d.csv")
        out = tmp_path / "r.csv"
        with pytest.warns(RuntimeWarning, match="collinear"):
            code = main(
                ["test", "--data", str(data), "--response", "y", "--interest", "c1", "--confounders", "c1",
                 "--seed", "1", "--out-csv", str(out)]
            )
        assert code == 3
        assert (tmp_path / "r.csv.failures.json").exists()


class TestTestCommand:
    def test_matches_library_call(self, tmp_path, capsys):
        data = write_period_csv(tmp_path / "d.csv", effect=0.5)
        out = tmp_path / "t.json"
        argv = ["test", "--data", str(data), "--response", "y", "--interest", "c2",
                "--confounders", "c1", "c3:bspline3", "--B", "300", "--seed", "5", "--out-json", str(out)]
        assert main(argv) == 0
        got = json.loads(out.read_text())
        spec = ModelSpec("c2", "y", "c2", confounders=(("c1", "identity"), ("c3", "bspline3")))
        ref = run_multiverse([spec], ingest_csv(data), B=300, seed=5).rows()[0]
        assert got["raw_p"] == pytest.approx(ref["raw_p"])
        assert got["t_obs"] == pytest.approx(ref["t_obs"])
        assert "p=" in capsys.readouterr().out


class TestCompareCommand:
    def test_outputs(self, tmp_path):
        data = write_period_csv(tmp_path / "d.csv", effect=0.8)
        spec = write_spec(tmp_path / "s.json", data, confounders={"c1": ["identity", "bspline3"]})
        c, j = tmp_path / "c.csv", tmp_path / "c.json"
        assert main(["compare", "--spec", str(spec), "--out-csv", str(c), "--out-json", str(j)]) == 0
        rows = read_csv(c)
        assert len(rows) == 6
        assert all(0 < float(r["bootstrap_p"]) <= 1 for r in rows)
        summary = json.loads(j.read_text())
        assert set(summary["bootstrap"]) == {"stouffer", "median", "bonferroni"}

    def test_glm_needs_flag(self, tmp_path):
        rng = np.random.default_rng(0)
        path = tmp_path / "b.csv"
        path.write_text("y,x\n" + "".join(f"{int(rng.random() < .5)},{rng.normal():.4f}\n" for _ in range(40)))
        spec = tmp_path / "s.json"
        spec.write_text(json.dumps({"data": str(path), "response": "y", "interest": "x", "family": "binomial", "seed": 1}))
        assert main(["compare", "--spec", str(spec), "--B", "50"]) == 1


class TestSimulateCommand:
    def test_rows_and_determinism(self, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"s{k}.csv"
            argv = ["simulate", "--scenario", "binomial", "--n", "60", "80", "--reps", "5", "--B", "40",
                    "--beta", "alt", "--seed", "2", "--out-csv", str(out)]
            assert main(argv) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        rows = read_csv(tmp_path / "s0.csv")
        assert tuple(rows[0]) == SIM_CSV_COLUMNS
        assert {r["n"] for r in rows} == {"60", "80"}
        assert all(r["beta"] == "0.5" for r in rows)

    def test_glm_bootstrap_requires_flag(self):
        argv = ["simulate", "--scenario", "poisson", "--reps", "1", "--B", "20", "--seed", "0", "--methods", "boot_stouffer"]
        assert main(argv) == 1
