import json
import math

import numpy as np
import pytest

jsonschema = pytest.importorskip("jsonschema")

from phaseeiv.cli import (
    Dataset,
    RunConfig,
    build_regression,
    complete_cases,
    detrend_hourly,
    load_csv,
    load_schema,
    main,
    write_csv,
)
from phaseeiv.errors import ConfigError, DataError, ParseError


def write(path, text):
    path.write_text(text)
    return path


def noiseless_csv(path, n=60, seed=0, hours=False):
    rng = np.random.default_rng(seed)
    w = rng.exponential(size=n)
    y = 1.0 + 3.0 * w
    lines = ["y,w" + (",hour" if hours else "")]
    for i in range(n):
        lines.append(f"{float(y[i])!r},{float(w[i])!r}" + (f",{i % 24 + 1}" if hours else ""))
    return write(path, "\n".join(lines) + "\n")


class TestLoad:
    def test_sentinel(self, tmp_path):
        p = write(tmp_path / "a.csv", "a,b\n1,-200\n-200,2\n3,-200\n4,5\n")
        ds = load_csv(p)
        assert ds.missing_counts == {"a": 1, "b": 2}
        assert ds.n_rows == 4 and np.isnan(ds.columns["b"][0])

    def test_empty_cells_and_no_sentinel(self, tmp_path):
        p = write(tmp_path / "a.csv", "a,b\n1,\n-200,2\n")
        ds = load_csv(p, sentinel=None)
        assert ds.columns["a"][1] == -200.0 and np.isnan(ds.columns["b"][0])

    def test_empty_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path / "e.csv", ""))

    def test_bad_cell(self, tmp_path):
        with pytest.raises(ParseError) as ei:
            load_csv(write(tmp_path / "b.csv", "a,b\n1,2\n3,x\n"))
        assert ei.value.row == 3 and ei.value.column == "b"

    def test_missing_column(self, tmp_path):
        with pytest.raises(ConfigError):
            load_csv(write(tmp_path / "c.csv", "a,b\n1,2\n"), columns=["a", "z"])

    def test_unrelated_text_columns_ignored(self, tmp_path):
        p = write(tmp_path / "d.csv", "date;a;b\n10/03/2004;1,5;2\n11/03/2004;2,5;3\n")
        ds = load_csv(p, delimiter=";", decimal=",", columns=["a", "b"])
        np.testing.assert_array_equal(ds.columns["a"], [1.5, 2.5])

    def test_bad_hours(self, tmp_path):
        with pytest.raises(ParseError):
            load_csv(write(tmp_path / "h.csv", "a,h\n1,0\n"), hour_col="h")
        with pytest.raises(ParseError):
            load_csv(write(tmp_path / "h.csv", "a,h\n1,2.5\n"), hour_col="h")

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal((20, 3)) * 10.0 ** rng.integers(-8, 8, size=(20, 3))
        vals[3, 1] = np.nan
        ds = Dataset({"a": vals[:, 0], "b": vals[:, 1], "c": vals[:, 2]})
        write_csv(ds, tmp_path / "o.csv")
        back = load_csv(tmp_path / "o.csv")
        for c in "abc":
            got, ref = back.columns[c], ds.columns[c]
            ok = np.isfinite(ref)
            assert np.array_equal(np.isfinite(got), ok)
            np.testing.assert_allclose(got[ok], ref[ok], rtol=1e-12)
            assert np.array_equal(got[ok], ref[ok])


class TestCompleteCases:
    def test_identity(self):
        ds = Dataset({"a": np.arange(5.0), "b": np.ones(5)})
        out = complete_cases(ds, ["a", "b"])
        assert np.array_equal(out.columns["a"], ds.columns["a"])

    def test_hand_case(self):
        a = np.arange(10.0)
        b = np.ones(10)
        a[2] = np.nan
        b[7] = np.nan
        ds = Dataset({"a": a, "b": b, "other": np.full(10, np.nan)}, hour_index=np.arange(1, 11))
        out = complete_cases(ds, ["a", "b"])
        np.testing.assert_array_equal(out.columns["a"], [0, 1, 3, 4, 5, 6, 8, 9])
        np.testing.assert_array_equal(out.hour_index, [1, 2, 4, 5, 6, 7, 9, 10])

    def test_none_left(self):
        ds = Dataset({"y": np.full(4, np.nan), "w": np.ones(4)})
        with pytest.raises(DataError):
            complete_cases(ds, ["y", "w"])


class TestDetrend:
    def hours48(self):
        return np.arange(48) % 24 + 1

    def test_two_days(self):
        x = np.arange(48.0)
        out = detrend_hourly(Dataset({"x": x}, self.hours48()), "x")
        # hour k holds k-1 and k+23, mean k+11
        np.testing.assert_array_equal(out, np.r_[np.full(24, -12.0), np.full(24, 12.0)])

    def test_missing_stays_missing(self):
        x = np.arange(48.0)
        x[30] = np.nan
        out = detrend_hourly(Dataset({"x": x}, self.hours48()), "x")
        assert np.isnan(out[30]) and out[6] == 0.0
        assert out[5] == -12.0

    def test_constant_and_idempotent(self):
        h = self.hours48()
        assert np.all(detrend_hourly(Dataset({"x": np.full(48, 3.7)}, h), "x") == 0.0)
        x = np.random.default_rng(2).standard_normal(48) * 50 + 100
        once = detrend_hourly(Dataset({"x": x}, h), "x")
        twice = detrend_hourly(Dataset({"x": once}, h), "x")
        np.testing.assert_allclose(twice, once, atol=1e-12)
        for k in range(1, 25):
            assert abs(once[h == k].mean()) <= 1e-12

    def test_empty_class(self):
        x = np.arange(48.0)
        x[[4, 28]] = np.nan
        with pytest.raises(DataError, match="hour class 5"):
            detrend_hourly(Dataset({"x": x}, self.hours48()), "x")

    def test_needs_hours(self):
        with pytest.raises(ConfigError):
            detrend_hourly(Dataset({"x": np.ones(3)}), "x")

    def test_dataset_hours_range(self):
        with pytest.raises(DataError):
            Dataset({"x": np.ones(2)}, hour_index=[0, 1])


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            RunConfig("plot")
        with pytest.raises(ConfigError):
            RunConfig("fit", input="a.csv", y_col="y")
        with pytest.raises(ConfigError):
            RunConfig("fit", input="a.csv", y_col="y", w_cols=("w",), w_divisor=0.0)
        with pytest.raises(ConfigError):
            RunConfig("detrend", input="a.csv")


def validate(record, name):
    jsonschema.validate(record, load_schema(name))


class TestMain:
    def test_fit_noiseless(self, tmp_path):
        p = noiseless_csv(tmp_path / "n.csv")
        out = tmp_path / "fit.json"
        assert main(["fit", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--output", str(out), "--quiet"]) == 0
        rec = json.loads(out.read_text())
        validate(rec, "fit")
        assert rec["coefficients"]["b0"] == pytest.approx(1.0, abs=1e-4)
        assert rec["coefficients"]["b1"][0] == pytest.approx(3.0, abs=1e-4)
        assert rec["method"] == "phase" and rec["t_star"] > 0

    def test_fit_deterministic(self, tmp_path):
        p = noiseless_csv(tmp_path / "n.csv")
        args = ["fit", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--quiet", "--output"]
        main(args + [str(tmp_path / "a.json")])
        main(args + [str(tmp_path / "b.json")])
        assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()

    def test_bootstrap_block(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 96
        x = rng.exponential(size=n)
        w, y = x + 0.3 * rng.standard_normal(n), 2.0 * x + 0.4 * rng.standard_normal(n)
        p = tmp_path / "b.csv"
        p.write_text("y,w,hour\n" + "".join(f"{float(a)!r},{float(b)!r},{i % 24 + 1}\n"
                                           for i, (a, b) in enumerate(zip(y, w))))
        for kind in ("plugin", "full"):
            out = tmp_path / f"{kind}.json"
            rc = main(["bootstrap", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--hour-col", "hour",
                       "--no-intercept", "--bootstrap", kind, "--block-length", "12", "--B", "10",
                       "--output", str(out), "--quiet"])
            assert rc == 0
            rec = json.loads(out.read_text())
            validate(rec, "bootstrap")
            assert rec["coefficients"]["b0"] == 0.0
            assert rec["bootstrap"]["mode"] == "block"
            assert rec["covariance"]["standard_errors"][1] > 0

    def test_gmm(self, tmp_path):
        rng = np.random.default_rng(4)
        x = rng.exponential(size=300)
        p = tmp_path / "g.csv"
        p.write_text("y,w\n" + "".join(f"{float(1 + 3 * a + 0.3 * e)!r},{float(a + 0.2 * u)!r}\n"
                                       for a, e, u in zip(x, rng.standard_normal(300), rng.standard_normal(300))))
        out = tmp_path / "g.json"
        assert main(["gmm", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--output", str(out), "--quiet"]) == 0
        rec = json.loads(out.read_text())
        validate(rec, "gmm")
        assert set(rec["extras"]["theta"]) >= {"mu_X", "sigma2_U", "mu_X3"}

    def test_simulate(self, tmp_path):
        out = tmp_path / "sim.csv"
        rc = main(["simulate", "--x-dist", "exponential1", "--n", "50", "--replicates", "2",
                   "--methods", "naive,disattenuated", "--output", str(out), "--quiet"])
        assert rc == 0
        rows = out.read_text().splitlines()
        assert rows[0].startswith("scenario_id,method,coefficient") and len(rows) == 5
        validate(json.loads(out.with_suffix(".json").read_text()), "simulate")

    def test_simulate_scenario_file(self, tmp_path):
        sf = tmp_path / "s.json"
        sf.write_text(json.dumps([{"x_dist": "bimodal", "n": 40, "replicates": 2},
                                  {"x_dist": "half_normal", "err_dist": "laplace", "n": 40, "replicates": 2}]))
        out = tmp_path / "sim.csv"
        assert main(["simulate", "--scenario-file", str(sf), "--methods", "naive", "--output", str(out), "--quiet"]) == 0
        assert len(out.read_text().splitlines()) == 1 + 2 * 2

    def test_detrend(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("x,hour\n" + "".join(f"{i},{i % 24 + 1}\n" for i in range(48)))
        out = tmp_path / "o.csv"
        assert main(["detrend", "--input", str(p), "--hour-col", "hour", "--columns", "x",
                     "--output", str(out), "--quiet"]) == 0
        ds = load_csv(out, hour_col="hour")
        np.testing.assert_array_equal(ds.columns["x"], np.r_[np.full(24, -12.0), np.full(24, 12.0)])
        np.testing.assert_array_equal(ds.hour_index, np.arange(48) % 24 + 1)

    def test_w_divisor(self, tmp_path):
        p = noiseless_csv(tmp_path / "n.csv")
        out = tmp_path / "fit.json"
        main(["fit", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--w-divisor", "100",
              "--output", str(out), "--quiet"])
        assert json.loads(out.read_text())["coefficients"]["b1"][0] == pytest.approx(300.0, rel=1e-5)

    def test_error_record(self, tmp_path, capsys):
        p = write(tmp_path / "bad.csv", "y,w\n1,2\n3,oops\n")
        rc = main(["fit", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--quiet"])
        assert rc == 2
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        validate(rec, "error")
        assert rec["error"] == "ParseError" and rec["row"] == 3 and rec["subcommand"] == "fit"

    def test_missing_input(self, tmp_path, capsys):
        rc = main(["fit", "--input", str(tmp_path / "none.csv"), "--y-col", "y", "--w-cols", "w", "--quiet"])
        assert rc == 2
        assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ConfigError"

    def test_numerical_failure_exit_1(self, tmp_path, capsys):
        p = write(tmp_path / "c.csv", "y,w\n" + "".join(f"2,{i}\n" for i in range(10)))
        rc = main(["fit", "--input", str(p), "--y-col", "y", "--w-cols", "w", "--quiet"])
        assert rc == 1
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert rec["error"] == "TStarSelectionError" and "t_max" in rec

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as ei:
            main(["fit", "--kernel", "k9"])
        assert ei.value.code == 2
        assert json.loads(capsys.readouterr().err.splitlines()[0])["subcommand"] == "usage"


def test_build_regression_roles():
    ds = Dataset({"y": np.arange(4.0), "w1": np.ones(4), "w2": np.arange(4.0) ** 2, "z": np.arange(4.0) % 2})
    d = build_regression(ds, "y", ["w1", "w2"], ["z"])
    assert (d.p1, d.p2) == (2, 1)
