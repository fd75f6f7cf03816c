import json
from pathlib import Path

import numpy as np
import pytest

from conftest import truncate_lap
from gripscore import cli
from gripscore.telemetry import save_lap


@pytest.fixture(scope="module")
def lap_dir(tmp_path_factory, short_lap):
    d = tmp_path_factory.mktemp("laps")
    save_lap(truncate_lap(short_lap, 700), d / "lap1.csv")
    return d


@pytest.fixture(scope="module")
def analyzed(tmp_path_factory, lap_dir):
    out = tmp_path_factory.mktemp("analyzed")
    rc = cli.main(["analyze", "--input", str(lap_dir), "--out", str(out),
                   "--seed", "0", "--workers", "1"])
    assert rc == cli.EXIT_OK
    return out


class TestAnalyze:
    def test_outputs_exist(self, analyzed):
        assert (analyzed / "results.csv").exists()
        assert (analyzed / "summary.json").exists()
        assert (analyzed / "timing.json").exists()

    def test_results_rows_per_sample(self, analyzed):
        from gripscore.scores import read_results_csv

        rows = read_results_csv(analyzed / "results.csv")
        assert len(rows) == 700
        ok = [r for r in rows if r["flags"] == ("ok",)]
        assert len(ok) > 500
        for r in ok[:50]:
            for k in ("s_handling", "s_veh_traj", "s_tot"):
                assert 0.0 < r[k] <= 1.001

    def test_summary_content(self, analyzed):
        s = json.loads((analyzed / "summary.json").read_text())
        assert s["lap_metrics"]
        lap = next(iter(s["lap_metrics"].values()))
        for key in ("t_lap", "v_avg", "s_lap", "c_sum", "convergence_rate"):
            assert key in lap
        assert s["groups"]

    def test_empty_input_fails(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = cli.main(["analyze", "--input", str(empty), "--out", str(tmp_path / "o")])
        assert rc == cli.EXIT_VALIDATION

    def test_invalid_lap_skipped_and_reported(self, tmp_path, lap_dir):
        bad_dir = tmp_path / "mixed"
        bad_dir.mkdir()
        (bad_dir / "bad.csv").write_text("# nonsense\n")
        rc = cli.main(["analyze", "--input", str(bad_dir), "--out", str(tmp_path / "o2")])
        assert rc == cli.EXIT_VALIDATION

    def test_rerun_byte_identical(self, tmp_path, lap_dir):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            rc = cli.main(["analyze", "--input", str(lap_dir), "--out", str(out),
                           "--seed", "3", "--workers", "1"])
            assert rc == cli.EXIT_OK
            outs.append(out)
        assert (outs[0] / "results.csv").read_bytes() == (outs[1] / "results.csv").read_bytes()
        assert (outs[0] / "summary.json").read_bytes() == (outs[1] / "summary.json").read_bytes()

    def test_worker_count_does_not_change_results(self, tmp_path, lap_dir, analyzed):
        out = tmp_path / "w2"
        rc = cli.main(["analyze", "--input", str(lap_dir), "--out", str(out),
                       "--seed", "0", "--workers", "2"])
        assert rc == cli.EXIT_OK
        assert (out / "results.csv").read_bytes() == (analyzed / "results.csv").read_bytes()


class TestSynth:
    def test_writes_laps(self, tmp_path):
        out = tmp_path / "synth"
        rc = cli.main(["synth", "--track", "synt-b", "--driver", "D2", "--laps", "1",
                       "--seed", "5", "--out", str(out)])
        assert rc == cli.EXIT_OK
        assert len(list(out.glob("*.csv"))) == 1


class TestOracleCheck:
    def test_zero_samples_trivial_pass(self, capsys):
        assert cli.main(["oracle-check", "-n", "0"]) == cli.EXIT_OK

    def test_small_run_passes(self):
        assert cli.main(["oracle-check", "-n", "12", "--seed", "2"]) == cli.EXIT_OK

    def test_corrupted_tire_file(self, tmp_path):
        bad = tmp_path / "tires.par"
        bad.write_text("front.b_x = broken\n")
        assert cli.main(["oracle-check", "-n", "5", "--tires", str(bad)]) == cli.EXIT_VALIDATION

    def test_threshold_failure_exit_code(self):
        rc = cli.main(["oracle-check", "-n", "8", "--seed", "2", "--threshold", "1e-9"])
        assert rc == cli.EXIT_THRESHOLD


@pytest.fixture(scope="module")
def trained(tmp_path_factory, lap_dir, analyzed):
    out = tmp_path_factory.mktemp("trained")
    rc = cli.main([
        "train", "--input", str(lap_dir), "--results", str(analyzed / "results.csv"),
        "--out", str(out), "--seed", "1", "--feature-set", "m3", "--epochs", "3",
    ])
    assert rc == cli.EXIT_OK
    return out


class TestTrainPredict:
    def test_train_outputs(self, trained):
        assert (trained / "surrogate.npz").exists()
        metrics = json.loads((trained / "metrics.json").read_text())
        assert metrics["feature_set"] == "m3"
        assert metrics["epochs"] >= 1

    def test_train_rerun_byte_identical(self, tmp_path, lap_dir, analyzed):
        outs = []
        for name in ("t1", "t2"):
            out = tmp_path / name
            rc = cli.main([
                "train", "--input", str(lap_dir), "--results",
                str(analyzed / "results.csv"), "--out", str(out), "--seed", "1",
                "--feature-set", "m3", "--epochs", "2",
            ])
            assert rc == cli.EXIT_OK
            outs.append(out)
        assert (outs[0] / "surrogate.npz").read_bytes() == (outs[1] / "surrogate.npz").read_bytes()
        assert (outs[0] / "metrics.json").read_bytes() == (outs[1] / "metrics.json").read_bytes()

    def test_bad_feature_set_rejected(self, lap_dir, analyzed, tmp_path):
        import pytest as _pytest

        with _pytest.raises(SystemExit):
            cli.main([
                "train", "--input", str(lap_dir), "--results",
                str(analyzed / "results.csv"), "--out", str(tmp_path / "x"),
                "--feature-set", "m9",
            ])

    def test_predict(self, tmp_path, lap_dir, trained, analyzed):
        out = tmp_path / "pred"
        rc = cli.main([
            "predict", "--input", str(lap_dir), "--checkpoint",
            str(trained / "surrogate.npz"), "--results", str(analyzed / "results.csv"),
            "--out", str(out),
        ])
        assert rc == cli.EXIT_OK
        lines = (out / "predictions.csv").read_text().splitlines()
        assert len(lines) == 1 + 700
        metrics = json.loads((out / "metrics.json").read_text())
        for lap_metrics in metrics.values():
            assert np.isfinite(lap_metrics["rmse"])
        timing = json.loads((out / "timing.json").read_text())
        assert timing["predict_wall_s"] > 0.0

    def test_predict_missing_checkpoint(self, tmp_path, lap_dir):
        rc = cli.main([
            "predict", "--input", str(lap_dir), "--checkpoint",
            str(tmp_path / "nope.npz"), "--out", str(tmp_path / "p"),
        ])
        assert rc == cli.EXIT_VALIDATION


class TestReport:
    def test_two_groups_with_deltas(self, tmp_path):
        from gripscore import scores as sc
        from test_scores import _sample

        res = tmp_path / "results.csv"
        rows = [("l1", "D1", "t", _sample(0.9, idx=i)) for i in range(3)]
        rows += [("l2", "D8A", "t", _sample(0.6, idx=i)) for i in range(3)]
        sc.write_results_csv(res, rows)
        out = tmp_path / "rep"
        assert cli.main(["report", "--results", str(res), "--out", str(out)]) == cli.EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        assert len(rep["pro_vs_amateur"]) == 1
        assert rep["pro_vs_amateur"][0]["s_handling"] == pytest.approx(0.3)

    def test_single_driver_no_deltas(self, tmp_path):
        from gripscore import scores as sc
        from test_scores import _sample

        res = tmp_path / "results.csv"
        sc.write_results_csv(res, [("l1", "D1", "t", _sample(0.9))])
        out = tmp_path / "rep"
        assert cli.main(["report", "--results", str(res), "--out", str(out)]) == cli.EXIT_OK
        rep = json.loads((out / "report.json").read_text())
        assert rep["pro_vs_amateur"] == []

    def test_missing_results_fails(self, tmp_path):
        rc = cli.main(["report", "--results", str(tmp_path / "none.csv"),
                       "--out", str(tmp_path / "rep")])
        assert rc == cli.EXIT_VALIDATION
