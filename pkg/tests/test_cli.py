import json
import math
import subprocess
import sys

import numpy as np
import pytest

from zicp.cli import run
from zicp.conformal import interval_bounds, load_conformal
from zicp.gbt import load_model
from zicp.records import load_samples

LIGHT = ["--max-depth", "2", "--n-rounds", "30", "--learning-rate", "0.3"]

SPEC_DOC = {
    "n_patients": 120,
    "visits_per_patient": [2, 2],
    "horizon": "6M",
    "target_zero_rate": 0.75,
    "zero_prob_fn": [0.0, 0.9, -0.4, 0.7, -0.5, 1.1, -0.6],
    "effect_fn": [0.3, -0.08, -0.12, 0.05, 0.15, -0.1, 0.06],
    "noise_sd_base": 0.25,
    "horizon_noise_multiplier": {"6M": 1.0, "1Y": 1.3, "2Y": 1.7, "4Y": 2.2},
    "winsor_pcts": [0.05, 0.95],
    "seed": 3,
}


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("ZICP_SEED", raising=False)


@pytest.fixture
def small_spec(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SPEC_DOC))
    return path


def _datagen(tmp_path, spec, name="samples.csv", seed=None):
    out = tmp_path / name
    argv = ["datagen", "--spec", str(spec), "--out", str(out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    assert run(argv) == 0
    return out


def _data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert run(["datagen", "--bogus"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err

    def test_no_command_prints_usage(self, capsys):
        assert run([]) == 1
        assert "usage:" in capsys.readouterr().err

    def test_missing_input_file_is_data_error(self, tmp_path, capsys):
        out = tmp_path / "x.csv"
        assert run(["datagen", "--spec", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
        assert "nope.json" in capsys.readouterr().err

    def test_version(self, capsys):
        assert run(["--version"]) == 0
        assert capsys.readouterr().out.startswith("zicp ")

    def test_version_subprocess(self):
        proc = subprocess.run(["zicp", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.startswith("zicp ")

    def test_bad_alpha_is_usage_error(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec)
        code = run(["sweep", "--data", str(data), "--alpha", "1.5", "--out", str(tmp_path / "s.csv")])
        assert code == 1
        assert "alpha" in capsys.readouterr().err

    def test_bad_grid_is_usage_error(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec)
        code = run(["sweep", "--data", str(data), "--grid", "0:0.9:-0.1", "--out", str(tmp_path / "s.csv")])
        assert code == 1
        assert "bad grid" in capsys.readouterr().err

    def test_unknown_method_is_usage_error(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec)
        code = run(["sweep", "--data", str(data), "--method", "bogus", "--out", str(tmp_path / "s.csv")])
        assert code == 1
        assert "unknown method" in capsys.readouterr().err

    def test_unknown_config_key_is_usage_error(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec)
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"no_such_option": 1}')
        code = run(["sweep", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "s.csv")])
        assert code == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_invalid_config_json_is_data_error(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec)
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        code = run(["sweep", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "s.csv")])
        assert code == 2
        assert "invalid JSON" in capsys.readouterr().err


class TestDatagen:
    def test_deterministic_bytes(self, tmp_path, small_spec):
        out = _datagen(tmp_path, small_spec, "a.csv", seed=7)
        first = out.read_bytes()
        sidecar_first = (tmp_path / "a.features.txt").read_bytes()
        _datagen(tmp_path, small_spec, "a.csv", seed=7)
        assert out.read_bytes() == first
        assert (tmp_path / "a.features.txt").read_bytes() == sidecar_first

    def test_seed_changes_data(self, tmp_path, small_spec):
        a = _datagen(tmp_path, small_spec, "a.csv", seed=7)
        b = _datagen(tmp_path, small_spec, "c.csv", seed=8)
        assert _data_lines(a) != _data_lines(b)

    def test_env_seed_fallback(self, tmp_path, small_spec, monkeypatch):
        flagged = _datagen(tmp_path, small_spec, "flag.csv", seed=55)
        monkeypatch.setenv("ZICP_SEED", "55")
        env = _datagen(tmp_path, small_spec, "env.csv")
        assert _data_lines(env) == _data_lines(flagged)

    def test_output_loads_back(self, tmp_path, small_spec):
        out = _datagen(tmp_path, small_spec, seed=1)
        samples, feature_names = load_samples(out)
        assert len(samples) == SPEC_DOC["n_patients"]
        assert len(feature_names) == 6
        assert all(len(s.features) == 6 for s in samples)

    def test_bundled_default_spec(self, tmp_path, capsys):
        out = tmp_path / "default.csv"
        assert run(["datagen", "--out", str(out), "--seed", "2"]) == 0
        assert "wrote 2000 samples" in capsys.readouterr().out

    def test_header_carries_seed_and_config_hash(self, tmp_path, small_spec):
        out = _datagen(tmp_path, small_spec, seed=9)
        first = out.read_text().splitlines()[0]
        assert first.startswith("# zicp ")
        assert "seed=9" in first and "config=" in first


class TestLedd:
    VISITS_HEADER = "patient_id,visit_date,drug_name,dose_mg,route,department,length_of_stay_days"

    def _visits(self, tmp_path):
        # three unchanged patients keep exact zeros inside the winsor band;
        # B's +50% is the sample maximum, so the 95th-percentile clamp bites
        rows = [
            self.VISITS_HEADER,
            "A,2020-01-01,levodopa,300,oral,neurology,2",
            "A,2020-07-01,levodopa,300,oral,neurology,1",
            "B,2020-01-01,levodopa,200,oral,neurology,3",
            "B,2020-07-01,levodopa,300,oral,neurology,2",
            "C,2020-01-01,levodopa,400,oral,neurology,1",
            "C,2020-07-01,levodopa,400,oral,neurology,1",
            "D,2020-01-01,levodopa,150,oral,neurology,2",
            "D,2020-07-01,levodopa,150,oral,neurology,2",
            "E,2020-01-01,mystery-drug,100,oral,neurology,1",
        ]
        path = tmp_path / "visits.csv"
        path.write_text("\n".join(rows) + "\n")
        return path

    def _demographics(self, tmp_path):
        path = tmp_path / "demo.csv"
        path.write_text("patient_id,age_years,sex\nA,70,female\nB,65,male\n")
        return path

    def test_end_to_end(self, tmp_path, capsys):
        visits = self._visits(tmp_path)
        demo = self._demographics(tmp_path)
        out = tmp_path / "samples.csv"
        code = run(
            ["ledd", "--visits", str(visits), "--demographics", str(demo),
             "--horizon", "6M", "--out", str(out)]
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "skipped (unknown drug)" in captured.err
        assert "1 rejected" in captured.out
        samples, _ = load_samples(out)
        by_pid = {s.patient_id: s for s in samples}
        assert set(by_pid) == {"A", "B", "C", "D"}
        for pid in ("A", "C", "D"):
            assert by_pid[pid].is_zero and by_pid[pid].target == 0.0
        # sorted targets [0,0,0,log1p(.5)]: the 0.95 quantile interpolates
        # at index 2.85, so B is clamped to 0.85 * log1p(0.5)
        assert by_pid["B"].target == pytest.approx(0.85 * math.log1p(0.5), rel=1e-12)
        assert by_pid["A"].features[0] == 70.0 and by_pid["A"].features[1] == 1.0
        assert by_pid["B"].features[1] == 0.0

    def test_input_files_not_mutated(self, tmp_path):
        visits = self._visits(tmp_path)
        before = visits.read_bytes()
        out = tmp_path / "samples.csv"
        assert run(["ledd", "--visits", str(visits), "--out", str(out)]) == 0
        assert visits.read_bytes() == before

    def test_malformed_header_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("wrong,header\n")
        assert run(["ledd", "--visits", str(bad), "--out", str(tmp_path / "o.csv")]) == 2
        assert "malformed header" in capsys.readouterr().err


class TestTrain:
    def test_classifier_round_trip(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec, seed=4)
        out = tmp_path / "clf.json"
        code = run(["train", "--data", str(data), "--task", "classify", "--out", str(out), *LIGHT])
        assert code == 0
        assert "train AUC" in capsys.readouterr().out
        model = load_model(out)
        samples, _ = load_samples(data)
        probs = model.predict_proba(np.array([samples[0].features]))
        assert 0.0 <= float(probs[0]) <= 1.0

    def test_regressor_round_trip(self, tmp_path, small_spec, capsys):
        data = _datagen(tmp_path, small_spec, seed=4)
        out = tmp_path / "reg.json"
        code = run(["train", "--data", str(data), "--task", "regress", "--out", str(out), *LIGHT])
        assert code == 0
        assert "train RMSE" in capsys.readouterr().out
        assert load_model(out).objective == "squared"

    def test_all_zero_targets_is_data_error(self, tmp_path, capsys):
        spec = tmp_path / "allzero.json"
        spec.write_text(json.dumps({**SPEC_DOC, "target_zero_rate": 1.0}))
        data = _datagen(tmp_path, spec, "zero.csv")
        code = run(["train", "--data", str(data), "--task", "regress", "--out", str(tmp_path / "m.json"), *LIGHT])
        assert code == 2
        assert "nothing to regress" in capsys.readouterr().err


class TestConformal:
    def test_fit_and_load(self, tmp_path, small_spec):
        data = _datagen(tmp_path, small_spec, seed=5)
        out = tmp_path / "conf.json"
        code = run(
            ["conformal", "--data", str(data), "--method", "cvplus", "--alpha", "0.2",
             "--nonzero-only", "--out", str(out), *LIGHT]
        )
        assert code == 0
        model = load_conformal(out)
        assert model.method == "cvplus"
        samples, _ = load_samples(data)
        X = np.array([s.features for s in samples[:5]])
        lo, hi = interval_bounds(model, X)
        assert np.all(lo <= hi)

    def test_too_few_samples_is_data_error(self, tmp_path, capsys):
        spec = tmp_path / "tiny.json"
        spec.write_text(json.dumps({**SPEC_DOC, "n_patients": 3}))
        data = _datagen(tmp_path, spec, "tiny.csv")
        code = run(["conformal", "--data", str(data), "--out", str(tmp_path / "c.json"), *LIGHT])
        assert code == 2
        assert "too few samples" in capsys.readouterr().err


class TestSweep:
    def test_default_grid_yields_20_rows_per_method(self, tmp_path, small_spec):
        data = _datagen(tmp_path, small_spec, seed=6)
        out = tmp_path / "sweep.csv"
        code = run(
            ["sweep", "--data", str(data), "--method", "naive,cvplus", "--alpha", "0.2",
             "--grid", "0:0.95:0.05", "--out", str(out), *LIGHT]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        data_rows = [ln for ln in lines if not ln.startswith("#")]
        assert data_rows[0].split(",")[:4] == ["r", "mode", "method", "alpha"]
        assert len(data_rows) - 1 == 2 * 20
        methods = [row.split(",")[2] for row in data_rows[1:]]
        assert methods.count("naive") == 20 and methods.count("cvplus") == 20
        selected = [ln for ln in lines if ln.startswith("# selected method=")]
        assert len(selected) == 2

    def test_reruns_are_byte_identical_and_input_untouched(self, tmp_path, small_spec):
        data = _datagen(tmp_path, small_spec, seed=6)
        before = data.read_bytes()
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--data", str(data), "--grid", "0,0.5", "--seed", "1",
                "--out", str(out), *LIGHT]
        assert run(argv) == 0
        first = out.read_bytes()
        assert run(argv) == 0
        assert out.read_bytes() == first
        assert data.read_bytes() == before

    def test_flags_override_config_over_defaults(self, tmp_path, small_spec):
        data = _datagen(tmp_path, small_spec, seed=6)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"alpha": 0.3, "grid": "0:0.4:0.2"}))
        out = tmp_path / "sweep.csv"
        code = run(
            ["sweep", "--data", str(data), "--config", str(cfg), "--alpha", "0.25",
             "--out", str(out), *LIGHT]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        rows = [ln.split(",") for ln in lines if not ln.startswith("#")][1:]
        assert len(rows) == 3  # grid from config file
        assert {row[0] for row in rows} == {"0.0", "0.2", "0.4"}
        assert all(row[3] == "0.25" for row in rows)  # alpha from flag
        assert all(row[2] == "cvplus" for row in rows)  # method from defaults
        config_line = next(ln for ln in lines if ln.startswith("# config "))
        assert '"alpha": 0.25' in config_line


class TestEvaluate:
    def test_single_row_summary(self, tmp_path, small_spec):
        data = _datagen(tmp_path, small_spec, seed=8)
        out = tmp_path / "eval.csv"
        code = run(
            ["evaluate", "--data", str(data), "--method", "cvplus", "--cutoff", "0.5",
             "--out", str(out), *LIGHT]
        )
        assert code == 0
        rows = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        header = rows[0].split(",")
        assert header[:6] == ["method", "cutoff", "horizon", "coverage", "mean_length", "calibration_error"]
        assert len(rows) == 2
        values = dict(zip(header, rows[1].split(",")))
        assert values["method"] == "cvplus"
        assert values["horizon"] == "6M"
        assert 0.0 <= float(values["coverage"]) <= 1.0
        assert float(values["calibration_error"]) == float(values["coverage"]) - 0.8
        assert int(values["n_test"]) > 0


class TestReport:
    def _argv(self, spec, out_dir, jobs="1"):
        return [
            "report", "--spec", str(spec), "--horizons", "6M,1Y", "--methods", "naive,cvplus",
            "--grid", "0,0.5", "--jobs", jobs, "--seed", "3", "--out-dir", str(out_dir), *LIGHT,
        ]

    def test_emits_expected_files(self, tmp_path, small_spec):
        out_dir = tmp_path / "report"
        assert run(self._argv(small_spec, out_dir)) == 0
        names = sorted(p.name for p in out_dir.iterdir())
        assert names == [
            "calibration.csv", "coverage_length_1Y.svg", "coverage_length_6M.svg",
            "frontier.csv", "table3.csv",
        ]
        table_rows = [ln for ln in (out_dir / "table3.csv").read_text().splitlines() if not ln.startswith("#")]
        assert table_rows[0] == "Time,Cutoff,RMSE,naive_coverage,naive_length,cvplus_coverage,cvplus_length"
        assert len(table_rows) - 1 == 2 * 2  # horizons x cutoffs

    def test_parallel_run_is_byte_identical(self, tmp_path, small_spec):
        out_dir = tmp_path / "report"
        assert run(self._argv(small_spec, out_dir, jobs="1")) == 0
        snapshot = {p.name: p.read_bytes() for p in out_dir.iterdir()}
        assert run(self._argv(small_spec, out_dir, jobs="2")) == 0
        assert {p.name: p.read_bytes() for p in out_dir.iterdir()} == snapshot


class TestSignificance:
    def test_two_run_smoke(self, tmp_path, small_spec, capsys):
        out = tmp_path / "sig.csv"
        runs_out = tmp_path / "runs.csv"
        code = run(
            ["significance", "--spec", str(small_spec), "--method", "cvplus", "--n-runs", "2",
             "--cutoff", "0.5", "--seed", "1", "--out", str(out), "--runs-out", str(runs_out), *LIGHT]
        )
        assert code == 0
        assert "two_stage_vs_single:interval_length" in capsys.readouterr().out
        sig_rows = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert sig_rows[0] == "comparison,t,p,d,ci_low,ci_high"
        assert len(sig_rows) == 3
        run_rows = [ln for ln in runs_out.read_text().splitlines() if not ln.startswith("#")]
        assert len(run_rows) == 3  # header + 2 runs
