import csv
import json
import os

import pytest

from honest_times import cli
from honest_times.experiment import (
    CSV_COLUMNS,
    EXIT_CONFIG_ERROR,
    EXIT_IO_ERROR,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    build_config,
    run,
    validate,
)

SMALL = dict(family="geometric_brownian", path_count=200, horizon=8.0, step=2**-6)


def cfg(tmp_path, **kw):
    values = dict(SMALL, output_dir=str(tmp_path / "out"))
    values.update(kw)
    return build_config(values)


class TestValidate:
    def test_default_is_valid(self):
        assert validate(ExperimentConfig()) == []

    def test_zero_paths(self):
        assert len(validate(ExperimentConfig(path_count=0))) == 1

    def test_unknown_test(self):
        assert len(validate(ExperimentConfig(tests=("foo",)))) == 1

    def test_refinement_must_decrease(self):
        problems = validate(ExperimentConfig(step=2**-10, refinement_steps=(2**-10, 2**-8)))
        assert any("decreasing" in p for p in problems)

    def test_counterexample_rejects_continuous_only_tests(self):
        problems = validate(ExperimentConfig(family="exp_jump", tests=("ks_uniform",)))
        assert len(problems) == 1

    def test_unknown_family(self):
        assert validate(ExperimentConfig(family="levy"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            build_config({"paths": 3})


class TestPrecedence:
    def test_overrides_beat_file_beat_defaults(self):
        c = build_config({"seed": 4, "path_count": 10}, {"seed": 9, "path_count": None})
        assert (c.seed, c.path_count, c.family) == (9, 10, "geometric_brownian")

    def test_comma_separated_tests(self):
        c = build_config({}, {"tests": "doob_tail, ks_uniform"})
        assert c.tests == ("doob_tail", "ks_uniform")


class TestRun:
    def test_doob_report(self, tmp_path):
        c = cfg(tmp_path, tests=["doob_tail"])
        result = run(c)
        with open(os.path.join(c.output_dir, "reports.json")) as fh:
            payload = json.load(fh)
        assert payload["seed"] == 0
        (report,) = payload["reports"]
        assert report["test_name"] == "doob_tail"
        assert report["metadata"]["levels"] == [2.0, 4.0, 8.0]
        assert len(report["metadata"]["frequencies"]) == 3
        assert result.exit_code == (EXIT_OK if report["passed"] else 1)

    def test_csv_schema_and_determinism(self, tmp_path):
        a = cfg(tmp_path, output_dir=str(tmp_path / "a"), bridge_max=True, tail_completion=True)
        b = cfg(tmp_path, output_dir=str(tmp_path / "b"), bridge_max=True, tail_completion=True, workers=2)
        run(a)
        run(b)
        with open(tmp_path / "a" / "samples.csv", "rb") as fa, open(tmp_path / "b" / "samples.csv", "rb") as fb:
            raw = fa.read()
            assert raw == fb.read()
        rows = list(csv.reader(raw.decode().splitlines()))
        assert tuple(rows[0]) == CSV_COLUMNS
        assert len(rows) == 201
        assert [int(r[0]) for r in rows[1:]] == list(range(200))

    def test_plotdata(self, tmp_path):
        c = cfg(tmp_path, emit=["plotdata"], tests=["ks_uniform"], bridge_max=True, tail_completion=True)
        run(c)
        for name in ("tail.csv", "k_cdf.csv"):
            assert os.path.exists(os.path.join(c.output_dir, "plotdata", name))
        assert not os.path.exists(os.path.join(c.output_dir, "samples.csv"))

    def test_counterexample_is_expected_failure_mode(self, tmp_path):
        c = cfg(tmp_path, family="exp_jump", step=None, horizon=None, path_count=1000, tests=["uniqueness_and_z_one"])
        result = run(c)
        (report,) = result.reports
        assert report.metadata["unattained"] == 1000
        assert report.passed
        assert result.exit_code == EXIT_OK
        assert all(result.rows["rho_min_infinite"])

    def test_invalid_config_exit_code(self, tmp_path):
        assert run(cfg(tmp_path, path_count=0)).exit_code == EXIT_CONFIG_ERROR

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        c = cfg(tmp_path, output_dir=str(blocker / "sub"), path_count=20)
        assert run(c).exit_code == EXIT_IO_ERROR

    def test_failing_test_exit_code(self, tmp_path):
        # A horizon of one leaves most of the supremum unobserved, so the tail is far too thin.
        c = cfg(tmp_path, horizon=1.0, step=2**-10, path_count=2000, tests=["doob_tail"])
        assert run(c).exit_code == 1


class TestCli:
    def test_run_and_validate(self, tmp_path, capsys):
        conf = tmp_path / "c.yaml"
        conf.write_text("family: geometric_brownian\nhorizon: 8\nstep: 0.015625\ntests: [doob_tail]\n")
        out = tmp_path / "o"
        code = cli.main(["run", str(conf), "--paths", "100", "--out", str(out), "--seed", "3"])
        assert code in (0, 1)
        payload = json.loads((out / "reports.json").read_text())
        assert payload["seed"] == 3
        assert payload["config"]["path_count"] == 100
        assert cli.main(["validate", str(conf)]) == EXIT_OK
        assert cli.main(["validate", str(conf), "--tests", "foo"]) == EXIT_CONFIG_ERROR

    def test_nested_config_rejected(self, tmp_path):
        conf = tmp_path / "c.yaml"
        conf.write_text("generator:\n  family: gbm\n")
        assert cli.main(["validate", str(conf)]) == EXIT_CONFIG_ERROR

    def test_missing_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG_ERROR

    def test_demo_counterexample(self, tmp_path, capsys):
        code = cli.main(["demo-counterexample", "--paths", "300", "--out", str(tmp_path / "d")])
        assert code == EXIT_OK
        assert "counterexample_unattained" in capsys.readouterr().out
