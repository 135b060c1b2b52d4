"""End-to-end tests of the mi-lifecycle command line."""
import argparse
import json
from pathlib import Path

import numpy as np
import pytest

from cli.mi_lifecycle import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, float_list, float_pair, grid_shape, main, parse_args
from engine import pipeline
from engine.errors import NoConvergence
from engine.io import read_csv

SHORT = ["--T", "10", "--T-R", "5"]


class TestArgumentTypes:
    """Parsing of list, range and grid arguments."""

    def test_comma_list(self):
        """Comma-separated values."""
        assert float_list("3,5,10") == [3.0, 5.0, 10.0]

    def test_inclusive_range(self):
        """start:stop:step includes the end point."""
        assert float_list("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert len(float_list("0:1:0.05")) == 21

    def test_quarter_range(self):
        """start..stop steps by a quarter year."""
        values = float_list("0.25..10")
        assert values[0] == 0.25 and values[-1] == 10.0
        assert len(values) == 40

    def test_invalid_lists(self):
        """Garbage and empty ranges are rejected."""
        with pytest.raises(argparse.ArgumentTypeError):
            float_list("a,b")
        with pytest.raises(argparse.ArgumentTypeError):
            float_list("1:0:0.1")

    def test_pair_and_grid(self):
        """lo:hi pairs and N1xN2 grids."""
        assert float_pair("-0.1:0.2") == (-0.1, 0.2)
        assert grid_shape("41x21") == (41, 21)
        with pytest.raises(argparse.ArgumentTypeError):
            grid_shape("1x5")


class TestCommands:
    """Subcommands write their tables and a report."""

    def test_yield_curve(self, tmp_output_dir, capsys):
        """market yield-curve writes one row per maturity."""
        code = main(["market", "yield-curve", "--tau", "0.5,1,5", "--out", str(tmp_output_dir)])
        assert code == EXIT_OK
        df = read_csv(tmp_output_dir / "yield_curve.csv")
        assert list(df["tau"]) == [0.5, 1.0, 5.0]
        assert "yield_curve.csv" in capsys.readouterr().out

    def test_output_dir_from_environment(self, tmp_output_dir, monkeypatch):
        """Without --out the environment variable picks the directory."""
        target = tmp_output_dir / "from_env"
        monkeypatch.setenv("MI_LIFECYCLE_OUT", str(target))
        assert main(["market", "yield-curve", "--tau", "1"]) == EXIT_OK
        assert (target / "yield_curve.csv").exists()

    def test_solve_gammas(self, tmp_output_dir):
        """solve gammas starts at zero and reports existence."""
        code = main(["solve", "gammas", "--gamma", "10", "--theta", "0", *SHORT, "--out", str(tmp_output_dir)])
        assert code == EXIT_OK
        df = read_csv(tmp_output_dir / "gammas.csv")
        assert np.all(df.iloc[0, 1:].to_numpy() == 0.0)
        report = json.loads((tmp_output_dir / "report.json").read_text())
        assert report["existence"]["passed"] is True
        assert report["radon_gap"] < 1e-6

    def test_policy_eval(self, tmp_output_dir):
        """policy eval reproduces the myopic demand at the origin."""
        code = main(["policy", "eval", "--t", "5", "--gamma", "10", "--theta", "0", "--x1", "0", "--x2", "0",
                     "--out", str(tmp_output_dir)])
        assert code == EXIT_OK
        policy = json.loads((tmp_output_dir / "policy.json").read_text())
        np.testing.assert_allclose(policy["decomposition"]["SMD"], [-0.293846, 0.226313, 0.105499, 0.181331], atol=1e-3)
        assert policy["phase"] == "primary"

    def test_actuarial_table(self, tmp_output_dir):
        """actuarial table covers the requested ages."""
        code = main(["actuarial", "table", "--from-age", "35", "--to-age", "45", *SHORT, "--out", str(tmp_output_dir)])
        assert code == EXIT_OK
        assert len(read_csv(tmp_output_dir / "actuarial_table.csv")) == 11

    def test_synthetic_then_filter(self, tmp_output_dir):
        """A synthetic panel can be filtered straight away."""
        out = str(tmp_output_dir)
        assert main(["calibrate", "synthetic", "--months", "36", "--out", out]) == EXIT_OK
        assert main(["calibrate", "filter", "--data", str(tmp_output_dir / "panel.csv"), "--out", out]) == EXIT_OK
        assert len(read_csv(tmp_output_dir / "filtered_states.csv")) == 36

    def test_welfare_rerun_is_byte_identical(self, tmp_output_dir):
        """Two runs with the same seed write identical files."""
        args = ["simulate", "welfare", *SHORT, "--paths", "512", "--dt", "0.25",
                "--theta-grid", "0:0.5:0.5", "--block-size", "256"]
        first, second = tmp_output_dir / "a", tmp_output_dir / "b"
        assert main([*args, "--out", str(first)]) == EXIT_OK
        assert main([*args, "--out", str(second)]) == EXIT_OK
        for name in ("welfare.csv", "report.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()
        df = read_csv(first / "welfare.csv")
        assert df.loc[0, "loss"] == 0.0


class TestExitCodes:
    """Invalid input exits with 2."""

    def test_help(self, capsys):
        """--help exits cleanly."""
        assert main(["--help"]) == EXIT_OK

    def test_unknown_command(self, capsys):
        """argparse errors map to invalid input."""
        assert main(["forecast"]) == EXIT_INVALID

    def test_unknown_preset(self, tmp_output_dir, capsys):
        """Unknown presets are invalid input."""
        code = main(["solve", "gammas", "--preset", "mars-2100", *SHORT, "--out", str(tmp_output_dir)])
        assert code == EXIT_INVALID
        assert "Unknown preset" in capsys.readouterr().err

    def test_log_utility(self, tmp_output_dir, capsys):
        """gamma = 1 is rejected."""
        assert main(["solve", "gammas", "--gamma", "1", *SHORT, "--out", str(tmp_output_dir)]) == EXIT_INVALID

    def test_preset_and_params_file(self, tmp_output_dir, capsys):
        """A preset and a parameter file together are ambiguous."""
        code = main(["solve", "gammas", "--preset", "us-1961-2023", "--params", str(tmp_output_dir / "p.json"),
                     *SHORT, "--out", str(tmp_output_dir)])
        assert code == EXIT_INVALID

    def test_missing_data_file(self, tmp_output_dir, capsys):
        """A missing panel is invalid input."""
        code = main(["calibrate", "filter", "--data", str(tmp_output_dir / "absent.csv"), "--out", str(tmp_output_dir)])
        assert code == EXIT_INVALID

    def test_several_gammas_outside_welfare(self, tmp_output_dir, capsys):
        """Only the welfare command accepts a list of risk aversions."""
        code = main(["policy", "eval", "--gamma", "5,10", "--out", str(tmp_output_dir)])
        assert code == EXIT_INVALID

    def test_numerical_failure(self, tmp_output_dir, monkeypatch, capsys):
        """Model-level numerical failures exit with 3."""
        def fail(cfg):
            raise NoConvergence("optimizer stalled")

        monkeypatch.setattr(pipeline, "run_solve_gammas", fail)
        assert main(["solve", "gammas", *SHORT, "--out", str(tmp_output_dir)]) == EXIT_NUMERICAL
        assert "Numerical failure" in capsys.readouterr().err

    def test_unrelated_runtime_error_propagates(self, tmp_output_dir, monkeypatch):
        """A RuntimeError outside the model errors is a bug, not invalid input."""
        def fail(cfg):
            raise RuntimeError("worker pool broke")

        monkeypatch.setattr(pipeline, "run_solve_gammas", fail)
        with pytest.raises(RuntimeError, match="worker pool broke"):
            main(["solve", "gammas", *SHORT, "--out", str(tmp_output_dir)])


class TestCalibrateDefault:
    """`calibrate` without a subcommand fits."""

    def test_fit_is_default(self):
        """Options straight after calibrate go to the fit."""
        args = parse_args(["calibrate", "--data", "panel.csv", "--restarts", "10", "--out", "fits/params.json"])
        assert (args.group, args.command) == ("calibrate", "fit")
        assert args.restarts == 10
        assert args.params_out == Path("fits/params.json")
        assert args.out == Path("fits")

    def test_fit_alias_kept(self):
        """The explicit subcommand still parses, with --out as a directory."""
        args = parse_args(["calibrate", "fit", "--data", "panel.csv", "--out", "fits"])
        assert args.command == "fit"
        assert args.params_out is None
        assert args.out == Path("fits")

    def test_other_subcommands_untouched(self):
        """filter and synthetic are not rewritten."""
        assert parse_args(["calibrate", "synthetic", "--months", "12"]).command == "synthetic"

    def test_missing_data_is_invalid(self, capsys):
        """Bare calibrate still needs a panel."""
        assert main(["calibrate"]) == EXIT_INVALID

    @pytest.mark.slow
    def test_fit_writes_params_file(self, tmp_output_dir):
        """The fitted parameters land at the .json path given to --out."""
        out = str(tmp_output_dir)
        assert main(["calibrate", "synthetic", "--months", "36", "--out", out]) == EXIT_OK
        target = tmp_output_dir / "fit" / "params.json"
        code = main(["calibrate", "--data", str(tmp_output_dir / "panel.csv"), "--restarts", "1",
                     "--max-iter", "2", "--out", str(target)])
        assert code == EXIT_OK
        assert set(json.loads(target.read_text())) >= {"params", "chi", "loglik"}
        assert (target.parent / "report.json").exists()
