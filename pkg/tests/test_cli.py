import io
import json

import pandas as pd
import pytest

from ohmstat import cli
from ohmstat.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, build_config, build_parser, main
from ohmstat.config import get_settings
from ohmstat.exceptions import SolverError

CEFF_EXAMPLE = ["ceff", "--dim", "1", "--side", "8", "--law", "constant", "--lambda", "0.5",
                "--t", "1", "--replicas", "1", "--seed", "7"]


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in ("OHMSTAT_THREADS", "OHMSTAT_TOL", "OHMSTAT_LOG_LEVEL", "OHMSTAT_QUADRATURE_NODES"):
        monkeypatch.delenv(name, raising=False)


@pytest.mark.integration
class TestCeffCommand:
    def test_homogeneous_path(self, capsys):
        assert main(CEFF_EXAMPLE) == EXIT_OK
        frame = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert list(frame.columns) == ["replica", "L", "seed", "ceff"]
        assert len(frame) == 1
        assert frame["ceff"][0] == pytest.approx(9.0)

    def test_json_output(self, capsys):
        assert main(CEFF_EXAMPLE + ["--format", "json"]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["records"][0]["ceff"] == pytest.approx(9.0)
        assert payload["summaries"]["8"]["n"] == 1

    def test_output_file(self, tmp_path):
        out = tmp_path / "ceff.csv"
        assert main(CEFF_EXAMPLE + ["--out", str(out)]) == EXIT_OK
        assert pd.read_csv(out)["ceff"][0] == pytest.approx(9.0)

    def test_config_file_and_flags(self, tmp_path, capsys):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"d": 1, "sides": [4], "law": "constant", "replicas": 3}))
        assert main(["ceff", "--config", str(path), "--replicas", "2"]) == EXIT_OK
        frame = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert len(frame) == 2
        assert frame["ceff"].tolist() == pytest.approx([5.0, 5.0])

    def test_numerical_failure(self, monkeypatch):
        def broken(config):
            raise SolverError("no convergence")

        monkeypatch.setattr(cli, "run_ceff", broken)
        assert main(CEFF_EXAMPLE) == EXIT_NUMERICAL


@pytest.mark.integration
class TestInvalidInput:
    @pytest.mark.parametrize("argv", [
        ["ceff", "--bogus"],
        ["ceff", "--lambda", "1.5"],
        ["ceff", "--dim", "4"],
        ["ceff", "--side", "1"],
        ["ceff", "--t", "a,b"],
        ["frobnicate"],
        [],
    ])
    def test_exit_code(self, argv):
        assert main(argv) == EXIT_INVALID

    def test_too_few_replicas_for_clt(self):
        argv = ["clt", "--dim", "1", "--side", "4", "--replicas", "10"]
        assert main(argv) == EXIT_INVALID

    def test_variance_scaling_needs_three_sides(self):
        assert main(["var-scaling", "--side", "4", "--side", "8"]) == EXIT_INVALID

    def test_sigma_needs_enough_replicas(self):
        assert main(["sigma", "--dim", "1", "--proxy-side", "2", "--outer", "10"]) == EXIT_INVALID

    def test_bad_setting(self, monkeypatch):
        monkeypatch.setenv("OHMSTAT_THREADS", "0")
        assert main(CEFF_EXAMPLE) == EXIT_INVALID

    def test_help(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "ceff" in capsys.readouterr().out


@pytest.mark.integration
class TestOtherCommands:
    def test_sigma_for_a_constant_law(self, capsys):
        argv = ["sigma", "--dim", "2", "--law", "constant", "--proxy-side", "2"]
        assert main(argv) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["sigma_sq"] == 0.0
        assert payload["M_outer"] == 100
        assert "consistency" not in payload

    def test_sigma_cross_check(self, capsys):
        argv = ["sigma", "--dim", "2", "--law", "constant", "--proxy-side", "2",
                "--replicas", "4", "--cross-check"]
        assert main(argv) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["consistency"]["L"] == 2
        assert payload["consistency"]["replicas"] == 4
        assert payload["consistency"]["relative_gap"] == 0.0
        assert payload["consistency"]["ok"] is True

    def test_constant_value(self, capsys):
        argv = ["ceff", "--dim", "1", "--side", "8", "--law", "constant", "--a", "3",
                "--t", "1", "--replicas", "1"]
        assert main(argv) == EXIT_OK
        frame = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert frame["ceff"][0] == pytest.approx(27.0)

    def test_constant_value_outside_the_window(self):
        argv = ["ceff", "--dim", "1", "--side", "8", "--law", "constant", "--a", "3",
                "--lambda", "0.5", "--replicas", "1"]
        assert main(argv) == EXIT_INVALID

    def test_meyers(self, capsys):
        argv = ["meyers", "--dim", "2", "--side", "4", "--side", "6", "--exponent", "2",
                "--trials", "2"]
        assert main(argv) == EXIT_OK
        frame = pd.read_csv(io.StringIO(capsys.readouterr().out))
        assert frame["L"].tolist() == [4, 6]
        assert (frame["estimate"] <= 1.0 + 1e-8).all()

    def test_martingale_checks(self, capsys):
        argv = ["martingale-checks", "--dim", "1", "--side", "2", "--law", "two_point"]
        assert main(argv) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["ok"] is True
        assert len(payload["representation_residuals"]) == 3

    def test_green_checks(self, capsys):
        assert main(["green-checks", "--dim", "1", "--side", "4"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out)["ok"] is True

    def test_selftest(self, capsys):
        assert main(["selftest"]) == EXIT_OK
        assert "9/9 passed" in capsys.readouterr().out


@pytest.mark.unit
class TestBuildConfig:
    def test_settings_supply_defaults(self, monkeypatch):
        monkeypatch.setenv("OHMSTAT_THREADS", "3")
        args = build_parser().parse_args(["ceff", "--dim", "1"])
        config = build_config(args, get_settings())
        assert config.threads == 3
        assert config.d == 1
        assert config.t == [1.0]

    def test_flags_override_settings(self, monkeypatch):
        monkeypatch.setenv("OHMSTAT_THREADS", "3")
        args = build_parser().parse_args(["ceff", "--threads", "1", "--t", "0.5,2"])
        config = build_config(args, get_settings())
        assert config.threads == 1
        assert config.t == [0.5, 2.0]

    def test_constant_value_picks_its_window(self):
        args = build_parser().parse_args(["ceff", "--law", "constant", "--a", "4"])
        config = build_config(args, get_settings())
        assert config.a == 4.0
        assert config.lam == pytest.approx(0.125)
        assert config.conductance_law().a == 4.0
