import json

import pytest
from pydantic import ValidationError

from ohmstat.config import ExperimentConfig, Settings, get_settings

pytestmark = pytest.mark.unit


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.d == 2
        assert config.sides == [8]
        assert config.t == [1.0, 0.0]
        assert config.conductance_law().kind == "uniform"

    def test_scalar_direction_is_broadcast(self):
        assert ExperimentConfig(d=3, t=[2.0]).t == [2.0, 0.0, 0.0]

    @pytest.mark.parametrize("bad", [
        {"lam": 1.5},
        {"lam": 0.0},
        {"d": 4},
        {"sides": []},
        {"sides": [8, 1]},
        {"t": [1.0, 2.0, 3.0]},
        {"t": [float("nan")]},
        {"replicas": 0},
        {"p": 1.2},
        {"law": "gamma"},
        {"format": "xml"},
        {"law": "constant", "a": 3.0, "lam": 0.5},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ValidationError):
            ExperimentConfig(**bad)

    def test_laws(self):
        assert ExperimentConfig(law="two_point", p=0.3).conductance_law().p == 0.3
        constant = ExperimentConfig(law="constant", a=1.5, lam=0.5).conductance_law()
        assert constant.a == 1.5 and constant.lam == 0.5
        assert ExperimentConfig(quadrature_nodes=24).conductance_law().nodes == 24

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"d": 1, "replicas": 5, "seed": 9}))
        config = ExperimentConfig.from_file(path, defaults={"threads": 2, "seed": 1},
                                            replicas=2, seed=None)
        assert config.d == 1
        assert config.replicas == 2
        assert config.seed == 9
        assert config.threads == 2


class TestSettings:
    def test_environment_variables(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("OHMSTAT_THREADS", "4")
        monkeypatch.setenv("OHMSTAT_LOG_LEVEL", "debug")
        settings = get_settings()
        assert settings.threads == 4
        assert settings.log_level == "DEBUG"

    def test_dotenv_file(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        (tmp_path / ".env").write_text("OHMSTAT_TOL=1e-8\n")
        assert Settings().tol == 1e-8

    def test_invalid_level(self, monkeypatch, tmp_path):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("OHMSTAT_LOG_LEVEL", "chatty")
        with pytest.raises(ValidationError):
            get_settings()
