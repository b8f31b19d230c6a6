"""Tests for analogverify.config."""

import hashlib
import math
from pathlib import Path
from unittest.mock import Mock, patch

import numpy as np
import pytest

from analogverify.config import (
    AnalogVerifySettings,
    load_experiment_config,
    parse_basis_state,
    parse_grid,
)
from analogverify.dynamics import DephasingMode
from analogverify.exceptions import ConfigError
from analogverify.models import preset_rotation
from analogverify.noise import NoiseKind
from analogverify.protocols import ProtocolKind

ENV_KEYS = (
    "ANALOGVERIFY_LOG_LEVEL",
    "ANALOGVERIFY_OUTPUT_DIR",
    "ANALOGVERIFY_WORKERS",
    "ANALOGVERIFY_SEED",
    "ANALOGVERIFY_PROGRESS",
)

ISING_TR = """
seed: 5
model:
  preset: Ising2Q
  parameters_hz:
    J: 100.0
protocol:
  kind: TimeReversal
  tau_grid_s: {start: 0.0, stop: 0.02, num: 5}
  shots_per_run: 40
  runs_per_point: 8
  initial_state: "10"
noise:
  - kind: FastOU
    relative_sd: 0.1
    correlation_time_s: 1.0e-4
  - kind: Miscalibration
    relative_sd: 0.05
    seed: 99
    terms: [coupling]
"""


@pytest.fixture
def clean_env(monkeypatch: pytest.MonkeyPatch) -> pytest.MonkeyPatch:
    """Environment without analogverify variables."""
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)
    return monkeypatch


@pytest.fixture
def settings(clean_env: pytest.MonkeyPatch) -> AnalogVerifySettings:
    """Default settings with no .env lookup."""
    with patch("analogverify.config.load_dotenv"):
        return AnalogVerifySettings()


def _write(tmp_path: Path, text: str, name: str = "experiment.yaml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestAnalogVerifySettings:
    """Test cases for AnalogVerifySettings."""

    def test_defaults(self, settings: AnalogVerifySettings) -> None:
        """Test defaults when nothing is set."""
        assert settings.log_level == "INFO"
        assert settings.output_dir == Path("results")
        assert settings.workers == 1
        assert settings.seed == 0
        assert settings.show_progress is False

    @patch("analogverify.config.load_dotenv")
    def test_environment(self, mock_dotenv: Mock, clean_env: pytest.MonkeyPatch) -> None:
        """Test values are read from the environment."""
        clean_env.setenv("ANALOGVERIFY_LOG_LEVEL", "debug")
        clean_env.setenv("ANALOGVERIFY_WORKERS", "4")
        clean_env.setenv("ANALOGVERIFY_SEED", "12")
        clean_env.setenv("ANALOGVERIFY_PROGRESS", "yes")
        settings = AnalogVerifySettings()
        mock_dotenv.assert_called_once()
        assert settings.log_level == "DEBUG"
        assert settings.workers == 4
        assert settings.seed == 12
        assert settings.show_progress is True

    @pytest.mark.parametrize(
        "key, value, message",
        [
            ("ANALOGVERIFY_WORKERS", "many", "must be an integer"),
            ("ANALOGVERIFY_WORKERS", "0", "must be at least 1"),
            ("ANALOGVERIFY_SEED", "-3", "must be at least 0"),
            ("ANALOGVERIFY_LOG_LEVEL", "LOUD", "Unknown log level"),
            ("ANALOGVERIFY_PROGRESS", "maybe", "must be a boolean"),
        ],
    )
    @patch("analogverify.config.load_dotenv")
    def test_invalid(
        self, mock_dotenv: Mock, clean_env: pytest.MonkeyPatch, key: str, value: str, message: str
    ) -> None:
        """Test malformed environment values raise ConfigError."""
        clean_env.setenv(key, value)
        with pytest.raises(ConfigError, match=message):
            AnalogVerifySettings()


class TestParsers:
    """Test cases for basis-state and grid parsing."""

    def test_basis_state(self) -> None:
        """Test integers and bitstrings with qubit 0 first."""
        assert parse_basis_state("10", 2) == 2
        assert parse_basis_state("01", 2) == 1
        assert parse_basis_state(3, 2) == 3
        with pytest.raises(ConfigError, match="not a 2-bit string"):
            parse_basis_state("012", 2)
        with pytest.raises(ConfigError, match="out of range"):
            parse_basis_state(4, 2)
        with pytest.raises(ConfigError, match="Invalid basis state"):
            parse_basis_state(True, 2)

    def test_grid_forms(self) -> None:
        """Test list, num and step grids."""
        assert parse_grid([0.001, 0.002], "g") == (0.001, 0.002)
        assert parse_grid({"start": 0.0, "stop": 0.02, "num": 5}, "g") == pytest.approx(
            (0.0, 0.005, 0.01, 0.015, 0.02)
        )
        stepped = parse_grid({"stop": 0.012, "step": 1e-4}, "g")
        assert len(stepped) == 121
        assert stepped[-1] == pytest.approx(0.012)

    def test_grid_errors(self) -> None:
        """Test malformed grids raise ConfigError."""
        with pytest.raises(ConfigError, match="needs stop"):
            parse_grid({"start": 0.0, "num": 3}, "tau_grid_s")
        with pytest.raises(ConfigError, match="empty grid"):
            parse_grid({"stop": 1.0, "num": 0}, "tau_grid_s")
        with pytest.raises(ConfigError, match="list or a mapping"):
            parse_grid("0.1", "tau_grid_s")


class TestLoadExperimentConfig:
    """Test cases for load_experiment_config."""

    def test_time_reversal_file(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test a complete time-reversal experiment resolves."""
        path = _write(tmp_path, ISING_TR)
        config = load_experiment_config(path, settings=settings)

        assert config.preset == "Ising2Q"
        assert config.seed == 5
        assert config.digest == hashlib.sha256(ISING_TR.encode()).hexdigest()
        [(coupling, _)] = config.hamiltonian.term("coupling").summands
        assert coupling == pytest.approx(-2 * math.pi * 50.0)

        run = config.protocol
        assert run.protocol is ProtocolKind.TIME_REVERSAL
        assert run.tau_grid == pytest.approx((0.0, 0.005, 0.01, 0.015, 0.02))
        assert run.shots_per_point == 40
        assert run.runs_per_point == 8
        assert run.initial_state == 2
        assert config.rotation is None
        assert config.output_dir == Path("results")

    def test_noise_entries(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test noise channels with default and explicit seeds."""
        config = load_experiment_config(_write(tmp_path, ISING_TR), settings=settings)
        fast, miscal = config.noise
        assert fast.kind is NoiseKind.FAST_OU
        assert fast.correlation_time == 1e-4
        assert fast.seed == 5
        assert fast.terms is None
        assert miscal.kind is NoiseKind.MISCALIBRATION
        assert miscal.seed == 99
        assert miscal.terms == ("coupling",)

    def test_precedence(self, tmp_path: Path, clean_env: pytest.MonkeyPatch) -> None:
        """Test command line beats file, and file beats environment."""
        clean_env.setenv("ANALOGVERIFY_SEED", "9")
        clean_env.setenv("ANALOGVERIFY_WORKERS", "3")
        with patch("analogverify.config.load_dotenv"):
            env = AnalogVerifySettings()
        path = _write(tmp_path, ISING_TR)
        no_seed = _write(tmp_path, ISING_TR.replace("seed: 5\n", ""), "no_seed.yaml")

        assert load_experiment_config(no_seed, settings=env).seed == 9
        assert load_experiment_config(path, settings=env).seed == 5
        assert load_experiment_config(path, seed=7, settings=env).seed == 7
        assert load_experiment_config(path, settings=env).protocol.n_workers == 3
        overridden = load_experiment_config(
            path, workers=2, protocol="fidelity", output_dir=tmp_path / "out", settings=env
        )
        assert overridden.protocol.n_workers == 2
        assert overridden.protocol.protocol is ProtocolKind.SIMULATION_FIDELITY
        assert overridden.output_dir == tmp_path / "out"

    def test_multi_basis_rotation(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test multi-basis resolves the preset rotation or an explicit one."""
        config = load_experiment_config(
            _write(tmp_path, ISING_TR), protocol="mb", settings=settings
        )
        assert config.rotation is not None
        np.testing.assert_allclose(
            config.rotation.entries, preset_rotation("Ising2Q").entries
        )

        explicit = ISING_TR.replace(
            "  kind: TimeReversal", "  kind: MultiBasis\n  rotation: {axis: x, angle_rad: 3.14159}"
        )
        config = load_experiment_config(_write(tmp_path, explicit, "x.yaml"), settings=settings)
        assert config.rotation is not None
        assert config.rotation.is_unitary()

    def test_inline_model(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test inline terms are given in Hz and converted to rad/s."""
        text = """
model:
  n_qubits: 1
  terms:
    - label: drive
      summands: [[10.0, "X0"]]
    - label: detuning
      summands: [[2.0, "Z0"]]
      enabled: false
protocol:
  kind: fidelity
  tau_grid_s: [0.001]
"""
        config = load_experiment_config(_write(tmp_path, text), settings=settings)
        h = config.hamiltonian
        assert config.preset is None
        assert h.labels == ("drive", "detuning")
        assert h.term("drive").summands[0][0] == pytest.approx(20 * math.pi)
        assert h.term("detuning").enabled is False

    def test_inline_model_needs_rotation(
        self, tmp_path: Path, settings: AnalogVerifySettings
    ) -> None:
        """Test multi-basis on an inline model without a rotation fails."""
        text = """
model:
  n_qubits: 1
  terms:
    - label: drive
      summands: [[10.0, "X0"]]
protocol:
  kind: mb
"""
        with pytest.raises(ConfigError, match="needs a rotation"):
            load_experiment_config(_write(tmp_path, text), settings=settings)

    def test_dynamics_section(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test dynamics defaults and Hz conversion."""
        text = ISING_TR + """
dynamics:
  actual_parameters_hz: {J: 150.0, b: 230.0}
  gamma_phi_hz: 10.0
  smoothing_window_s: 0.001
"""
        config = load_experiment_config(_write(tmp_path, text), settings=settings)
        dynamics = config.dynamics
        assert dynamics is not None
        assert dynamics.gamma_phi == pytest.approx(20 * math.pi)
        assert dynamics.mode is DephasingMode.COLLECTIVE
        assert len(dynamics.t_grid) == 121
        assert dynamics.initial_state == 1
        assert dynamics.smoothing_window == 0.001
        [(coupling, _)] = dynamics.actual.term("coupling").summands
        assert coupling == pytest.approx(-2 * math.pi * 75.0)

    def test_compiler_and_lattice(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test compiler, compile task, lattice and sequence file settings."""
        text = ISING_TR + """
compiler:
  threshold: 0.95
  max_steps: 500
  n_workers: 4
  tau_s: 0.003
  n_steps: 30
lattice: {rows: 3, cols: 4, mode: ordered_distinct}
"""
        text = text.replace(
            "  shots_per_run: 40", "  shots_per_run: 40\n  sequences_file: seqs.json"
        )
        config = load_experiment_config(_write(tmp_path, text), settings=settings)
        assert config.compiler.threshold == 0.95
        assert config.compiler.max_steps == 500
        assert config.compiler.n_workers == 4
        assert config.compiler.seed == 5
        assert config.compile_task.tau == 0.003
        assert config.compile_task.n_steps == 30
        assert config.compile_task.initial_state == 0
        assert config.lattice is not None
        assert (config.lattice.rows, config.lattice.cols) == (3, 4)
        assert config.pair_mode == "ordered_distinct"
        assert config.sequences_file == tmp_path / "seqs.json"

    @pytest.mark.parametrize(
        "text, message",
        [
            ("model: {preset: Ising3Q}", "Unknown model preset"),
            (
                "model: {preset: Ising2Q}\n"
                "noise: [{kind: Miscalibration, relative_sd: 0.1, terms: [zz]}]",
                "unknown term label",
            ),
            ("model: {preset: Ising2Q}\nnoise: [{kind: FastOU}]", "missing"),
            (
                "model: {preset: Ising2Q}\nprotocol: {tau_grid_s: [0.002, 0.001]}",
                "strictly increasing",
            ),
            ("model: {}", "needs either 'preset'"),
            ("- just\n- a list", "must be a mapping"),
            ("model: {preset: Ising2Q}\nnoise: [{standard: FastOU}]", "no standard noise levels"),
        ],
    )
    def test_invalid_files(
        self, tmp_path: Path, settings: AnalogVerifySettings, text: str, message: str
    ) -> None:
        """Test invalid experiment files raise ConfigError."""
        with pytest.raises(ConfigError, match=message):
            load_experiment_config(_write(tmp_path, text), settings=settings)

    def test_unreadable(self, tmp_path: Path, settings: AnalogVerifySettings) -> None:
        """Test missing files and broken YAML raise ConfigError."""
        with pytest.raises(ConfigError, match="Failed to read"):
            load_experiment_config(tmp_path / "missing.yaml", settings=settings)
        with pytest.raises(ConfigError, match="Failed to read"):
            load_experiment_config(_write(tmp_path, "model: [unclosed"), settings=settings)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestExampleConfigs:
    """Test the shipped example experiments load."""

    @pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
    def test_loads(self, path: Path, settings: AnalogVerifySettings) -> None:
        """Test each example resolves without errors."""
        config = load_experiment_config(path, settings=settings)
        assert config.hamiltonian.n_qubits >= 2
        assert config.digest == hashlib.sha256(path.read_bytes()).hexdigest()

    def test_multi_basis_rotation(self, settings: AnalogVerifySettings) -> None:
        """Test the chain example builds an explicit global rotation."""
        config = load_experiment_config(
            CONFIG_DIR / "heisenberg_multi_basis.yaml", settings=settings
        )
        assert config.protocol.protocol is ProtocolKind.MULTI_BASIS
        assert config.rotation is not None
        assert config.rotation.n_qubits == 5
        assert [spec.relative_sd for spec in config.protocol.noise] == [0.15, 0.10]

    def test_subsets_lattice(self, settings: AnalogVerifySettings) -> None:
        """Test the lattice example carries the 6x6 geometry."""
        config = load_experiment_config(CONFIG_DIR / "lattice_subsets.yaml", settings=settings)
        assert config.lattice is not None
        assert (config.lattice.rows, config.lattice.cols) == (6, 6)
