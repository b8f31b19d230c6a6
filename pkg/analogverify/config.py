"""Configuration for analogverify.

Two layers feed an experiment:

- :class:`AnalogVerifySettings` reads process-wide defaults from the
  environment (a ``.env`` file is honoured through python-dotenv).
- :func:`load_experiment_config` parses a YAML experiment file into an
  :class:`ExperimentConfig`, resolving presets, noise channels, term labels and
  basis rotations.

Values given on the command line win over the experiment file, which wins
over the environment. Durations are in seconds; frequencies are given in Hz
in the file and converted to angular frequencies here.
"""

import hashlib
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from dotenv import load_dotenv

from analogverify.compiler import CompilerConfig
from analogverify.dynamics import DephasingMode
from analogverify.exceptions import AnalogVerifyError, ConfigError
from analogverify.models import (
    LatticeSpec,
    PairMode,
    build_preset,
    preset_rotation,
    standard_noise,
)
from analogverify.noise import NoiseSpec
from analogverify.protocols import ProtocolKind, ProtocolRunConfig
from analogverify.quantum_core import (
    DenseOperator,
    Hamiltonian,
    PauliString,
    PauliTermSum,
    global_rotation,
)

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off")


class AnalogVerifySettings:
    """Process settings taken from the environment.

    Attributes:
        log_level: Root logger level name
        output_dir: Directory receiving run directories
        workers: Default worker process count
        seed: Default root seed
        show_progress: Whether long sweeps display a progress bar
    """

    def __init__(self) -> None:
        """Initialize settings from environment variables."""
        load_dotenv()
        self.log_level = self._get_env_variable("ANALOGVERIFY_LOG_LEVEL", default="INFO").upper()
        if self.log_level not in LOG_LEVELS:
            raise ConfigError(f"Unknown log level '{self.log_level}'")
        self.output_dir = Path(self._get_env_variable("ANALOGVERIFY_OUTPUT_DIR", default="results"))
        self.workers = self._get_int("ANALOGVERIFY_WORKERS", default="1", minimum=1)
        self.seed = self._get_int("ANALOGVERIFY_SEED", default="0", minimum=0)
        progress = self._get_env_variable("ANALOGVERIFY_PROGRESS", default="false").lower()
        if progress not in TRUE_VALUES + FALSE_VALUES:
            raise ConfigError(f"ANALOGVERIFY_PROGRESS must be a boolean, got '{progress}'")
        self.show_progress = progress in TRUE_VALUES

        logger.debug("Settings loaded from environment")

    @staticmethod
    def _get_env_variable(key: str, default: Optional[str] = None) -> str:
        """Retrieve environment variable with validation.

        Args:
            key: Environment variable name
            default: Default value if variable is not set

        Returns:
            Value of the environment variable

        Raises:
            ConfigError: If required variable is not set and no default provided
        """
        value = os.getenv(key, default)
        if value is None:
            error_msg = f"Required environment variable '{key}' is not set"
            logger.error(error_msg)
            raise ConfigError(error_msg)
        return value

    @classmethod
    def _get_int(cls, key: str, default: str, minimum: int) -> int:
        raw = cls._get_env_variable(key, default=default)
        try:
            value = int(raw)
        except ValueError as e:
            raise ConfigError(f"{key} must be an integer, got '{raw}'") from e
        if value < minimum:
            raise ConfigError(f"{key} must be at least {minimum}, got {value}")
        return value


@dataclass(frozen=True)
class DynamicsConfig:
    """Ideal-versus-actual Lindblad comparison.

    Attributes:
        actual: Hamiltonian actually implemented
        gamma_phi: Dephasing rate in 1/s
        mode: Placement of the dephasing operators
        t_grid: Sample times in seconds
        initial_state: Basis index of the initial state
        smoothing_window: Running-mean width used to report the half-fidelity time
        integrator_step: Fixed RK4 step; None picks a default
    """

    actual: Hamiltonian
    gamma_phi: float
    mode: DephasingMode
    t_grid: Tuple[float, ...]
    initial_state: int
    smoothing_window: float = 0.0
    integrator_step: Optional[float] = None


@dataclass(frozen=True)
class CompileTask:
    """Single forward sequence to invert with ``analogverify compile``."""

    tau: float
    n_steps: int
    initial_state: int


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A parsed experiment file with command-line overrides applied."""

    source: Path
    digest: str
    hamiltonian: Hamiltonian
    preset: Optional[str]
    protocol: ProtocolRunConfig
    compiler: CompilerConfig
    compile_task: CompileTask
    output_dir: Path
    seed: int
    rotation: Optional[DenseOperator] = None
    dynamics: Optional[DynamicsConfig] = None
    lattice: Optional[LatticeSpec] = None
    pair_mode: str = PairMode.UNORDERED_DISJOINT.value
    sequences_file: Optional[Path] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def noise(self) -> Tuple[NoiseSpec, ...]:
        return self.protocol.noise


def _section(data: Mapping[str, Any], key: str) -> Dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"Section '{key}' must be a mapping")
    return dict(value)


def parse_basis_state(value: Union[int, str], n_qubits: int) -> int:
    """Basis index from an integer or a bitstring such as ``"01"`` (qubit 0 first)."""
    if isinstance(value, bool):
        raise ConfigError(f"Invalid basis state {value!r}")
    if isinstance(value, int):
        index = value
    else:
        text = str(value).strip()
        if len(text) != n_qubits or set(text) - {"0", "1"}:
            raise ConfigError(f"Basis state '{text}' is not a {n_qubits}-bit string")
        index = int(text, 2)
    if not 0 <= index < 2**n_qubits:
        raise ConfigError(f"Basis state {value!r} out of range for {n_qubits} qubits")
    return index


def parse_grid(value: Any, key: str) -> Tuple[float, ...]:
    """A time grid given as a list or as ``{start, stop, num}`` / ``{start, stop, step}``."""
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    if isinstance(value, Mapping):
        try:
            start = float(value.get("start", 0.0))
            stop = float(value["stop"])
            if "num" in value:
                num = int(value["num"])
            else:
                num = int(round((stop - start) / float(value["step"]))) + 1
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"'{key}' needs stop and either num or step") from e
        if num < 1:
            raise ConfigError(f"'{key}' describes an empty grid")
        return tuple(float(t) for t in np.linspace(start, stop, num))
    raise ConfigError(f"'{key}' must be a list or a mapping")


def _scaled_parameters(values: Mapping[str, Any]) -> Dict[str, float]:
    return {str(key): TWO_PI * float(value) for key, value in values.items()}


def _inline_hamiltonian(model: Mapping[str, Any]) -> Hamiltonian:
    try:
        n_qubits = int(model["n_qubits"])
        entries = model["terms"]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("Inline model needs 'n_qubits' and 'terms'") from e
    terms: List[PauliTermSum] = []
    for entry in entries:
        try:
            summands = tuple(
                (TWO_PI * float(coefficient), PauliString.parse(str(pauli)))
                for coefficient, pauli in entry["summands"]
            )
            terms.append(
                PauliTermSum(
                    label=str(entry["label"]),
                    summands=summands,
                    enabled=bool(entry.get("enabled", True)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed term entry {entry!r}") from e
    return Hamiltonian(n_qubits, tuple(terms))


def _build_model(model: Mapping[str, Any]) -> Tuple[Hamiltonian, Optional[str]]:
    if "preset" in model:
        name = str(model["preset"])
        parameters = _scaled_parameters(model.get("parameters_hz") or {})
        return build_preset(name, parameters), name
    if "terms" in model:
        return _inline_hamiltonian(model), None
    raise ConfigError("Section 'model' needs either 'preset' or inline 'terms'")


def _check_labels(h: Hamiltonian, labels: Optional[Sequence[str]], where: str) -> None:
    if labels is None:
        return
    unknown = sorted(set(labels) - set(h.labels))
    if unknown:
        raise ConfigError(f"{where} references unknown term label(s): {unknown}")


def _build_noise(
    entries: Sequence[Mapping[str, Any]], h: Hamiltonian, preset: Optional[str], seed: int
) -> Tuple[NoiseSpec, ...]:
    specs = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"Noise entry {index} must be a mapping")
        terms = entry.get("terms")
        _check_labels(h, terms, f"Noise entry {index}")
        channel_seed = int(entry.get("seed", seed + index))
        correlation_time = entry.get("correlation_time_s")
        correlation = float(correlation_time) if correlation_time is not None else None
        if "standard" in entry:
            if preset is None:
                raise ConfigError("'standard' noise levels need a model preset")
            specs.append(
                standard_noise(preset, str(entry["standard"]), correlation, channel_seed, terms)
            )
            continue
        try:
            specs.append(
                NoiseSpec(
                    kind=entry["kind"],
                    relative_sd=float(entry["relative_sd"]),
                    correlation_time=correlation,
                    seed=channel_seed,
                    terms=tuple(terms) if terms is not None else None,
                )
            )
        except KeyError as e:
            raise ConfigError(f"Noise entry {index} is missing {e}") from e
    return tuple(specs)


def _build_rotation(value: Any, h: Hamiltonian, preset: Optional[str]) -> DenseOperator:
    if value is None or value == "preset":
        if preset is None:
            raise ConfigError("Multi-basis needs a rotation for inline models")
        return preset_rotation(preset)
    if isinstance(value, Mapping):
        try:
            return global_rotation(str(value["axis"]), float(value["angle_rad"]), h.n_qubits)
        except KeyError as e:
            raise ConfigError(f"Rotation is missing {e}") from e
    raise ConfigError(f"Unrecognised rotation {value!r}")


def _build_dynamics(
    section: Mapping[str, Any], h: Hamiltonian, preset: Optional[str]
) -> DynamicsConfig:
    if preset is not None:
        actual = build_preset(preset, _scaled_parameters(section.get("actual_parameters_hz") or {}))
    elif "actual_model" in section:
        actual = _inline_hamiltonian(section["actual_model"])
    else:
        actual = h
    if actual.labels != h.labels or actual.n_qubits != h.n_qubits:
        raise ConfigError("Ideal and actual models must have the same terms")
    step = section.get("integrator_step_s")
    return DynamicsConfig(
        actual=actual,
        gamma_phi=TWO_PI * float(section.get("gamma_phi_hz", 0.0)),
        mode=DephasingMode(section.get("mode", DephasingMode.COLLECTIVE.value)),
        t_grid=parse_grid(section.get("t_grid_s", {"stop": 0.012, "step": 1e-4}), "t_grid_s"),
        initial_state=parse_basis_state(section.get("initial_state", 1), h.n_qubits),
        smoothing_window=float(section.get("smoothing_window_s", 0.0)),
        integrator_step=float(step) if step is not None else None,
    )


def load_experiment_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    protocol: Optional[str] = None,
    output_dir: Optional[Union[str, Path]] = None,
    settings: Optional[AnalogVerifySettings] = None,
) -> ExperimentConfig:
    """Parse and resolve an experiment file.

    Args:
        path: YAML experiment file
        seed: Command-line seed override
        workers: Command-line worker-count override
        protocol: Command-line protocol override
        output_dir: Command-line output directory override
        settings: Environment defaults; read from the environment when omitted

    Returns:
        The resolved :class:`ExperimentConfig`

    Raises:
        ConfigError: If the file cannot be read or parsed, or a reference does
            not resolve
    """
    source = Path(path)
    try:
        text = source.read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
    except (OSError, yaml.YAMLError) as e:
        error_msg = f"Failed to read experiment config {source}: {e}"
        logger.error(error_msg)
        raise ConfigError(error_msg) from e
    if not isinstance(data, Mapping):
        raise ConfigError(f"Experiment config {source} must be a mapping")

    env = settings if settings is not None else AnalogVerifySettings()
    try:
        config = _resolve(source, text, data, env, seed, workers, protocol, output_dir)
    except ConfigError:
        raise
    except (AnalogVerifyError, KeyError, TypeError, ValueError) as e:
        error_msg = f"Invalid experiment config {source}: {e}"
        logger.error(error_msg)
        raise ConfigError(error_msg) from e

    logger.info(
        f"Loaded experiment {source.name}: {config.protocol.protocol.value} on "
        f"{config.hamiltonian.n_qubits} qubits, seed {config.seed}"
    )
    return config


def _resolve(
    source: Path,
    text: str,
    data: Mapping[str, Any],
    env: AnalogVerifySettings,
    seed: Optional[int],
    workers: Optional[int],
    protocol: Optional[str],
    output_dir: Optional[Union[str, Path]],
) -> ExperimentConfig:
    root_seed = seed if seed is not None else int(data.get("seed", env.seed))
    if root_seed < 0:
        raise ConfigError(f"Seed must be non-negative, got {root_seed}")
    hamiltonian, preset = _build_model(_section(data, "model"))

    section = _section(data, "protocol")
    kind = ProtocolKind.parse(protocol or section.get("kind", ProtocolKind.TIME_REVERSAL.value))
    n_workers = workers if workers is not None else int(section.get("n_workers", env.workers))
    noise = _build_noise(data.get("noise") or [], hamiltonian, preset, root_seed)

    initial = section.get("initial_state")
    choices = section.get("initial_states")
    run_config = ProtocolRunConfig(
        protocol=kind,
        tau_grid=parse_grid(section.get("tau_grid_s", [1e-3]), "tau_grid_s"),
        shots_per_point=int(section.get("shots_per_run", 100)),
        runs_per_point=int(section.get("runs_per_point", 50)),
        n_sequences=int(section.get("n_sequences", 10)),
        simulations_per_sequence=int(section.get("simulations_per_sequence", 20)),
        n_steps=int(section.get("n_steps", 150)),
        noise=noise,
        initial_state=(
            parse_basis_state(initial, hamiltonian.n_qubits) if initial is not None else None
        ),
        initial_states=(
            tuple(parse_basis_state(c, hamiltonian.n_qubits) for c in choices)
            if choices is not None
            else None
        ),
        rotation=str(section["rotation"]) if isinstance(section.get("rotation"), str) else None,
        seed=root_seed,
        n_workers=n_workers,
        show_progress=bool(section.get("show_progress", env.show_progress)),
    )
    rotation = (
        _build_rotation(section.get("rotation"), hamiltonian, preset)
        if kind is ProtocolKind.MULTI_BASIS
        else None
    )

    compiler_section = _section(data, "compiler")
    compiler = CompilerConfig(
        beta_initial=float(compiler_section.get("beta_initial", 0.5)),
        beta_final=float(compiler_section.get("beta_final", 0.005)),
        threshold=float(compiler_section.get("threshold", 0.99)),
        max_steps=int(compiler_section.get("max_steps", 20_000)),
        n_workers=int(compiler_section.get("n_workers", 1)),
        seed=root_seed,
        parallel=bool(compiler_section.get("parallel", False)),
    )
    task = CompileTask(
        tau=float(compiler_section.get("tau_s", run_config.tau_grid[-1])),
        n_steps=int(compiler_section.get("n_steps", run_config.n_steps)),
        initial_state=parse_basis_state(
            compiler_section.get("initial_state", 0), hamiltonian.n_qubits
        ),
    )

    lattice_section = _section(data, "lattice")
    lattice = (
        LatticeSpec(
            rows=int(lattice_section["rows"]),
            cols=int(lattice_section["cols"]),
            locality=int(lattice_section.get("locality", 2)),
        )
        if lattice_section
        else None
    )
    pair_mode = str(lattice_section.get("mode", PairMode.UNORDERED_DISJOINT.value))

    dynamics_section = _section(data, "dynamics")
    sequences = section.get("sequences_file")
    out = output_dir if output_dir is not None else data.get("output_dir", env.output_dir)
    return ExperimentConfig(
        source=source,
        digest=hashlib.sha256(text.encode()).hexdigest(),
        hamiltonian=hamiltonian,
        preset=preset,
        protocol=run_config,
        compiler=compiler,
        compile_task=task,
        output_dir=Path(out),
        seed=root_seed,
        rotation=rotation,
        dynamics=(
            _build_dynamics(dynamics_section, hamiltonian, preset) if dynamics_section else None
        ),
        lattice=lattice,
        pair_mode=pair_mode,
        sequences_file=(source.parent / str(sequences)) if sequences is not None else None,
        raw=dict(data),
    )
