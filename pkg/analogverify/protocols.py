"""Verification protocols executed as simulated experiments.

Each protocol produces a :class:`DecayCurve`, a list of
(time, success probability, standard error, sample count) points:

- time-reversal: evolve forward for τ, then backward for τ, and count how
  often the initial basis state is measured;
- multi-basis: the same, with the backward evolution performed in a rotated
  basis under an independently drawn noise stream;
- randomized analog: random term-subset sequences followed by a compiled
  approximate inverse, indexed by effective simulation time;
- simulation fidelity: the state fidelity of the noisy forward evolution with
  the ideal one.

Runs are keyed by indices (point, run, sequence) and draw all randomness from
their own streams, so serial and process-parallel executions agree exactly.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from analogverify.compiler import (
    CompiledSequence,
    CompilerConfig,
    Layer,
    compile_inverse,
    random_forward_sequence,
    with_seed,
)
from analogverify.dynamics import PiecewiseSchedule, Segment, evolve_piecewise
from analogverify.exceptions import NoConvergence, ProtocolError
from analogverify.noise import NoiseSpec, apply_noise, sample_multipliers
from analogverify.quantum_core import (
    DenseOperator,
    Hamiltonian,
    SystemState,
    basis_populations,
    build_operator,
    conjugate_operator,
    expm_hermitian,
    fidelity,
)
from analogverify.streams import Stream, derive_seed, stream_rng

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ProtocolKind(str, Enum):
    """Experiments that produce decay curves."""

    TIME_REVERSAL = "TimeReversal"
    MULTI_BASIS = "MultiBasis"
    RANDOMIZED_ANALOG = "RandomizedAnalog"
    SIMULATION_FIDELITY = "SimulationFidelity"

    @classmethod
    def parse(cls, value: Union[str, "ProtocolKind"]) -> "ProtocolKind":
        if isinstance(value, ProtocolKind):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        aliases = {
            "timereversal": cls.TIME_REVERSAL,
            "tr": cls.TIME_REVERSAL,
            "multibasis": cls.MULTI_BASIS,
            "mb": cls.MULTI_BASIS,
            "randomizedanalog": cls.RANDOMIZED_ANALOG,
            "randomized": cls.RANDOMIZED_ANALOG,
            "rav": cls.RANDOMIZED_ANALOG,
            "simulationfidelity": cls.SIMULATION_FIDELITY,
            "fidelity": cls.SIMULATION_FIDELITY,
        }
        if key not in aliases:
            raise ProtocolError(f"Unknown protocol '{value}'")
        return aliases[key]


@dataclass(frozen=True)
class ProtocolRunConfig:
    """Settings shared by every protocol.

    Attributes:
        protocol: Which experiment to run
        tau_grid: Simulation times τ in seconds, non-negative and strictly increasing
        shots_per_point: Measurement shots per run (per simulated execution)
        runs_per_point: Independent noisy runs per τ (time-reversal, multi-basis, fidelity)
        n_sequences: Random sequences per τ (randomized analog)
        simulations_per_sequence: Noisy executions of each sequence
        n_steps: Forward layers per random sequence; each lasts 2τ/n_steps
        noise: Noise channels applied during execution
        initial_state: Basis index to start from; defaults to |10...0>
        initial_states: Basis indices randomized sequences draw from; default all
        rotation: Name of the preset rotation (multi-basis), resolved by the caller
        seed: Root seed for sequences, measurements and compiler seeds
        n_workers: Worker processes; 1 runs serially
        show_progress: Display a progress bar over τ points
    """

    protocol: ProtocolKind
    tau_grid: Tuple[float, ...]
    shots_per_point: int = 100
    runs_per_point: int = 50
    n_sequences: int = 10
    simulations_per_sequence: int = 20
    n_steps: int = 150
    noise: Tuple[NoiseSpec, ...] = ()
    initial_state: Optional[int] = None
    initial_states: Optional[Tuple[int, ...]] = None
    rotation: Optional[str] = None
    seed: int = 0
    n_workers: int = 1
    show_progress: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "protocol", ProtocolKind.parse(self.protocol))
        grid = tuple(float(t) for t in self.tau_grid)
        if not grid:
            raise ProtocolError("tau_grid must not be empty")
        if grid[0] < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ProtocolError("tau_grid must be non-negative and strictly increasing")
        object.__setattr__(self, "tau_grid", grid)
        object.__setattr__(self, "noise", tuple(self.noise))
        if self.initial_states is not None:
            object.__setattr__(self, "initial_states", tuple(self.initial_states))
        for name in (
            "shots_per_point",
            "runs_per_point",
            "n_sequences",
            "simulations_per_sequence",
            "n_steps",
            "n_workers",
        ):
            if getattr(self, name) < 1:
                raise ProtocolError(f"{name} must be at least 1")
        if self.seed < 0:
            raise ProtocolError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class DecayPoint:
    """One point of a decay curve."""

    time: float
    success_probability: float
    standard_error: float
    n_samples: int


@dataclass
class DecayCurve:
    """Decay curve plus the metadata needed to interpret it."""

    protocol: ProtocolKind
    points: List[DecayPoint]
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.time for p in self.points])

    @property
    def successes(self) -> np.ndarray:
        return np.array([p.success_probability for p in self.points])

    def to_frame(self) -> pd.DataFrame:
        """Table with columns time_s, success_prob, stderr, n_samples."""
        return pd.DataFrame(
            {
                "time_s": [p.time for p in self.points],
                "success_prob": [p.success_probability for p in self.points],
                "stderr": [p.standard_error for p in self.points],
                "n_samples": [p.n_samples for p in self.points],
            }
        )


@dataclass(frozen=True)
class MeasurementResult:
    """Outcome of simulated projective measurement."""

    counts: np.ndarray
    success: float
    standard_error: float
    shots: int


@dataclass(frozen=True)
class RandomizedSequence:
    """A forward sequence with its compiled inverse, ready to execute."""

    forward: Tuple[Layer, ...]
    compiled: CompiledSequence
    initial_state: int

    @property
    def layers(self) -> Tuple[Layer, ...]:
        return tuple(self.forward) + tuple(self.compiled.layers)


def binomial_stderr(p: float, n: int) -> float:
    """√(p(1-p)/n)."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def measure(
    state: SystemState,
    shots: int,
    seed: Union[int, np.random.Generator],
    expected: int,
) -> MeasurementResult:
    """Sample ``shots`` computational-basis outcomes and score ``expected``.

    Raises:
        ProtocolError: If ``shots < 1`` or ``expected`` is not a basis index
    """
    if shots < 1:
        raise ProtocolError(f"shots must be at least 1, got {shots}")
    if not 0 <= expected < state.dimension:
        raise ProtocolError(f"Expected basis index {expected} out of range")
    rng = seed if isinstance(seed, np.random.Generator) else stream_rng(seed, Stream.MEASUREMENT)
    populations = np.clip(basis_populations(state), 0.0, None)
    populations = populations / populations.sum()
    counts = rng.multinomial(shots, populations)
    success = counts[expected] / shots
    return MeasurementResult(counts, float(success), binomial_stderr(success, shots), shots)


def effective_time(h: Hamiltonian, layers: Sequence[Layer]) -> float:
    """Average over terms of the total time each term is enabled."""
    if not h.terms:
        return 0.0
    totals = np.zeros(len(h.terms))
    for layer in layers:
        totals[layer.mask(h)] += layer.duration
    return float(totals.mean())


def _map(fn: Callable[[T], R], jobs: Sequence[T], n_workers: int) -> List[R]:
    if n_workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_workers) as executor:
        return list(executor.map(fn, jobs))


def _default_initial(h: Hamiltonian, cfg: ProtocolRunConfig) -> int:
    index = cfg.initial_state if cfg.initial_state is not None else 2 ** (h.n_qubits - 1)
    if not 0 <= index < h.dimension:
        raise ProtocolError(f"Initial basis index {index} out of range for {h.n_qubits} qubits")
    return index


def _evolve(
    vector: np.ndarray, n_qubits: int, pieces: Sequence[Tuple[DenseOperator, float]]
) -> np.ndarray:
    schedule = PiecewiseSchedule(
        tuple(Segment(op, duration) for op, duration in pieces if duration > 0)
    )
    state = evolve_piecewise(SystemState(n_qubits, vector=vector), schedule)
    assert state.vector is not None
    return np.array(state.vector)


def _score(
    vector: np.ndarray, n_qubits: int, cfg: ProtocolRunConfig, run_index: int, expected: int
) -> int:
    rng = stream_rng(
        cfg.seed, Stream.MEASUREMENT, list(ProtocolKind).index(cfg.protocol), run_index
    )
    result = measure(SystemState(n_qubits, vector=vector), cfg.shots_per_point, rng, expected)
    return int(result.counts[expected])


def _shot_point(tau: float, hits: Sequence[int], cfg: ProtocolRunConfig) -> DecayPoint:
    n_samples = len(hits) * cfg.shots_per_point
    p = float(sum(hits)) / n_samples
    return DecayPoint(tau, p, binomial_stderr(p, n_samples), n_samples)


def _time_reversal_run(args: Tuple[Hamiltonian, ProtocolRunConfig, float, int, int]) -> int:
    h, cfg, tau, run_index, initial = args
    realization = sample_multipliers(cfg.noise, h, run_index, [tau, tau], stream=0)
    pieces = apply_noise(h, realization, 0, None, 1) + apply_noise(h, realization, 1, None, -1)
    start = SystemState.basis(initial, h.n_qubits).vector
    assert start is not None
    vector = _evolve(start, h.n_qubits, pieces)
    return _score(vector, h.n_qubits, cfg, run_index, initial)


def _multi_basis_run(
    args: Tuple[Hamiltonian, DenseOperator, ProtocolRunConfig, float, int, int]
) -> int:
    h, r, cfg, tau, run_index, initial = args
    base = sample_multipliers(cfg.noise, h, run_index, [tau], stream=0)
    rotated = sample_multipliers(cfg.noise, h, run_index, [tau], stream=1)
    forward = apply_noise(h, base, 0, None, 1)
    reverse = [
        (conjugate_operator(op, r), duration)
        for op, duration in apply_noise(h, rotated, 0, None, -1)
    ]
    start = SystemState.basis(initial, h.n_qubits).vector
    assert start is not None
    vector = _evolve(start, h.n_qubits, forward)
    vector = r.entries @ vector
    vector = _evolve(vector, h.n_qubits, reverse)
    vector = r.entries.conj().T @ vector
    return _score(vector, h.n_qubits, cfg, run_index, initial)


def _fidelity_run(args: Tuple[Hamiltonian, ProtocolRunConfig, float, int, int]) -> float:
    h, cfg, tau, run_index, initial = args
    realization = sample_multipliers(cfg.noise, h, run_index, [tau], stream=0)
    start = SystemState.basis(initial, h.n_qubits)
    assert start.vector is not None
    noisy = _evolve(start.vector, h.n_qubits, apply_noise(h, realization, 0, None, 1))
    ideal = expm_hermitian(build_operator(h), tau).entries @ start.vector
    return fidelity(
        SystemState(h.n_qubits, vector=ideal), SystemState(h.n_qubits, vector=noisy)
    )


def _progress(cfg: ProtocolRunConfig, label: str) -> Any:
    return tqdm(
        list(enumerate(cfg.tau_grid)),
        desc=label,
        unit="point",
        disable=not cfg.show_progress,
    )


def _base_metadata(h: Hamiltonian, cfg: ProtocolRunConfig, aggregation: str) -> Dict[str, Any]:
    return {
        "protocol": cfg.protocol.value,
        "n_qubits": h.n_qubits,
        "terms": list(h.labels),
        "aggregation": aggregation,
        "seed": cfg.seed,
        "shots_per_run": cfg.shots_per_point,
        "noise": [
            {
                "kind": spec.kind.value,
                "relative_sd": spec.relative_sd,
                "correlation_time_s": spec.correlation_time,
                "seed": spec.seed,
                "terms": list(spec.terms) if spec.terms is not None else None,
            }
            for spec in cfg.noise
        ],
    }


def run_time_reversal(h: Hamiltonian, cfg: ProtocolRunConfig) -> DecayCurve:
    """Forward-then-reverse echo; success is the return probability to |i>."""
    initial = _default_initial(h, cfg)
    points = []
    for point_index, tau in _progress(cfg, "time-reversal"):
        jobs = [
            (h, cfg, tau, point_index * cfg.runs_per_point + run, initial)
            for run in range(cfg.runs_per_point)
        ]
        hits = _map(_time_reversal_run, jobs, cfg.n_workers)
        point = _shot_point(tau, hits, cfg)
        logger.info(
            f"Time-reversal tau={tau:.3e}s success={point.success_probability:.4f} "
            f"+/- {point.standard_error:.4f}"
        )
        points.append(point)
    metadata = _base_metadata(h, cfg, "shots")
    metadata.update(initial_state=initial, runs_per_point=cfg.runs_per_point)
    return DecayCurve(ProtocolKind.TIME_REVERSAL, points, metadata)


def run_multi_basis(h: Hamiltonian, r: DenseOperator, cfg: ProtocolRunConfig) -> DecayCurve:
    """Echo whose reverse half runs under H' = R H R† with independent noise.

    Raises:
        ProtocolError: If ``r`` is not a unitary on the Hamiltonian's qubits
    """
    if r.n_qubits != h.n_qubits or not r.is_unitary():
        raise ProtocolError("Multi-basis rotation must be a unitary on the same qubits")
    initial = _default_initial(h, cfg)
    points = []
    for point_index, tau in _progress(cfg, "multi-basis"):
        jobs = [
            (h, r, cfg, tau, point_index * cfg.runs_per_point + run, initial)
            for run in range(cfg.runs_per_point)
        ]
        hits = _map(_multi_basis_run, jobs, cfg.n_workers)
        point = _shot_point(tau, hits, cfg)
        logger.info(
            f"Multi-basis tau={tau:.3e}s success={point.success_probability:.4f} "
            f"+/- {point.standard_error:.4f}"
        )
        points.append(point)
    metadata = _base_metadata(h, cfg, "shots")
    metadata.update(initial_state=initial, runs_per_point=cfg.runs_per_point)
    return DecayCurve(ProtocolKind.MULTI_BASIS, points, metadata)


def run_simulation_fidelity(h: Hamiltonian, cfg: ProtocolRunConfig) -> DecayCurve:
    """Mean fidelity of the noisy forward evolution with the ideal one at each τ."""
    initial = _default_initial(h, cfg)
    points = []
    for point_index, tau in _progress(cfg, "fidelity"):
        jobs = [
            (h, cfg, tau, point_index * cfg.runs_per_point + run, initial)
            for run in range(cfg.runs_per_point)
        ]
        values = np.array(_map(_fidelity_run, jobs, cfg.n_workers))
        stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
        points.append(DecayPoint(tau, float(values.mean()), stderr, int(values.size)))
    metadata = _base_metadata(h, cfg, "runs")
    metadata.update(initial_state=initial, runs_per_point=cfg.runs_per_point)
    return DecayCurve(ProtocolKind.SIMULATION_FIDELITY, points, metadata)


def execute_sequence(
    h: Hamiltonian,
    layers: Sequence[Layer],
    initial: int,
    target: int,
    cfg: ProtocolRunConfig,
    run_index: int,
) -> int:
    """Run one noisy execution of a layer list and count hits on ``target``."""
    realization = sample_multipliers(
        cfg.noise, h, run_index, [layer.duration for layer in layers], stream=0
    )
    pieces: List[Tuple[DenseOperator, float]] = []
    for segment_index, layer in enumerate(layers):
        pieces += apply_noise(h, realization, segment_index, layer.mask(h), layer.sign)
    start = SystemState.basis(initial, h.n_qubits).vector
    assert start is not None
    vector = _evolve(start, h.n_qubits, pieces)
    return _score(vector, h.n_qubits, cfg, run_index, target)


@dataclass(frozen=True)
class _SequenceOutcome:
    sequence_index: int
    effective_time: float
    hits: Tuple[int, ...]
    sequence: Optional[RandomizedSequence]
    best_population: float = 0.0


def _sample_sequence(
    h: Hamiltonian, cfg: ProtocolRunConfig, compiler_cfg: CompilerConfig, tau: float, index: int
) -> RandomizedSequence:
    rng = stream_rng(cfg.seed, Stream.INITIAL_STATE, index)
    if cfg.initial_states:
        initial = int(cfg.initial_states[int(rng.integers(len(cfg.initial_states)))])
    else:
        initial = int(rng.integers(h.dimension))
    layers, phi = random_forward_sequence(
        h, cfg.n_steps, tau, derive_seed(cfg.seed, Stream.SEQUENCE, index), initial
    )
    search = replace(with_seed(compiler_cfg, cfg.seed, index), parallel=False)
    compiled = compile_inverse(phi, h, 2.0 * tau / cfg.n_steps, search)
    return RandomizedSequence(tuple(layers), compiled, initial)


def _randomized_job(
    args: Tuple[Hamiltonian, ProtocolRunConfig, CompilerConfig, float, int]
) -> _SequenceOutcome:
    h, cfg, compiler_cfg, tau, index = args
    try:
        sequence = _sample_sequence(h, cfg, compiler_cfg, tau, index)
    except NoConvergence as e:
        logger.warning(f"Skipping sequence {index} at tau={tau:.3e}s: {e}")
        return _SequenceOutcome(index, 0.0, (), None, e.best_population)
    hits = tuple(
        execute_sequence(
            h,
            sequence.layers,
            sequence.initial_state,
            sequence.compiled.target_basis_state,
            cfg,
            index * cfg.simulations_per_sequence + sim,
        )
        for sim in range(cfg.simulations_per_sequence)
    )
    return _SequenceOutcome(index, effective_time(h, sequence.layers), hits, sequence)


def _sequence_point(outcomes: Sequence[_SequenceOutcome], cfg: ProtocolRunConfig) -> DecayPoint:
    shots = cfg.simulations_per_sequence * cfg.shots_per_point
    means = np.array([sum(o.hits) / shots for o in outcomes])
    time = float(np.mean([o.effective_time for o in outcomes]))
    if means.size > 1:
        stderr = float(np.std(means, ddof=1) / math.sqrt(means.size))
    else:
        stderr = binomial_stderr(float(means[0]), shots)
    return DecayPoint(time, float(means.mean()), stderr, int(means.size))


def run_randomized_analog(
    h: Hamiltonian, cfg: ProtocolRunConfig, compiler_cfg: CompilerConfig
) -> DecayCurve:
    """Randomized analog verification over the τ grid.

    For each τ, ``n_sequences`` random sequences of ``n_steps`` layers are
    drawn, inverted by the compiler (noiselessly) and executed
    ``simulations_per_sequence`` times under the configured noise. Success is
    scored against the compiler's target basis state. Points aggregate
    per-sequence means; the time axis is the mean effective simulation time.

    Raises:
        ProtocolError: If the grid contains τ = 0
        NoConvergence: If no sequence at any τ could be compiled
    """
    if cfg.tau_grid[0] == 0:
        raise ProtocolError("Randomized sequences need tau > 0")
    points: List[DecayPoint] = []
    skipped: List[Dict[str, Any]] = []
    sequences: List[Dict[str, Any]] = []
    for point_index, tau in _progress(cfg, "randomized"):
        jobs = [
            (h, cfg, compiler_cfg, tau, point_index * cfg.n_sequences + j)
            for j in range(cfg.n_sequences)
        ]
        outcomes = _map(_randomized_job, jobs, cfg.n_workers)
        compiled = [o for o in outcomes if o.sequence is not None]
        for outcome in outcomes:
            entry: Dict[str, Any] = {"tau_s": tau, "sequence": outcome.sequence_index}
            if outcome.sequence is None:
                entry["best_population"] = outcome.best_population
                skipped.append(entry)
            else:
                compiled_inverse = outcome.sequence.compiled
                entry.update(
                    initial_state=outcome.sequence.initial_state,
                    target_basis_state=compiled_inverse.target_basis_state,
                    inverse_layers=len(compiled_inverse.layers),
                    steps_used=compiled_inverse.steps_used,
                )
                sequences.append(entry)
        if not compiled:
            logger.warning(f"No sequence compiled at tau={tau:.3e}s; point omitted")
            continue
        point = _sequence_point(compiled, cfg)
        logger.info(
            f"Randomized tau={tau:.3e}s t_eff={point.time:.3e}s "
            f"success={point.success_probability:.4f} +/- {point.standard_error:.4f}"
        )
        points.append(point)

    if not points:
        best = max((s["best_population"] for s in skipped), default=0.0)
        raise NoConvergence("No randomized sequence could be compiled", best_population=best)

    metadata = _base_metadata(h, cfg, "sequences")
    metadata.update(
        n_steps=cfg.n_steps,
        n_sequences=cfg.n_sequences,
        simulations_per_sequence=cfg.simulations_per_sequence,
        compiler_threshold=compiler_cfg.threshold,
        sequences=sequences,
        skipped=skipped,
    )
    return DecayCurve(ProtocolKind.RANDOMIZED_ANALOG, points, metadata)


def run_stored_sequences(
    h: Hamiltonian, sequences: Sequence[RandomizedSequence], cfg: ProtocolRunConfig
) -> DecayCurve:
    """Execute precompiled sequences; one point per sequence, sorted by effective time."""
    if not sequences:
        raise ProtocolError("No sequences to execute")
    points = []
    for index, sequence in enumerate(sequences):
        hits = [
            execute_sequence(
                h,
                sequence.layers,
                sequence.initial_state,
                sequence.compiled.target_basis_state,
                cfg,
                index * cfg.simulations_per_sequence + sim,
            )
            for sim in range(cfg.simulations_per_sequence)
        ]
        point = _shot_point(effective_time(h, sequence.layers), hits, cfg)
        points.append(point)
    points.sort(key=lambda p: p.time)
    metadata = _base_metadata(h, cfg, "shots")
    metadata.update(replayed_sequences=len(sequences))
    return DecayCurve(ProtocolKind.RANDOMIZED_ANALOG, points, metadata)
