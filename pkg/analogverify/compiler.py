"""Approximate inverse compilation by annealed Markov chain Monte Carlo.

A random forward sequence of term-subset layers drives a basis state to some
state |φ>. The search below looks for a *different* layer sequence U_inv with
max_b |<b|U_inv|φ>|² above a threshold. Each proposal appends a random layer
at the end or removes the first or last layer; the maintained product is
updated with a single matrix multiplication per proposal:

- append L at the end:       U <- L · U
- remove L from the end:     U <- L† · U
- remove L from the start:   U <- U · L†

Worse proposals are accepted with probability exp(Δp / β), β falling linearly
from ``beta_initial`` to ``beta_final`` over ``max_steps``.
"""

import functools
import logging
import math
import multiprocessing
from collections import deque
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Any, Callable, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from analogverify.exceptions import CompilerError, NoConvergence
from analogverify.quantum_core import (
    Direction,
    Hamiltonian,
    SystemState,
    basis_populations,
    combine_terms,
    expm_hermitian,
)
from analogverify.streams import Stream, derive_seed, stream_rng

logger = logging.getLogger(__name__)

APPEND, REMOVE_END, REMOVE_START = 0, 1, 2

Checkpoint = Callable[[int, np.ndarray, List["Layer"]], None]
StepBound = Callable[[], int]

# Step count of the best converged worker, shared with pool processes
_shared_bound: Optional[Any] = None


@dataclass(frozen=True)
class Layer:
    """A randomly chosen term subset evolved for a fixed time.

    Attributes:
        subset: Labels of the enabled terms, in Hamiltonian order
        sign: +1 for forward (e^{-iHt}), -1 for time-reversed (e^{+iHt})
        duration: Evolution time in seconds
    """

    subset: Tuple[str, ...]
    sign: int
    duration: float

    def __post_init__(self) -> None:
        if not self.subset:
            raise CompilerError("A layer needs at least one term")
        if self.sign not in (1, -1):
            raise CompilerError(f"Layer sign must be +1 or -1, got {self.sign}")
        if not self.duration > 0:
            raise CompilerError(f"Layer duration must be positive, got {self.duration}")
        object.__setattr__(self, "subset", tuple(self.subset))

    def mask(self, h: Hamiltonian) -> np.ndarray:
        unknown = sorted(set(self.subset) - set(h.labels))
        if unknown:
            raise CompilerError(f"Layer references unknown term label(s): {unknown}")
        return np.array([label in self.subset for label in h.labels], dtype=bool)

    def to_dict(self) -> Dict[str, object]:
        return {"subset": list(self.subset), "sign": self.sign, "duration_s": self.duration}

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "Layer":
        return cls(
            subset=tuple(data["subset"]),  # type: ignore[arg-type]
            sign=int(data["sign"]),  # type: ignore[call-overload]
            duration=float(data["duration_s"]),  # type: ignore[arg-type]
        )


@dataclass(frozen=True)
class CompilerConfig:
    """Annealing schedule, stopping rule and parallelism of the search."""

    beta_initial: float = 0.5
    beta_final: float = 0.005
    threshold: float = 0.99
    max_steps: int = 20_000
    n_workers: int = 1
    seed: int = 0
    proposal_weights: Tuple[float, float, float] = (0.5, 0.25, 0.25)
    parallel: bool = False

    def __post_init__(self) -> None:
        if not self.beta_initial >= self.beta_final > 0:
            raise CompilerError(
                f"Need beta_initial >= beta_final > 0, got {self.beta_initial}, {self.beta_final}"
            )
        if not 0 < self.threshold <= 1:
            raise CompilerError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.max_steps < 1 or self.n_workers < 1:
            raise CompilerError("max_steps and n_workers must be positive")
        weights = tuple(float(w) for w in self.proposal_weights)
        if len(weights) != 3 or min(weights) < 0 or weights[0] <= 0:
            raise CompilerError(f"Invalid proposal weights {self.proposal_weights}")
        object.__setattr__(self, "proposal_weights", weights)

    def beta(self, step: int) -> float:
        """Linear schedule; step 0 gives beta_initial, step max_steps gives beta_final."""
        fraction = min(step / self.max_steps, 1.0)
        return self.beta_initial + (self.beta_final - self.beta_initial) * fraction


@dataclass(frozen=True)
class CompiledSequence:
    """Result of a converged search."""

    layers: Tuple[Layer, ...]
    target_basis_state: int
    achieved_population: float
    steps_used: int
    worker_index: int = 0


@dataclass(frozen=True)
class _WorkerResult:
    worker_index: int
    converged: bool
    layers: Tuple[Layer, ...]
    target_basis_state: int
    population: float
    best_population: float
    steps_used: int


class LayerCache:
    """Memoized layer unitaries for one Hamiltonian and layer duration."""

    def __init__(self, h: Hamiltonian, duration: float) -> None:
        self.h = h
        self.duration = duration
        self._cache: Dict[Tuple[Tuple[str, ...], int], np.ndarray] = {}

    def unitary(self, layer: Layer) -> np.ndarray:
        key = (layer.subset, layer.sign)
        if key not in self._cache:
            weights = layer.mask(self.h).astype(float)
            direction = Direction.FORWARD if layer.sign == 1 else Direction.REVERSE
            generator = combine_terms(self.h, weights)
            self._cache[key] = expm_hermitian(generator, layer.duration, direction).entries
        return self._cache[key]


def random_layer(h: Hamiltonian, duration: float, rng: np.random.Generator) -> Layer:
    """Uniform draw over the 2^m - 1 nonempty subsets and both signs."""
    while True:
        bits = rng.integers(0, 2, size=len(h.terms)).astype(bool)
        if bits.any():
            break
    sign = 1 if rng.integers(0, 2) == 0 else -1
    subset = tuple(label for label, bit in zip(h.labels, bits) if bit)
    return Layer(subset, sign, duration)


def random_forward_sequence(
    h: Hamiltonian, n: int, tau: float, seed: int, initial_state: int = 0
) -> Tuple[List[Layer], SystemState]:
    """Draw ``n`` random layers of duration 2τ/n and apply them to ``|initial_state>``.

    Raises:
        CompilerError: If ``n < 1`` or the Hamiltonian has no terms
    """
    if n < 1:
        raise CompilerError(f"A forward sequence needs n >= 1 layers, got {n}")
    if not h.terms:
        raise CompilerError("Cannot draw layers from a Hamiltonian without terms")
    rng = stream_rng(seed, Stream.SEQUENCE)
    duration = 2.0 * tau / n
    cache = LayerCache(h, duration)
    layers = [random_layer(h, duration, rng) for _ in range(n)]
    vector = SystemState.basis(initial_state, h.n_qubits).vector
    assert vector is not None
    for layer in layers:
        vector = cache.unitary(layer) @ vector
    return layers, SystemState(h.n_qubits, vector=vector)


def _objective(vector: np.ndarray) -> Tuple[float, int]:
    populations = np.abs(vector) ** 2
    index = int(np.argmax(populations))
    return float(populations[index]), index


def replay_population(phi: SystemState, h: Hamiltonian, layers: Sequence[Layer]) -> np.ndarray:
    """Noiseless basis populations after applying ``layers`` to ``phi``."""
    if phi.vector is None:
        raise CompilerError("Replay needs a pure state")
    vector = np.array(phi.vector)
    caches: Dict[float, LayerCache] = {}
    for layer in layers:
        cache = caches.setdefault(layer.duration, LayerCache(h, layer.duration))
        vector = cache.unitary(layer) @ vector
    return basis_populations(SystemState(h.n_qubits, vector=vector))


def _accept(delta: float, beta: float, rng: np.random.Generator) -> bool:
    """Metropolis rule: always take an improvement, a loss with probability exp(Δ/β)."""
    return delta > 0 or rng.random() < math.exp(delta / beta)


def anneal_search(
    phi_vector: np.ndarray,
    h: Hamiltonian,
    layer_duration: float,
    cfg: CompilerConfig,
    worker_index: int = 0,
    checkpoint: Optional[Checkpoint] = None,
    checkpoint_every: int = 100,
    step_bound: Optional[StepBound] = None,
    bound_every: int = 50,
) -> _WorkerResult:
    """Run one seeded annealing chain until the threshold or the step budget.

    ``step_bound`` reports the step count of the best converged chain so far;
    it is polled every ``bound_every`` steps and the chain gives up once it is
    past that count, since it can then no longer win. The β schedule always
    follows ``cfg.max_steps``, so a bounded chain retraces an unbounded one.
    """
    rng = stream_rng(cfg.seed, Stream.COMPILER, worker_index)
    cache = LayerCache(h, layer_duration)
    weights = np.asarray(cfg.proposal_weights) / sum(cfg.proposal_weights)
    phi = np.asarray(phi_vector, dtype=complex)
    dim = phi.size
    product = np.eye(dim, dtype=complex)
    layers: Deque[Layer] = deque()
    population, target = _objective(phi)
    best = population

    if population >= cfg.threshold:
        return _WorkerResult(worker_index, True, (), target, population, best, 0)

    limit = cfg.max_steps
    for step in range(1, cfg.max_steps + 1):
        if step_bound is not None and (step == 1 or step % bound_every == 0):
            limit = min(cfg.max_steps, step_bound())
        if step > limit:
            logger.debug(f"Worker {worker_index} stopped at step {step}, past the best {limit}")
            return _WorkerResult(
                worker_index, False, tuple(layers), target, population, best, step - 1
            )
        beta = cfg.beta(step)
        move = int(rng.choice(3, p=weights))
        while move != APPEND and not layers:
            move = int(rng.choice(3, p=weights))

        if move == APPEND:
            layer = random_layer(h, layer_duration, rng)
            candidate = cache.unitary(layer) @ product
        elif move == REMOVE_END:
            candidate = cache.unitary(layers[-1]).conj().T @ product
        else:
            candidate = product @ cache.unitary(layers[0]).conj().T

        new_population, new_target = _objective(candidate @ phi)
        delta = new_population - population
        if _accept(delta, beta, rng):
            product = candidate
            population, target = new_population, new_target
            if move == APPEND:
                layers.append(layer)
            elif move == REMOVE_END:
                layers.pop()
            else:
                layers.popleft()
            best = max(best, population)

        if checkpoint is not None and step % checkpoint_every == 0:
            checkpoint(step, product, list(layers))

        if population >= cfg.threshold:
            logger.debug(f"Worker {worker_index} converged after {step} steps (p={population:.4f})")
            return _WorkerResult(
                worker_index, True, tuple(layers), target, population, best, step
            )

    logger.debug(f"Worker {worker_index} exhausted {cfg.max_steps} steps (best p={best:.4f})")
    return _WorkerResult(
        worker_index, False, tuple(layers), target, population, best, cfg.max_steps
    )


def _init_pool(bound: Any) -> None:
    global _shared_bound
    _shared_bound = bound


def _read_shared_bound() -> int:
    if _shared_bound is None:
        raise CompilerError("No shared step bound in this process")
    return int(_shared_bound.value)


def _worker(args: Tuple[np.ndarray, Hamiltonian, float, CompilerConfig, int]) -> _WorkerResult:
    phi_vector, h, duration, cfg, worker_index = args
    if _shared_bound is None:
        return anneal_search(phi_vector, h, duration, cfg, worker_index)
    result = anneal_search(
        phi_vector, h, duration, cfg, worker_index, step_bound=_read_shared_bound
    )
    if result.converged:
        with _shared_bound.get_lock():
            _shared_bound.value = min(_shared_bound.value, result.steps_used)
    return result


def compile_inverse(
    phi: SystemState, h: Hamiltonian, layer_duration: float, cfg: CompilerConfig
) -> CompiledSequence:
    """Search for a layer sequence that maps ``phi`` close to a basis state.

    Workers run independent chains with derived seeds. The winner is the
    converged worker with the fewest steps, ties going to the lowest worker
    index, so the result does not depend on scheduling. Once a worker has
    converged, the others stop as soon as they pass its step count.

    Args:
        phi: Pure state to invert
        h: Hamiltonian whose terms form the layers
        layer_duration: Duration of every inversion layer in seconds
        cfg: Search configuration

    Returns:
        The winning :class:`CompiledSequence`

    Raises:
        CompilerError: On a mixed input state or a non-positive layer duration
        NoConvergence: If no worker reaches the threshold
    """
    if phi.vector is None:
        raise CompilerError("compile_inverse requires a pure state")
    if phi.n_qubits != h.n_qubits:
        raise CompilerError(f"State has {phi.n_qubits} qubits, Hamiltonian {h.n_qubits}")
    if not layer_duration > 0:
        raise CompilerError(f"Layer duration must be positive, got {layer_duration}")
    if not h.terms:
        raise CompilerError("Cannot compile with a Hamiltonian without terms")

    jobs = [
        (np.array(phi.vector), h, layer_duration, cfg, worker)
        for worker in range(cfg.n_workers)
    ]
    results: List[_WorkerResult] = []
    if cfg.parallel and cfg.n_workers > 1:
        bound = multiprocessing.Value("q", cfg.max_steps)
        with ProcessPoolExecutor(
            max_workers=cfg.n_workers, initializer=_init_pool, initargs=(bound,)
        ) as executor:
            futures = [executor.submit(_worker, job) for job in jobs]
            try:
                for future in as_completed(futures):
                    results.append(future.result())
            except BaseException:
                for future in futures:
                    future.cancel()
                raise
    else:
        best_steps = cfg.max_steps
        for phi_vector, h_job, duration, job_cfg, worker in jobs:
            result = anneal_search(
                phi_vector,
                h_job,
                duration,
                job_cfg,
                worker,
                step_bound=functools.partial(int, best_steps),
            )
            if result.converged:
                best_steps = min(best_steps, result.steps_used)
            results.append(result)

    converged = [r for r in results if r.converged]
    if not converged:
        best = max(r.best_population for r in results)
        total = sum(r.steps_used for r in results)
        message = (
            f"No worker reached threshold {cfg.threshold} within {cfg.max_steps} steps "
            f"(best population {best:.4f})"
        )
        logger.warning(message)
        raise NoConvergence(message, best_population=best, steps_used=total)

    winner = min(converged, key=lambda r: (r.steps_used, r.worker_index))
    logger.info(
        f"Compiled {len(winner.layers)} inversion layers in {winner.steps_used} steps "
        f"(worker {winner.worker_index}, p={winner.population:.4f})"
    )
    return CompiledSequence(
        layers=winner.layers,
        target_basis_state=winner.target_basis_state,
        achieved_population=winner.population,
        steps_used=winner.steps_used,
        worker_index=winner.worker_index,
    )


def with_seed(cfg: CompilerConfig, seed: int, index: int) -> CompilerConfig:
    """Copy of ``cfg`` with a seed derived from ``(seed, index)``."""
    return replace(cfg, seed=derive_seed(seed, Stream.COMPILER, index))
