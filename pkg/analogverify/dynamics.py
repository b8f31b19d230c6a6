"""Time evolution under piecewise-constant Hamiltonians and Lindblad dephasing.

Pure states are propagated exactly, one eigendecomposition per segment. Open
system dynamics integrate

    dρ/dt = -i[H, ρ] + Σ_k (L_k ρ L_k† - ½{L_k† L_k, ρ})

with a fixed-step fourth-order Runge-Kutta scheme on the full density matrix.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from analogverify.exceptions import DynamicsError, QuantumCoreError
from analogverify.quantum_core import (
    PAULI_MATRICES,
    DenseOperator,
    Direction,
    SystemState,
    basis_populations,
    expm_hermitian,
    fidelity,
    pauli_decomposition,
)

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Segment:
    """One constant piece of a schedule."""

    operator: DenseOperator
    duration: float
    direction: Direction = Direction.FORWARD


@dataclass(frozen=True, eq=False)
class PiecewiseSchedule:
    """Ordered segments applied first to last.

    Raises:
        DynamicsError: On a non-positive duration or mixed operator dimensions
    """

    segments: Tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        segments = tuple(self.segments)
        for position, segment in enumerate(segments):
            if not segment.duration > 0:
                raise DynamicsError(
                    f"Segment {position} has non-positive duration {segment.duration}"
                )
        dims = {segment.operator.n_qubits for segment in segments}
        if len(dims) > 1:
            raise DynamicsError(f"Schedule mixes operator sizes {sorted(dims)} qubits")
        object.__setattr__(self, "segments", segments)

    @property
    def total_duration(self) -> float:
        return float(sum(segment.duration for segment in self.segments))


class DephasingMode(str, Enum):
    """Placement of σ_z dephasing on a multi-qubit register."""

    PER_QUBIT = "per_qubit"
    COLLECTIVE = "collective"


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Collapse operators (already rate-scaled) and an optional fixed step.

    When ``integrator_step`` is None, :func:`default_step` chooses it.
    """

    collapse_operators: Tuple[np.ndarray, ...] = ()
    integrator_step: Optional[float] = None

    def __post_init__(self) -> None:
        if self.integrator_step is not None and not self.integrator_step > 0:
            raise DynamicsError(
                f"integrator_step must be positive, got {self.integrator_step}"
            )
        object.__setattr__(
            self,
            "collapse_operators",
            tuple(np.asarray(c, dtype=complex) for c in self.collapse_operators),
        )


def dephasing_operators(
    n_qubits: int,
    gamma_phi: float,
    mode: Union[DephasingMode, str] = DephasingMode.COLLECTIVE,
) -> Tuple[np.ndarray, ...]:
    """σ_z dephasing collapse operators scaled by √(γ_φ/2).

    ``per_qubit`` gives one operator per site; ``collective`` gives a single
    √(γ_φ/2)·Σ_i σ_z^(i), under which states with equal excitation number
    (e.g. |ge> and |eg>) do not dephase with respect to each other.
    """
    if gamma_phi < 0:
        raise DynamicsError(f"Dephasing rate must be non-negative, got {gamma_phi}")
    if gamma_phi == 0:
        return ()
    scale = math.sqrt(gamma_phi / 2.0)
    locals_ = []
    for site in range(n_qubits):
        left = np.eye(2**site)
        right = np.eye(2 ** (n_qubits - site - 1))
        locals_.append(np.kron(np.kron(left, PAULI_MATRICES["Z"]), right))
    if DephasingMode(mode) is DephasingMode.PER_QUBIT:
        return tuple(scale * z for z in locals_)
    return (scale * np.sum(locals_, axis=0),)


def default_step(h: DenseOperator, t: float) -> float:
    """min(1/(100·f_max), t/1000) with f_max the largest Pauli coefficient of h in Hz."""
    coefficients = pauli_decomposition(h).values()
    f_max = max((abs(c) for c in coefficients), default=0.0) / (2 * math.pi)
    candidates = [t / 1000.0] if t > 0 else []
    if f_max > 0:
        candidates.append(1.0 / (100.0 * f_max))
    if not candidates:
        return 1.0
    return min(candidates)


def evolve_piecewise(s: SystemState, sched: PiecewiseSchedule) -> SystemState:
    """Apply segment propagators to a pure state in schedule order.

    Raises:
        DynamicsError: If the state is mixed or dimensions disagree
    """
    if s.vector is None:
        raise DynamicsError("evolve_piecewise requires a pure state")
    vector = np.array(s.vector)
    for position, segment in enumerate(sched.segments):
        if segment.operator.n_qubits != s.n_qubits:
            raise DynamicsError(
                f"Segment {position} acts on {segment.operator.n_qubits} qubits, "
                f"state has {s.n_qubits}"
            )
        try:
            propagator = expm_hermitian(segment.operator, segment.duration, segment.direction)
        except QuantumCoreError as e:
            raise DynamicsError(f"Segment {position}: {e}") from e
        vector = propagator.entries @ vector
    return SystemState(s.n_qubits, vector=vector)


def _lindblad_rhs(
    h: np.ndarray, rho: np.ndarray, jumps: Sequence[Tuple[np.ndarray, np.ndarray]]
) -> np.ndarray:
    drho = -1j * (h @ rho - rho @ h)
    for c, cdc in jumps:
        drho += c @ rho @ c.conj().T - 0.5 * (cdc @ rho + rho @ cdc)
    return drho


def _rk4_step(
    h: np.ndarray,
    rho: np.ndarray,
    dt: float,
    jumps: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    k1 = _lindblad_rhs(h, rho, jumps)
    k2 = _lindblad_rhs(h, rho + 0.5 * dt * k1, jumps)
    k3 = _lindblad_rhs(h, rho + 0.5 * dt * k2, jumps)
    k4 = _lindblad_rhs(h, rho + dt * k3, jumps)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(
    h: np.ndarray,
    rho: np.ndarray,
    t: float,
    step: float,
    jumps: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    if t == 0:
        return rho
    n_steps = max(1, math.ceil(t / step - 1e-9))
    dt = t / n_steps
    for _ in range(n_steps):
        rho = _rk4_step(h, rho, dt, jumps)
        rho = 0.5 * (rho + rho.conj().T)
        trace = np.real(np.trace(rho))
        if trace > 0:
            rho = rho / trace
    return rho


def _prepare(
    rho0: SystemState, h: DenseOperator, lind: LindbladSpec
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray]]]:
    if rho0.n_qubits != h.n_qubits:
        raise DynamicsError(
            f"State has {rho0.n_qubits} qubits, Hamiltonian {h.n_qubits}"
        )
    dim = h.dimension
    jumps = []
    for c in lind.collapse_operators:
        if c.shape != (dim, dim):
            raise DynamicsError(f"Collapse operator shape {c.shape} does not match {dim}")
        jumps.append((c, c.conj().T @ c))
    return np.array(rho0.density_matrix()), jumps


def _finish(rho: np.ndarray, n_qubits: int) -> SystemState:
    if abs(np.real(np.trace(rho)) - 1.0) > TRACE_TOL:
        raise DynamicsError("Lindblad integration lost trace normalization")
    eigenvalues, eigenvectors = np.linalg.eigh(rho)
    if eigenvalues[0] < 0:
        # truncation error can leave eigenvalues of order 1e-12 below zero
        clipped = np.clip(eigenvalues, 0.0, None)
        rho = (eigenvectors * (clipped / clipped.sum())) @ eigenvectors.conj().T
        rho = 0.5 * (rho + rho.conj().T)
    return SystemState(n_qubits, matrix=rho)


def evolve_lindblad(
    rho0: SystemState, h: DenseOperator, lind: LindbladSpec, t: float
) -> SystemState:
    """Integrate the Lindblad equation from ``rho0`` for ``t`` seconds.

    Args:
        rho0: Initial state (pure inputs are promoted to density matrices)
        h: Hamiltonian in rad/s
        lind: Collapse operators and step
        t: Evolution time in seconds

    Returns:
        Density matrix at time ``t``

    Raises:
        DynamicsError: On negative time, mismatched dimensions or a step larger than ``t``
    """
    if t < 0:
        raise DynamicsError(f"Evolution time must be non-negative, got {t}")
    if lind.integrator_step is not None and t > 0 and lind.integrator_step > t:
        raise DynamicsError(
            f"Integrator step {lind.integrator_step} exceeds evolution time {t}"
        )
    rho, jumps = _prepare(rho0, h, lind)
    step = lind.integrator_step or default_step(h, t)
    rho = _integrate(np.array(h.entries), rho, t, step, jumps)
    return _finish(rho, h.n_qubits)


def _check_grid(t_grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DynamicsError("Time grid must be a non-empty sequence")
    if grid[0] < 0 or np.any(np.diff(grid) <= 0):
        raise DynamicsError("Time grid must be non-negative and strictly increasing")
    return grid


def density_trajectory(
    rho0: SystemState, h: DenseOperator, lind: LindbladSpec, t_grid: Sequence[float]
) -> List[Tuple[float, SystemState]]:
    """Density matrices at each grid time, integrated progressively from t = 0.

    The step is chosen once for the whole horizon so every interval uses the
    same resolution.
    """
    grid = _check_grid(t_grid)
    horizon = float(grid[-1])
    if lind.integrator_step is not None and horizon > 0 and lind.integrator_step > horizon:
        raise DynamicsError(
            f"Integrator step {lind.integrator_step} exceeds horizon {horizon}"
        )
    rho, jumps = _prepare(rho0, h, lind)
    step = lind.integrator_step or default_step(h, horizon)
    generator = np.array(h.entries)
    trajectory = []
    current = 0.0
    for time in grid:
        rho = _integrate(generator, rho, float(time) - current, step, jumps)
        current = float(time)
        trajectory.append((current, _finish(rho, h.n_qubits)))
    return trajectory


def population_trajectory(
    rho0: SystemState, h: DenseOperator, lind: LindbladSpec, t_grid: Sequence[float]
) -> List[Tuple[float, np.ndarray]]:
    """Basis populations at each grid time."""
    return [
        (time, basis_populations(state))
        for time, state in density_trajectory(rho0, h, lind, t_grid)
    ]


def fidelity_trajectory(
    psi0: SystemState,
    ideal: DenseOperator,
    actual: DenseOperator,
    lind: LindbladSpec,
    t_grid: Sequence[float],
) -> List[Tuple[float, float]]:
    """F̃(t) between unitary evolution under ``ideal`` and Lindblad evolution under ``actual``.

    Raises:
        DynamicsError: If ``psi0`` is not pure
    """
    if psi0.vector is None:
        raise DynamicsError("The ideal reference evolution needs a pure initial state")
    curve = []
    for time, noisy in density_trajectory(psi0, actual, lind, t_grid):
        propagator = expm_hermitian(ideal, time)
        reference = SystemState(psi0.n_qubits, vector=propagator.entries @ psi0.vector)
        curve.append((time, fidelity(reference, noisy)))
    return curve


def fidelity_half_time(
    times: Sequence[float],
    values: Sequence[float],
    level: float = 0.5,
    window: float = 0.0,
) -> Optional[float]:
    """First time the centred running mean of ``values`` drops below ``level``.

    Args:
        times: Increasing sample times in seconds
        values: Fidelity samples
        level: Threshold to detect
        window: Full width of the running mean in seconds; 0 uses raw samples

    Returns:
        The crossing time, or None if the curve never drops below ``level``
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise DynamicsError("times and values must have equal length")
    half = window / 2.0
    for time in t:
        if time - half < t[0] - 1e-15:
            continue
        mask = np.abs(t - time) <= half + 1e-15
        if float(np.mean(v[mask])) < level:
            return float(time)
    return None
