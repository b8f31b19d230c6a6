"""Dense linear algebra over n-qubit Hilbert spaces.

This module provides Pauli strings, labelled Hamiltonian terms, dense
operators and states, together with the exact propagators, rotations and
state measures the rest of the package is built on.

Basis ordering is fixed once here: qubit 0 is the most significant bit of a
basis index, so ``|10>`` on two qubits is index 2.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from analogverify.exceptions import QuantumCoreError

logger = logging.getLogger(__name__)

UNITARY_TOL = 1e-9
HERMITIAN_TOL = 1e-8
STATE_TOL = 1e-10
EIGENVALUE_FLOOR = -1e-9

PAULI_MATRICES: Dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
for _matrix in PAULI_MATRICES.values():
    _matrix.setflags(write=False)


class Direction(str, Enum):
    """Sense of a time evolution: forward is e^{-iHt}, reverse is e^{+iHt}."""

    FORWARD = "forward"
    REVERSE = "reverse"


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PauliString:
    """Tensor product of single-site Pauli factors.

    Sites absent from ``factors`` carry the identity; an empty string is the
    identity operator. Factors are stored sorted by site.

    Attributes:
        factors: Tuple of ``(site, axis)`` pairs with axis in ``{"X", "Y", "Z"}``
    """

    factors: Tuple[Tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        normalized = []
        for site, axis in self.factors:
            axis_upper = str(axis).upper()
            if axis_upper not in ("X", "Y", "Z"):
                raise QuantumCoreError(f"Unknown Pauli axis '{axis}' at site {site}")
            if int(site) < 0:
                raise QuantumCoreError(f"Pauli site index must be non-negative, got {site}")
            normalized.append((int(site), axis_upper))
        sites = [site for site, _ in normalized]
        if len(set(sites)) != len(sites):
            raise QuantumCoreError(f"Repeated site in Pauli string: {sorted(sites)}")
        object.__setattr__(self, "factors", tuple(sorted(normalized)))

    @classmethod
    def from_dict(cls, mapping: Mapping[int, str]) -> "PauliString":
        """Build a Pauli string from a ``{site: axis}`` map."""
        return cls(tuple((int(site), axis) for site, axis in mapping.items()))

    @classmethod
    def parse(cls, text: str) -> "PauliString":
        """Parse a compact description such as ``"X0 X1"`` or ``"I"``.

        Raises:
            QuantumCoreError: If a token is not an axis letter followed by a site
        """
        tokens = text.replace("*", " ").split()
        factors = []
        for token in tokens:
            if token.upper() == "I":
                continue
            axis, site = token[:1], token[1:]
            if not site.isdigit():
                raise QuantumCoreError(f"Cannot parse Pauli token '{token}' in '{text}'")
            factors.append((int(site), axis))
        return cls(tuple(factors))

    @property
    def sites(self) -> Tuple[int, ...]:
        return tuple(site for site, _ in self.factors)

    def relabel(self, mapping: Mapping[int, int]) -> "PauliString":
        """Return the same string with site indices mapped through ``mapping``."""
        return PauliString(tuple((mapping[site], axis) for site, axis in self.factors))

    def matrix(self, n_qubits: int) -> np.ndarray:
        """Dense 2^n x 2^n matrix; the leftmost Kronecker factor is qubit 0."""
        if self.factors and self.factors[-1][0] >= n_qubits:
            raise QuantumCoreError(
                f"Pauli string {self} does not fit on {n_qubits} qubits"
            )
        axes = dict(self.factors)
        result = np.ones((1, 1), dtype=complex)
        for site in range(n_qubits):
            result = np.kron(result, PAULI_MATRICES[axes.get(site, "I")])
        return result

    def __str__(self) -> str:
        if not self.factors:
            return "I"
        return " ".join(f"{axis}{site}" for site, axis in self.factors)


@dataclass(frozen=True)
class PauliTermSum:
    """A labelled, toggleable Hamiltonian term: a weighted sum of Pauli strings.

    Coefficients are angular frequencies in rad/s.

    Attributes:
        label: Name of the term, unique within a Hamiltonian
        summands: Tuple of ``(coefficient, PauliString)`` pairs
        enabled: Whether the term contributes to the full operator
        sign: +1 or -1, applied to every summand
    """

    label: str
    summands: Tuple[Tuple[float, PauliString], ...]
    enabled: bool = True
    sign: int = 1

    def __post_init__(self) -> None:
        if not self.label:
            raise QuantumCoreError("Hamiltonian term label must be non-empty")
        if self.sign not in (1, -1):
            raise QuantumCoreError(f"Term '{self.label}' sign must be +1 or -1, got {self.sign}")
        summands = tuple((float(c), s) for c, s in self.summands)
        for coefficient, _ in summands:
            if not math.isfinite(coefficient):
                raise QuantumCoreError(f"Term '{self.label}' has non-finite coefficient")
        object.__setattr__(self, "summands", summands)

    @property
    def support(self) -> frozenset:
        """Sites touched by any summand."""
        return frozenset(site for _, string in self.summands for site in string.sites)

    @property
    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c, _ in self.summands), default=0.0)

    def relabel(self, mapping: Mapping[int, int]) -> "PauliTermSum":
        return PauliTermSum(
            label=self.label,
            summands=tuple((c, s.relabel(mapping)) for c, s in self.summands),
            enabled=self.enabled,
            sign=self.sign,
        )


@dataclass(frozen=True)
class Hamiltonian:
    """A target Hamiltonian as an ordered collection of labelled terms.

    Attributes:
        n_qubits: Number of qubits the Hamiltonian acts on
        terms: Tuple of :class:`PauliTermSum`
    """

    n_qubits: int
    terms: Tuple[PauliTermSum, ...]

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise QuantumCoreError(f"n_qubits must be positive, got {self.n_qubits}")
        terms = tuple(self.terms)
        labels = [term.label for term in terms]
        duplicates = sorted({label for label in labels if labels.count(label) > 1})
        if duplicates:
            raise QuantumCoreError(f"Duplicate term labels: {duplicates}")
        for term in terms:
            for site in term.support:
                if site >= self.n_qubits:
                    raise QuantumCoreError(
                        f"Term '{term.label}' touches site {site} on a "
                        f"{self.n_qubits}-qubit Hamiltonian"
                    )
        object.__setattr__(self, "terms", terms)

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(term.label for term in self.terms)

    @property
    def dimension(self) -> int:
        return 2**self.n_qubits

    def term(self, label: str) -> PauliTermSum:
        for term in self.terms:
            if term.label == label:
                return term
        raise QuantumCoreError(f"Unknown term label '{label}'")

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError as e:
            raise QuantumCoreError(f"Unknown term label '{label}'") from e


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """A 2^n x 2^n complex matrix tagged with its qubit count."""

    entries: np.ndarray
    n_qubits: int

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=complex)
        dim = 2**self.n_qubits
        if entries.shape != (dim, dim):
            raise QuantumCoreError(
                f"Operator shape {entries.shape} inconsistent with {self.n_qubits} qubits"
            )
        object.__setattr__(self, "entries", _readonly(entries))

    @property
    def dimension(self) -> int:
        return 2**self.n_qubits

    def dagger(self) -> "DenseOperator":
        return DenseOperator(self.entries.conj().T, self.n_qubits)

    def __matmul__(self, other: "DenseOperator") -> "DenseOperator":
        if other.n_qubits != self.n_qubits:
            raise QuantumCoreError(
                f"Cannot multiply {self.n_qubits}- and {other.n_qubits}-qubit operators"
            )
        return DenseOperator(self.entries @ other.entries, self.n_qubits)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.entries), initial=0.0)))
        return bool(np.max(np.abs(self.entries - self.entries.conj().T)) <= tol * scale)

    def is_unitary(self, tol: float = UNITARY_TOL) -> bool:
        product = self.entries.conj().T @ self.entries
        return bool(np.max(np.abs(product - np.eye(self.dimension))) <= tol)

    @classmethod
    def identity(cls, n_qubits: int) -> "DenseOperator":
        return cls(np.eye(2**n_qubits, dtype=complex), n_qubits)


@dataclass(frozen=True, eq=False)
class SystemState:
    """A pure state vector or a density matrix over ``n_qubits``.

    Exactly one of ``vector`` and ``matrix`` is set.
    """

    n_qubits: int
    vector: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        if (self.vector is None) == (self.matrix is None):
            raise QuantumCoreError("SystemState needs exactly one of vector or matrix")
        dim = 2**self.n_qubits
        if self.vector is not None:
            vector = np.array(self.vector, dtype=complex).reshape(-1)
            if vector.shape != (dim,):
                raise QuantumCoreError(
                    f"State vector length {vector.shape[0]} inconsistent with "
                    f"{self.n_qubits} qubits"
                )
            norm = float(np.linalg.norm(vector))
            if abs(norm - 1.0) > STATE_TOL:
                raise QuantumCoreError(f"State vector norm {norm!r} deviates from 1")
            object.__setattr__(self, "vector", _readonly(vector))
        else:
            matrix = np.array(self.matrix, dtype=complex)
            if matrix.shape != (dim, dim):
                raise QuantumCoreError(
                    f"Density matrix shape {matrix.shape} inconsistent with {self.n_qubits} qubits"
                )
            if np.max(np.abs(matrix - matrix.conj().T)) > STATE_TOL:
                raise QuantumCoreError("Density matrix is not Hermitian")
            trace = complex(np.trace(matrix))
            if abs(trace - 1.0) > STATE_TOL:
                raise QuantumCoreError(f"Density matrix trace {trace!r} deviates from 1")
            smallest = float(np.min(np.linalg.eigvalsh(matrix)))
            if smallest < EIGENVALUE_FLOOR:
                raise QuantumCoreError(f"Density matrix has negative eigenvalue {smallest!r}")
            object.__setattr__(self, "matrix", _readonly(matrix))

    @classmethod
    def basis(cls, index: int, n_qubits: int) -> "SystemState":
        """Computational basis state ``|index>``."""
        dim = 2**n_qubits
        if not 0 <= index < dim:
            raise QuantumCoreError(f"Basis index {index} out of range for {n_qubits} qubits")
        vector = np.zeros(dim, dtype=complex)
        vector[index] = 1.0
        return cls(n_qubits, vector=vector)

    @classmethod
    def from_bitstring(cls, bits: str) -> "SystemState":
        """Basis state from a bitstring; the first character is qubit 0."""
        if not bits or set(bits) - {"0", "1"}:
            raise QuantumCoreError(f"Invalid basis bitstring '{bits}'")
        return cls.basis(int(bits, 2), len(bits))

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    @property
    def dimension(self) -> int:
        return 2**self.n_qubits

    def density_matrix(self) -> np.ndarray:
        if self.vector is not None:
            return np.outer(self.vector, self.vector.conj())
        assert self.matrix is not None
        return self.matrix


@lru_cache(maxsize=4096)
def term_matrix(term: PauliTermSum, n_qubits: int) -> np.ndarray:
    """Dense matrix of ``Σ coefficient · string`` for one term, ignoring sign and enabled."""
    dim = 2**n_qubits
    result = np.zeros((dim, dim), dtype=complex)
    for coefficient, string in term.summands:
        result += coefficient * string.matrix(n_qubits)
    return _readonly(result)


@lru_cache(maxsize=256)
def term_stack(h: Hamiltonian) -> np.ndarray:
    """Stack of signed term matrices, shape ``(n_terms, 2^n, 2^n)``."""
    dim = h.dimension
    if not h.terms:
        return _readonly(np.zeros((0, dim, dim), dtype=complex))
    stack = np.stack([term.sign * term_matrix(term, h.n_qubits) for term in h.terms])
    return _readonly(stack)


def combine_terms(h: Hamiltonian, weights: Sequence[float]) -> np.ndarray:
    """Return ``Σ_k weights[k] · sign_k · H_k`` as a dense matrix."""
    weights_array = np.asarray(weights, dtype=float)
    if weights_array.shape != (len(h.terms),):
        raise QuantumCoreError(
            f"Expected {len(h.terms)} term weights, got {weights_array.shape[0]}"
        )
    if not h.terms:
        return np.zeros((h.dimension, h.dimension), dtype=complex)
    return np.tensordot(weights_array, term_stack(h), axes=1)


def build_operator(
    h: Hamiltonian, overrides: Optional[Mapping[str, float]] = None
) -> DenseOperator:
    """Materialize the enabled terms of ``h`` as a Hermitian matrix.

    Args:
        h: Hamiltonian to build
        overrides: Optional per-term coefficient multipliers keyed by label

    Returns:
        Σ over enabled terms of sign × multiplier × Σ coefficient × Pauli string

    Raises:
        QuantumCoreError: If an override names an unknown term
    """
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(h.labels))
    if unknown:
        raise QuantumCoreError(f"Override references unknown term label(s): {unknown}")
    weights = [
        (overrides.get(term.label, 1.0) if term.enabled else 0.0) for term in h.terms
    ]
    return DenseOperator(combine_terms(h, weights), h.n_qubits)


def expm_hermitian(
    op: Union[DenseOperator, np.ndarray],
    t: float,
    direction: Union[Direction, str] = Direction.FORWARD,
) -> DenseOperator:
    """Exact propagator of a Hermitian generator via eigendecomposition.

    Args:
        op: Hermitian generator (rad/s)
        t: Evolution time in seconds
        direction: ``forward`` for e^{-i op t}, ``reverse`` for e^{+i op t}

    Returns:
        The unitary propagator

    Raises:
        QuantumCoreError: If ``op`` is not Hermitian
    """
    if not isinstance(op, DenseOperator):
        matrix = np.asarray(op, dtype=complex)
        op = DenseOperator(matrix, int(round(math.log2(matrix.shape[0]))))
    if not op.is_hermitian():
        raise QuantumCoreError("expm_hermitian requires a Hermitian generator")
    sense = -1.0 if Direction(direction) is Direction.FORWARD else 1.0
    eigenvalues, eigenvectors = np.linalg.eigh(op.entries)
    phases = np.exp(1j * sense * eigenvalues * t)
    return DenseOperator((eigenvectors * phases) @ eigenvectors.conj().T, op.n_qubits)


def single_qubit_rotation(axis: str, angle: float, site: int, n_qubits: int) -> DenseOperator:
    """R_axis(angle) = e^{-i angle σ_axis / 2} embedded at ``site``.

    Raises:
        QuantumCoreError: If the axis is unknown or the site is out of range
    """
    axis_upper = axis.upper()
    if axis_upper not in ("X", "Y", "Z"):
        raise QuantumCoreError(f"Unknown rotation axis '{axis}'")
    if not 0 <= site < n_qubits:
        raise QuantumCoreError(f"Rotation site {site} out of range for {n_qubits} qubits")
    local = (
        math.cos(angle / 2) * PAULI_MATRICES["I"]
        - 1j * math.sin(angle / 2) * PAULI_MATRICES[axis_upper]
    )
    left = np.eye(2**site, dtype=complex)
    right = np.eye(2 ** (n_qubits - site - 1), dtype=complex)
    return DenseOperator(np.kron(np.kron(left, local), right), n_qubits)


def global_rotation(axis: str, angle: float, n_qubits: int) -> DenseOperator:
    """Composition of the same single-qubit rotation on every site."""
    result = DenseOperator.identity(n_qubits)
    for site in range(n_qubits):
        result = single_qubit_rotation(axis, angle, site, n_qubits) @ result
    return result


def conjugate_operator(op: DenseOperator, r: DenseOperator) -> DenseOperator:
    """Return R·op·R† for a unitary R."""
    if op.n_qubits != r.n_qubits:
        raise QuantumCoreError(
            f"Rotation acts on {r.n_qubits} qubits, operator on {op.n_qubits}"
        )
    if not r.is_unitary():
        raise QuantumCoreError("Conjugation requires a unitary rotation")
    return DenseOperator(r.entries @ op.entries @ r.entries.conj().T, op.n_qubits)


def conjugate_hamiltonian(h: Hamiltonian, r: DenseOperator) -> DenseOperator:
    """The rotated Hamiltonian H' = R·H·R† as a dense Hermitian matrix."""
    return conjugate_operator(build_operator(h), r)


def phase_insensitive_distance(
    a: Union[DenseOperator, np.ndarray], b: Union[DenseOperator, np.ndarray]
) -> float:
    """min over φ of ‖A − e^{iφ}B‖ in the Frobenius norm."""
    a_entries = a.entries if isinstance(a, DenseOperator) else np.asarray(a, dtype=complex)
    b_entries = b.entries if isinstance(b, DenseOperator) else np.asarray(b, dtype=complex)
    overlap = abs(np.vdot(b_entries, a_entries))
    squared = np.vdot(a_entries, a_entries).real + np.vdot(b_entries, b_entries).real
    return float(math.sqrt(max(squared - 2.0 * overlap, 0.0)))


def pauli_decomposition(op: DenseOperator, tol: float = 1e-10) -> Dict[str, complex]:
    """Diagnostic expansion of a dense operator in the Pauli basis.

    Returns:
        Map from Pauli label (one letter per qubit, qubit 0 first) to coefficient,
        omitting coefficients below ``tol`` in magnitude
    """
    coefficients: Dict[str, complex] = {}
    for letters in itertools.product("IXYZ", repeat=op.n_qubits):
        string = PauliString(
            tuple((site, axis) for site, axis in enumerate(letters) if axis != "I")
        )
        value = complex(np.trace(string.matrix(op.n_qubits) @ op.entries)) / op.dimension
        if abs(value) > tol:
            coefficients["".join(letters)] = value
    return coefficients


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * roots) @ eigenvectors.conj().T


def fidelity(a: SystemState, b: SystemState) -> float:
    """Uhlmann fidelity [tr √(√ρ σ √ρ)]², with pure inputs handled in closed form.

    Raises:
        QuantumCoreError: If the states have different dimensions
    """
    if a.n_qubits != b.n_qubits:
        raise QuantumCoreError(
            f"Cannot compare {a.n_qubits}-qubit and {b.n_qubits}-qubit states"
        )
    if a.vector is not None and b.vector is not None:
        value = abs(np.vdot(a.vector, b.vector)) ** 2
    elif a.vector is not None:
        value = np.vdot(a.vector, b.density_matrix() @ a.vector).real
    elif b.vector is not None:
        value = np.vdot(b.vector, a.density_matrix() @ b.vector).real
    else:
        root = _psd_sqrt(a.density_matrix())
        product = root @ b.density_matrix() @ root
        eigenvalues = np.linalg.eigvalsh(0.5 * (product + product.conj().T))
        value = float(np.sum(np.sqrt(np.clip(eigenvalues, 0.0, None)))) ** 2
    return float(min(max(value, 0.0), 1.0))


def basis_populations(s: SystemState) -> np.ndarray:
    """Computational-basis populations, index ordering with qubit 0 most significant."""
    if s.vector is not None:
        return np.abs(s.vector) ** 2
    return np.real(np.diag(s.density_matrix())).copy()


def bitstring(index: int, n_qubits: int) -> str:
    """Basis label of ``index``; the first character is qubit 0."""
    return format(index, f"0{n_qubits}b")


__all__: List[str] = [
    "Direction",
    "PauliString",
    "PauliTermSum",
    "Hamiltonian",
    "DenseOperator",
    "SystemState",
    "PAULI_MATRICES",
    "term_matrix",
    "term_stack",
    "combine_terms",
    "build_operator",
    "expm_hermitian",
    "single_qubit_rotation",
    "global_rotation",
    "conjugate_operator",
    "conjugate_hamiltonian",
    "phase_insensitive_distance",
    "pauli_decomposition",
    "fidelity",
    "basis_populations",
    "bitstring",
]
