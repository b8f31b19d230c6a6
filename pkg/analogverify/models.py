"""Model Hamiltonians, basis rotations and lattice subsystem enumeration.

Presets carry the grouping of Pauli summands into labelled terms that the
randomized protocol toggles; all parameters are angular frequencies (rad/s).
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from analogverify.exceptions import ModelError
from analogverify.noise import NoiseKind, NoiseSpec
from analogverify.quantum_core import (
    DenseOperator,
    Hamiltonian,
    PauliString,
    PauliTermSum,
    global_rotation,
)

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


class ModelPreset(str, Enum):
    """Named models with fixed term structure."""

    ISING_2Q = "Ising2Q"
    HEISENBERG_5Q = "Heisenberg5Q"
    RAV_ISING_2Q = "RavIsing2Q"
    RAV_HEISENBERG_2Q = "RavHeisenberg2Q"


DEFAULT_PARAMETERS: Dict[ModelPreset, Dict[str, float]] = {
    ModelPreset.ISING_2Q: {"J": TWO_PI * 139.0, "b": TWO_PI * 227.0},
    ModelPreset.HEISENBERG_5Q: {
        "b": TWO_PI * 1e3,
        "Jx": TWO_PI * 1e3,
        "Jy": TWO_PI * 1e3,
        "Jz": TWO_PI * 1e3,
    },
    ModelPreset.RAV_ISING_2Q: {"b": TWO_PI * 20e3, "Jx": TWO_PI * 20e3},
    ModelPreset.RAV_HEISENBERG_2Q: {
        "b": TWO_PI * 20e3,
        "Jx": TWO_PI * 20e3,
        "Jy": TWO_PI * 20e3,
        "Jz": TWO_PI * 20e3,
    },
}

# Relative standard deviations of the four noise classes used with each model.
STANDARD_NOISE_LEVELS: Dict[ModelPreset, Dict[NoiseKind, float]] = {
    ModelPreset.HEISENBERG_5Q: {
        NoiseKind.FAST_OU: 0.30,
        NoiseKind.SLOW_SHOT_TO_SHOT: 0.15,
        NoiseKind.MISCALIBRATION: 0.10,
        NoiseKind.IDLE_CROSSTALK: 0.10,
    },
    ModelPreset.RAV_ISING_2Q: {
        NoiseKind.FAST_OU: 0.12,
        NoiseKind.SLOW_SHOT_TO_SHOT: 0.06,
        NoiseKind.MISCALIBRATION: 0.03,
        NoiseKind.IDLE_CROSSTALK: 0.03,
    },
    ModelPreset.RAV_HEISENBERG_2Q: {
        NoiseKind.FAST_OU: 0.04,
        NoiseKind.SLOW_SHOT_TO_SHOT: 0.02,
        NoiseKind.MISCALIBRATION: 0.01,
        NoiseKind.IDLE_CROSSTALK: 0.01,
    },
}


def _preset(name: str) -> ModelPreset:
    try:
        return ModelPreset(name)
    except ValueError as e:
        known = ", ".join(p.value for p in ModelPreset)
        raise ModelError(f"Unknown model preset '{name}' (known: {known})") from e


def _term(label: str, *summands: Tuple[float, str]) -> PauliTermSum:
    return PauliTermSum(label, tuple((c, PauliString.parse(s)) for c, s in summands))


def build_preset(name: str, parameters: Optional[Mapping[str, float]] = None) -> Hamiltonian:
    """Build a named model.

    Args:
        name: One of the :class:`ModelPreset` values
        parameters: Optional overrides of the default parameters (rad/s)

    Returns:
        The preset Hamiltonian

    Raises:
        ModelError: On an unknown name, unknown parameter or non-positive value
    """
    preset = _preset(name)
    params = dict(DEFAULT_PARAMETERS[preset])
    for key, value in (parameters or {}).items():
        if key not in params:
            raise ModelError(f"Preset {preset.value} has no parameter '{key}'")
        params[key] = float(value)
    bad = sorted(key for key, value in params.items() if not value > 0)
    if bad:
        raise ModelError(f"Preset parameters must be positive: {bad}")

    if preset in (ModelPreset.ISING_2Q, ModelPreset.RAV_ISING_2Q):
        coupling = params["J"] if preset is ModelPreset.ISING_2Q else params["Jx"]
        field = -params["b"] / 2
        terms: List[PauliTermSum] = [
            _term("field", (field, "Y0"), (field, "Y1")),
            _term("coupling", (-coupling / 2, "X0 X1")),
        ]
        return Hamiltonian(2, tuple(terms))

    if preset is ModelPreset.HEISENBERG_5Q:
        return heisenberg_chain(5, params["b"], params["Jx"], params["Jy"], params["Jz"])

    b, jx, jy, jz = params["b"], params["Jx"], params["Jy"], params["Jz"]
    terms = [
        _term(f"{axis.lower()}{site}", (-b / 2, f"{axis}{site}"))
        for site in range(2)
        for axis in "XYZ"
    ]
    terms += [
        _term("xx", (-jx / 2, "X0 X1")),
        _term("yy", (-jy / 2, "Y0 Y1")),
        _term("zz", (-jz / 2, "Z0 Z1")),
    ]
    return Hamiltonian(2, tuple(terms))


def heisenberg_chain(n: int, b: float, jx: float, jy: float, jz: float) -> Hamiltonian:
    """Open Heisenberg chain with a z field; one term per field and per coupling axis."""
    if n < 2:
        raise ModelError(f"A chain needs at least two sites, got {n}")
    terms = [_term(f"z{site}", (-b / 2, f"Z{site}")) for site in range(n)]
    for site in range(n - 1):
        pair = f"{site}{site + 1}"
        terms += [
            _term(f"xx{pair}", (-jx / 2, f"X{site} X{site + 1}")),
            _term(f"yy{pair}", (-jy / 2, f"Y{site} Y{site + 1}")),
            _term(f"zz{pair}", (-jz / 2, f"Z{site} Z{site + 1}")),
        ]
    return Hamiltonian(n, tuple(terms))


def ising_chain(n: int, coupling: float, field: float) -> Hamiltonian:
    """Open transverse-field Ising chain: -J/2 X_i X_{i+1} couplings and -b/2 Y_i fields."""
    if n < 2:
        raise ModelError(f"A chain needs at least two sites, got {n}")
    terms = [_term(f"y{site}", (-field / 2, f"Y{site}")) for site in range(n)]
    terms += [
        _term(f"xx{site}_{site + 1}", (-coupling / 2, f"X{site} X{site + 1}"))
        for site in range(n - 1)
    ]
    return Hamiltonian(n, tuple(terms))


def preset_rotation(name: str) -> DenseOperator:
    """Basis-change rotation of a preset for the multi-basis protocol.

    For Ising2Q this is the global π/2 z rotation that carries σ_y to σ_x on
    each site, so σ_y⁽¹⁾+σ_y⁽²⁾ maps to σ_x⁽¹⁾+σ_x⁽²⁾ and σ_x⁽¹⁾σ_x⁽²⁾ maps to
    σ_y⁽¹⁾σ_y⁽²⁾. With R_z(θ) = e^{-iθσ_z/2} and H' = R H R† that is R_z(-π/2)
    on both qubits.

    Raises:
        ModelError: If the preset has no defined rotation
    """
    preset = _preset(name)
    if preset is not ModelPreset.ISING_2Q:
        raise ModelError(f"Preset {preset.value} has no defined multi-basis rotation")
    return global_rotation("z", -math.pi / 2, 2)


def standard_noise(
    name: str,
    kind: str,
    correlation_time: Optional[float] = None,
    seed: int = 0,
    terms: Optional[Sequence[str]] = None,
) -> NoiseSpec:
    """NoiseSpec with the relative standard deviation used for ``name`` and ``kind``."""
    preset = _preset(name)
    if preset not in STANDARD_NOISE_LEVELS:
        raise ModelError(f"Preset {preset.value} has no standard noise levels")
    noise_kind = NoiseKind.parse(kind)
    return NoiseSpec(
        kind=noise_kind,
        relative_sd=STANDARD_NOISE_LEVELS[preset][noise_kind],
        correlation_time=correlation_time,
        seed=seed,
        terms=tuple(terms) if terms is not None else None,
    )


Edge = Tuple[int, int]


class PairMode(str, Enum):
    """Conventions for counting pairs of lattice edges."""

    ORDERED_DISTINCT = "ordered_distinct"
    UNORDERED_DISTINCT = "unordered_distinct"
    UNORDERED_DISJOINT = "unordered_disjoint"


@dataclass(frozen=True)
class LatticeSpec:
    """Rectangular nearest-neighbour lattice; site ``r * cols + c``."""

    rows: int
    cols: int
    locality: int = 2

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ModelError(f"Lattice dimensions must be positive, got {self.rows}x{self.cols}")
        if self.rows * self.cols < 2:
            raise ModelError("A lattice needs at least two sites")
        if self.locality < 1:
            raise ModelError(f"Locality must be positive, got {self.locality}")

    @property
    def n_sites(self) -> int:
        return self.rows * self.cols

    def site(self, row: int, col: int) -> int:
        return row * self.cols + col

    def edges(self) -> List[Edge]:
        """Horizontal then vertical nearest-neighbour edges as sorted site pairs."""
        horizontal = [
            (self.site(r, c), self.site(r, c + 1))
            for r in range(self.rows)
            for c in range(self.cols - 1)
        ]
        vertical = [
            (self.site(r, c), self.site(r + 1, c))
            for r in range(self.rows - 1)
            for c in range(self.cols)
        ]
        return horizontal + vertical

    def degrees(self) -> List[int]:
        counts = [0] * self.n_sites
        for a, b in self.edges():
            counts[a] += 1
            counts[b] += 1
        return counts


@dataclass(frozen=True)
class SubsystemChoice:
    """Sites of a subsystem and the interaction pairs it was built from."""

    sites: Tuple[int, ...]
    pairs: Tuple[Edge, ...]
    locality: int = 2

    def __post_init__(self) -> None:
        sites = tuple(sorted(set(self.sites)))
        if len(sites) < 2 * self.locality:
            raise ModelError(
                f"Subsystem of size {len(sites)} is smaller than 2k = {2 * self.locality}"
            )
        for pair in self.pairs:
            if not set(pair) <= set(sites):
                raise ModelError(f"Pair {pair} is not inside subsystem {sites}")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))


class EdgePairEnumeration(NamedTuple):
    """Count of edge pairs and a fresh iterator over them."""

    count: int
    pairs: Iterator[Tuple[Edge, Edge]]


def _pair_mode(mode: str) -> PairMode:
    try:
        return PairMode(mode)
    except ValueError as e:
        known = ", ".join(m.value for m in PairMode)
        raise ModelError(f"Unknown pair mode '{mode}' (known: {known})") from e


def edge_pair_count(lattice: LatticeSpec, mode: str) -> int:
    """Closed-form number of edge pairs for ``mode``."""
    pair_mode = _pair_mode(mode)
    n_edges = len(lattice.edges())
    if pair_mode is PairMode.ORDERED_DISTINCT:
        return n_edges * (n_edges - 1)
    unordered = math.comb(n_edges, 2)
    if pair_mode is PairMode.UNORDERED_DISTINCT:
        return unordered
    return unordered - sum(math.comb(degree, 2) for degree in lattice.degrees())


def enumerate_edge_pairs(lattice: LatticeSpec, mode: str) -> EdgePairEnumeration:
    """Count and iterate pairs of nearest-neighbour edges.

    ``ordered_distinct`` counts (e1, e2) and (e2, e1) separately;
    ``unordered_distinct`` counts each pair once; ``unordered_disjoint`` keeps
    only pairs that share no site.

    Raises:
        ModelError: On an unknown mode
    """
    pair_mode = _pair_mode(mode)
    edges = lattice.edges()
    pairs: Iterator[Tuple[Edge, Edge]]
    if pair_mode is PairMode.ORDERED_DISTINCT:
        pairs = itertools.permutations(edges, 2)
    elif pair_mode is PairMode.UNORDERED_DISTINCT:
        pairs = itertools.combinations(edges, 2)
    else:
        pairs = (
            (e1, e2) for e1, e2 in itertools.combinations(edges, 2) if not set(e1) & set(e2)
        )
    return EdgePairEnumeration(edge_pair_count(lattice, pair_mode.value), pairs)


def subsystem_choices(lattice: LatticeSpec) -> Iterator[SubsystemChoice]:
    """One subsystem per unordered pair of disjoint edges."""
    for e1, e2 in enumerate_edge_pairs(lattice, PairMode.UNORDERED_DISJOINT.value).pairs:
        yield SubsystemChoice(sites=e1 + e2, pairs=(e1, e2), locality=lattice.locality)


def lattice_ising(lattice: LatticeSpec, coupling: float, field: float) -> Hamiltonian:
    """Transverse-field Ising model on the lattice, one term per edge and per site."""
    terms = [
        _term(f"y{site}", (-field / 2, f"Y{site}")) for site in range(lattice.n_sites)
    ]
    terms += [
        _term(f"xx{a}_{b}", (-coupling / 2, f"X{a} X{b}")) for a, b in lattice.edges()
    ]
    return Hamiltonian(lattice.n_sites, tuple(terms))


def restrict_to_subsystem(h: Hamiltonian, choice: SubsystemChoice) -> Hamiltonian:
    """Keep the terms supported inside ``choice.sites`` and relabel sites 0..s-1.

    Terms partly inside the subsystem are dropped with a warning.

    Raises:
        ModelError: If a chosen site does not exist in ``h``
    """
    if choice.sites[-1] >= h.n_qubits:
        raise ModelError(
            f"Subsystem site {choice.sites[-1]} outside {h.n_qubits}-qubit Hamiltonian"
        )
    inside = set(choice.sites)
    mapping = {site: position for position, site in enumerate(choice.sites)}
    kept = []
    for term in h.terms:
        support = term.support
        if support <= inside:
            kept.append(term.relabel(mapping))
        elif support & inside:
            logger.warning(
                f"Dropping term '{term.label}' straddling the subsystem boundary "
                f"(support {sorted(support)})"
            )
    return Hamiltonian(len(choice.sites), tuple(kept))
