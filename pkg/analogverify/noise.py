"""Parametric noise on Hamiltonian term coefficients.

Four channels perturb the labelled terms of a Hamiltonian, one per noise
timescale:

- ``FastOU``: an Ornstein-Uhlenbeck multiplier path that varies within a run.
- ``SlowShotToShot``: one Gaussian multiplier per term, redrawn every run.
- ``Miscalibration``: one Gaussian multiplier per term, fixed for the whole
  protocol instance.
- ``IdleCrosstalk``: a fixed fraction of each disabled term that still acts.

Realizations are drawn from counter-based streams keyed by
(seed, channel, basis stream, run, segment, term), so they are reproducible
from indices alone. Miscalibration and crosstalk keys omit the basis stream and
the run because those errors belong to the device, not to a run.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from analogverify.exceptions import NoiseError
from analogverify.quantum_core import DenseOperator, Hamiltonian, combine_terms
from analogverify.streams import Stream, stream_rng

logger = logging.getLogger(__name__)

SUBSEGMENTS_PER_CORRELATION_TIME = 5


class NoiseKind(str, Enum):
    """The four simulated noise classes."""

    FAST_OU = "FastOU"
    SLOW_SHOT_TO_SHOT = "SlowShotToShot"
    MISCALIBRATION = "Miscalibration"
    IDLE_CROSSTALK = "IdleCrosstalk"

    @classmethod
    def parse(cls, value: Union[str, "NoiseKind"]) -> "NoiseKind":
        """Accept enum values, member names or snake_case spellings."""
        if isinstance(value, NoiseKind):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for kind in cls:
            if key in (kind.value.lower(), kind.name.replace("_", "").lower()):
                return kind
        aliases = {
            "fast": cls.FAST_OU,
            "slow": cls.SLOW_SHOT_TO_SHOT,
            "crosstalk": cls.IDLE_CROSSTALK,
        }
        if key in aliases:
            return aliases[key]
        raise NoiseError(f"Unknown noise kind '{value}'")


@dataclass(frozen=True)
class NoiseSpec:
    """One noise channel.

    Attributes:
        kind: Noise class
        relative_sd: Relative standard deviation of the term multipliers
        correlation_time: OU correlation time in seconds (FastOU only)
        seed: Root seed of the channel's streams
        terms: Labels the channel acts on; None means every term
    """

    kind: NoiseKind
    relative_sd: float
    correlation_time: Optional[float] = None
    seed: int = 0
    terms: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind.parse(self.kind))
        if not self.relative_sd >= 0:
            raise NoiseError(f"relative_sd must be non-negative, got {self.relative_sd}")
        if self.kind is NoiseKind.FAST_OU and not (
            self.correlation_time is not None and self.correlation_time > 0
        ):
            raise NoiseError("FastOU noise needs a positive correlation_time")
        if self.seed < 0:
            raise NoiseError(f"Noise seed must be non-negative, got {self.seed}")
        if self.terms is not None:
            object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def is_silent(self) -> bool:
        return self.relative_sd == 0


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Sampled multipliers for one run.

    Attributes:
        labels: Term labels, in Hamiltonian order
        sub_durations: Per segment, the durations of its piecewise-constant pieces
        multipliers: Per segment, an array of shape ``(n_pieces, n_terms)``
        leakage: Idle-crosstalk fraction per term, shape ``(n_terms,)``
    """

    labels: Tuple[str, ...]
    sub_durations: Tuple[np.ndarray, ...]
    multipliers: Tuple[np.ndarray, ...]
    leakage: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.sub_durations)

    def digest(self) -> str:
        """SHA-256 over every sampled number."""
        hasher = hashlib.sha256()
        for durations, values in zip(self.sub_durations, self.multipliers):
            hasher.update(np.ascontiguousarray(durations).tobytes())
            hasher.update(np.ascontiguousarray(values).tobytes())
        hasher.update(np.ascontiguousarray(self.leakage).tobytes())
        return hasher.hexdigest()


def _as_specs(spec: Union[NoiseSpec, Sequence[NoiseSpec], None]) -> List[NoiseSpec]:
    if spec is None:
        return []
    if isinstance(spec, NoiseSpec):
        return [spec]
    return list(spec)


def _targets(spec: NoiseSpec, h: Hamiltonian) -> List[int]:
    if spec.terms is None:
        return list(range(len(h.terms)))
    unknown = sorted(set(spec.terms) - set(h.labels))
    if unknown:
        raise NoiseError(f"Noise spec references unknown term label(s): {unknown}")
    return [h.labels.index(label) for label in spec.terms]


def _subdivisions(specs: Sequence[NoiseSpec], duration: float) -> int:
    pieces = 1
    for spec in specs:
        if spec.kind is NoiseKind.FAST_OU and not spec.is_silent:
            assert spec.correlation_time is not None
            longest = spec.correlation_time / SUBSEGMENTS_PER_CORRELATION_TIME
            pieces = max(pieces, math.ceil(duration / longest - 1e-9))
    return pieces


def _ou_paths(
    spec: NoiseSpec,
    term_index: int,
    stream: int,
    run_index: int,
    sub_durations: Sequence[np.ndarray],
) -> List[np.ndarray]:
    """Exact OU sampling; the path carries over from one segment to the next."""
    assert spec.correlation_time is not None
    sigma = spec.relative_sd
    tc = spec.correlation_time
    paths = []
    value = 0.0
    for segment_index, durations in enumerate(sub_durations):
        rng = stream_rng(spec.seed, Stream.FAST_NOISE, stream, run_index, segment_index, term_index)
        if segment_index == 0:
            value = sigma * rng.standard_normal()
        decay = np.exp(-durations / tc)
        kicks = sigma * np.sqrt(1.0 - decay**2) * rng.standard_normal(durations.size)
        path = np.empty(durations.size)
        for piece in range(durations.size):
            path[piece] = value
            value = value * decay[piece] + kicks[piece]
        paths.append(path)
    return paths


def sample_multipliers(
    spec: Union[NoiseSpec, Sequence[NoiseSpec], None],
    h: Hamiltonian,
    run_index: int,
    segment_times: Sequence[float],
    stream: int = 0,
) -> NoiseRealization:
    """Draw the noise realization of one run.

    Args:
        spec: One channel or several; several channels compose (multipliers
            multiply, leakage fractions add)
        h: Hamiltonian whose terms are perturbed
        run_index: Index of the run within the protocol instance
        segment_times: Duration of each protocol segment in seconds
        stream: Basis stream; independent bases use different values

    Returns:
        The run's :class:`NoiseRealization`
    """
    specs = [s for s in _as_specs(spec) if not s.is_silent]
    n_terms = len(h.terms)
    pieces = [_subdivisions(specs, float(d)) for d in segment_times]
    sub_durations = tuple(
        np.full(count, float(d) / count) for count, d in zip(pieces, segment_times)
    )
    multipliers = [np.ones((count, n_terms)) for count in pieces]
    leakage = np.zeros(n_terms)

    for channel in specs:
        sd = channel.relative_sd
        for term_index in _targets(channel, h):
            if channel.kind is NoiseKind.FAST_OU:
                paths = _ou_paths(channel, term_index, stream, run_index, sub_durations)
                for segment_index, path in enumerate(paths):
                    multipliers[segment_index][:, term_index] *= 1.0 + path
            elif channel.kind is NoiseKind.SLOW_SHOT_TO_SHOT:
                rng = stream_rng(channel.seed, Stream.SLOW_NOISE, stream, run_index, term_index)
                factor = 1.0 + sd * rng.standard_normal()
                for values in multipliers:
                    values[:, term_index] *= factor
            elif channel.kind is NoiseKind.MISCALIBRATION:
                rng = stream_rng(channel.seed, Stream.MISCALIBRATION, term_index)
                factor = 1.0 + sd * rng.standard_normal()
                for values in multipliers:
                    values[:, term_index] *= factor
            else:
                rng = stream_rng(channel.seed, Stream.IDLE_CROSSTALK, term_index)
                leakage[term_index] += sd * rng.standard_normal()

    return NoiseRealization(
        labels=h.labels,
        sub_durations=sub_durations,
        multipliers=tuple(multipliers),
        leakage=leakage,
    )


def apply_noise(
    h: Hamiltonian,
    realization: NoiseRealization,
    segment_index: int,
    enabled_mask: Optional[Sequence[bool]] = None,
    sign: int = 1,
) -> List[Tuple[DenseOperator, float]]:
    """Noisy piecewise-constant operators of one segment.

    Each piece is ``sign · (Σ_enabled m_k H_k + Σ_disabled f_k H_k)``.

    Args:
        h: Hamiltonian the realization was drawn for
        realization: Output of :func:`sample_multipliers`
        segment_index: Segment to build
        enabled_mask: Enabled flag per term; defaults to each term's own flag
        sign: +1 for forward evolution, -1 for time-reversed evolution

    Returns:
        List of ``(operator, duration)`` pairs, one per piece

    Raises:
        NoiseError: On a mask of the wrong length or a foreign realization
    """
    if realization.labels != h.labels:
        raise NoiseError("Noise realization was drawn for a different Hamiltonian")
    if not 0 <= segment_index < realization.n_segments:
        raise NoiseError(
            f"Segment {segment_index} outside realization of {realization.n_segments} segments"
        )
    if sign not in (1, -1):
        raise NoiseError(f"Segment sign must be +1 or -1, got {sign}")
    if enabled_mask is None:
        mask = np.array([term.enabled for term in h.terms], dtype=bool)
    else:
        mask = np.asarray(enabled_mask, dtype=bool)
        if mask.shape != (len(h.terms),):
            raise NoiseError(
                f"Enabled mask has {mask.size} entries for {len(h.terms)} terms"
            )
    pieces = []
    durations = realization.sub_durations[segment_index]
    values = realization.multipliers[segment_index]
    for piece, duration in enumerate(durations):
        weights = np.where(mask, values[piece], realization.leakage) * sign
        operator = DenseOperator(combine_terms(h, weights), h.n_qubits)
        pieces.append((operator, float(duration)))
    return pieces
