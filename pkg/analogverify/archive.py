"""Persistence of experiment results.

Every invocation writes into its own run directory, and files are never
overwritten. A decay curve is stored as CSV (the numbers), JSON (numbers plus
metadata) and SVG (a line plot rendered from the CSV as read back from disk,
so re-rendering from the CSV reproduces it byte for byte).
"""

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from analogverify import __version__
from analogverify.compiler import CompiledSequence, Layer
from analogverify.exceptions import ArchiveError
from analogverify.protocols import DecayCurve, RandomizedSequence

logger = logging.getLogger(__name__)

SEQUENCE_FORMAT = "analogverify-sequences"
SEQUENCE_FORMAT_VERSION = 1
CURVE_COLUMNS = ("time_s", "success_prob", "stderr", "n_samples")

SVG_WIDTH = 640
SVG_HEIGHT = 400
SVG_MARGIN = 50


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _dumps(payload: Any) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False, default=_default)
    return text + "\n"


def _default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


@dataclass(frozen=True)
class SequenceRecord:
    """A forward sequence with its compiled inverse, as stored on disk.

    A record with ``converged=False`` keeps the forward layers and the best
    population the compiler reached, but no inverse.
    """

    forward: Tuple[Layer, ...]
    inverse: Tuple[Layer, ...]
    initial_state: int
    target_basis_state: Optional[int]
    achieved_population: float
    steps_used: int
    converged: bool = True

    @classmethod
    def from_compiled(
        cls, forward: Sequence[Layer], compiled: CompiledSequence, initial_state: int
    ) -> "SequenceRecord":
        return cls(
            forward=tuple(forward),
            inverse=tuple(compiled.layers),
            initial_state=initial_state,
            target_basis_state=compiled.target_basis_state,
            achieved_population=compiled.achieved_population,
            steps_used=compiled.steps_used,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "forward_layers": [layer.to_dict() for layer in self.forward],
            "inverse_layers": [layer.to_dict() for layer in self.inverse],
            "initial_state": self.initial_state,
            "target_basis_state": self.target_basis_state,
            "achieved_population": self.achieved_population,
            "steps_used": self.steps_used,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SequenceRecord":
        target = data.get("target_basis_state")
        return cls(
            forward=tuple(Layer.from_dict(d) for d in data["forward_layers"]),
            inverse=tuple(Layer.from_dict(d) for d in data.get("inverse_layers", [])),
            initial_state=int(data["initial_state"]),
            target_basis_state=int(target) if target is not None else None,
            achieved_population=float(data["achieved_population"]),
            steps_used=int(data["steps_used"]),
            converged=bool(data.get("converged", True)),
        )

    def to_randomized(self) -> RandomizedSequence:
        if not self.converged or self.target_basis_state is None:
            raise ArchiveError("Cannot execute a sequence whose inverse did not converge")
        compiled = CompiledSequence(
            layers=self.inverse,
            target_basis_state=self.target_basis_state,
            achieved_population=self.achieved_population,
            steps_used=self.steps_used,
        )
        return RandomizedSequence(self.forward, compiled, self.initial_state)


def sequence_document(
    records: Sequence[SequenceRecord], labels: Sequence[str], n_qubits: int, **extra: Any
) -> Dict[str, Any]:
    document = {
        "format": SEQUENCE_FORMAT,
        "format_version": SEQUENCE_FORMAT_VERSION,
        "n_qubits": n_qubits,
        "terms": list(labels),
        "sequences": [record.to_dict() for record in records],
        "created_utc": utc_timestamp(),
    }
    document.update(extra)
    return document


def load_sequence_file(
    path: Union[str, Path], labels: Optional[Sequence[str]] = None
) -> List[SequenceRecord]:
    """Read a sequence file written by :meth:`ResultArchive.write_sequences`.

    Raises:
        ArchiveError: On unreadable files, a foreign format, or term labels
            that do not match ``labels``
    """
    source = Path(path)
    try:
        data = json.loads(source.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        error_msg = f"Failed to read sequence file {source}: {e}"
        logger.error(error_msg)
        raise ArchiveError(error_msg) from e
    if data.get("format") != SEQUENCE_FORMAT:
        raise ArchiveError(f"{source} is not an analogverify sequence file")
    if labels is not None and list(data.get("terms", [])) != list(labels):
        raise ArchiveError(
            f"Sequence file terms {data.get('terms')} do not match model terms {list(labels)}"
        )
    try:
        return [SequenceRecord.from_dict(entry) for entry in data["sequences"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ArchiveError(f"Malformed sequence record in {source}: {e}") from e


def _scale(values: np.ndarray, low: float, high: float) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    if hi == lo:
        return np.full(values.shape, (low + high) / 2)
    return low + (values - lo) / (hi - lo) * (high - low)


def render_svg(frame: pd.DataFrame, x: str, ys: Sequence[str], title: str) -> str:
    """Minimal line plot of columns ``ys`` against ``x``."""
    if frame.empty:
        raise ArchiveError("Cannot plot an empty table")
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    left, right = SVG_MARGIN, SVG_WIDTH - SVG_MARGIN / 2
    top, bottom = SVG_MARGIN / 2, SVG_HEIGHT - SVG_MARGIN
    xs = _scale(frame[x].to_numpy(dtype=float), left, right)
    y_all = np.concatenate([frame[y].to_numpy(dtype=float) for y in ys])
    y_low, y_high = min(0.0, float(y_all.min())), max(1.0, float(y_all.max()))

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}">',
        f'<title>{title}</title>',
        f'<rect width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{SVG_HEIGHT - 10}" '
        f'text-anchor="middle" font-size="12">{x}</text>',
        f'<text x="{left - 5}" y="{bottom:.1f}" text-anchor="end" font-size="10">{y_low:g}</text>',
        f'<text x="{left - 5}" y="{top + 10:.1f}" text-anchor="end" '
        f'font-size="10">{y_high:g}</text>',
    ]
    for position, y in enumerate(ys):
        values = frame[y].to_numpy(dtype=float)
        scaled = bottom - (values - y_low) / (y_high - y_low) * (bottom - top)
        points = " ".join(f"{px:.2f},{py:.2f}" for px, py in zip(xs, scaled))
        color = colors[position % len(colors)]
        lines.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'
        )
        lines.append(
            f'<text x="{right - 5}" y="{top + 14 * (position + 1):.1f}" text-anchor="end" '
            f'font-size="11" fill="{color}">{y}</text>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def svg_from_csv(path: Union[str, Path], x: str, ys: Sequence[str], title: str) -> str:
    """Render a plot from a CSV file on disk."""
    return render_svg(pd.read_csv(path), x, ys, title)


class ResultArchive:
    """Append-only run directory.

    Attributes:
        run_dir: Directory holding this run's files
    """

    def __init__(self, run_dir: Union[str, Path]) -> None:
        self.run_dir = Path(run_dir)
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            error_msg = f"Failed to create run directory {self.run_dir}: {e}"
            logger.error(error_msg)
            raise ArchiveError(error_msg) from e

    @classmethod
    def create(cls, root: Union[str, Path], label: str) -> "ResultArchive":
        """New run directory ``<root>/<label>-<UTC time>``, suffixed if taken."""
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        base = Path(root) / f"{label}-{stamp}"
        candidate = base
        suffix = 1
        while candidate.exists():
            candidate = base.with_name(f"{base.name}-{suffix}")
            suffix += 1
        return cls(candidate)

    def _claim(self, name: str) -> Path:
        path = self.run_dir / name
        if path.exists():
            raise ArchiveError(f"{path} already exists; run directories are append-only")
        return path

    def _write_text(self, name: str, text: str) -> Path:
        path = self._claim(name)
        try:
            with path.open("x", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
        except OSError as e:
            error_msg = f"Failed to write {path}: {e}"
            logger.error(error_msg)
            raise ArchiveError(error_msg) from e
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, name: str, payload: Any) -> Path:
        return self._write_text(name, _dumps(payload))

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        """Write a CSV table (comma separated, header row, ``\\n`` line endings)."""
        return self._write_text(name, frame.to_csv(index=False, lineterminator="\n"))

    def write_plot(self, name: str, csv_path: Path, x: str, ys: Sequence[str], title: str) -> Path:
        return self._write_text(name, svg_from_csv(csv_path, x, ys, title))

    def write_curve(self, curve: DecayCurve, stem: str = "decay") -> Dict[str, Path]:
        """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>.svg``."""
        frame = curve.to_frame()
        csv_path = self.write_table(f"{stem}.csv", frame)
        json_path = self.write_json(
            f"{stem}.json",
            {
                "protocol": curve.protocol.value,
                "metadata": curve.metadata,
                "points": frame.to_dict(orient="records"),
            },
        )
        svg_path = self.write_plot(
            f"{stem}.svg", csv_path, "time_s", ["success_prob"], f"{curve.protocol.value} decay"
        )
        return {"csv": csv_path, "json": json_path, "svg": svg_path}

    def write_sequences(
        self,
        name: str,
        records: Sequence[SequenceRecord],
        labels: Sequence[str],
        n_qubits: int,
        **extra: Any,
    ) -> Path:
        return self.write_json(name, sequence_document(records, labels, n_qubits, **extra))

    def write_metadata(
        self,
        command: str,
        seed: int,
        config_digest: Optional[str] = None,
        **extra: Any,
    ) -> Path:
        """Write ``metadata.json`` describing the run."""
        payload = {
            "command": command,
            "seed": seed,
            "config_sha256": config_digest,
            "package_version": __version__,
            "created_utc": utc_timestamp(),
        }
        payload.update(extra)
        return self.write_json("metadata.json", payload)
