"""Run traces: recorded metrics per iteration and their CSV representation."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from tempfile import NamedTemporaryFile

import numpy as np
import pandas as pd

from aggne.utils import logger
from aggne.utils.errors import OutputError, ValidationError

BASE_COLUMNS = ("k", "gamma_k", "eta_k", "ne_residual", "consensus_v", "consensus_y")
GAP_COLUMN = "gap_to_xstar"
DELTA_COLUMN = "delta_norm"


@dataclass
class Trace:
    """Metrics recorded along a run of the distributed solver.

    Parameters
    ----------
    with_gap : bool, optional
        Rows carry ``gap_to_xstar``, by default False
    with_delta : bool, optional
        Rows carry ``delta_norm``, by default False
    header : dict, optional
        Run metadata (config hash, constants, spectral data), by default empty
    """

    with_gap: bool = False
    with_delta: bool = False
    header: dict = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)
    decisions: list[np.ndarray] = field(default_factory=list)
    diverged_at: int | None = None

    @property
    def columns(self) -> tuple[str, ...]:
        columns = BASE_COLUMNS
        if self.with_gap:
            columns += (GAP_COLUMN,)
        if self.with_delta:
            columns += (DELTA_COLUMN,)
        return columns

    def append(self, row: dict, decisions: np.ndarray | None = None) -> None:
        """Add a row; ``k`` must exceed the last recorded ``k``.

        Raises
        ------
        ValidationError
            If the columns do not match or ``k`` does not increase.
        """
        if set(row) != set(self.columns):
            raise ValidationError(
                f"Trace row keys {sorted(row)} do not match columns {list(self.columns)}."
            )
        if self.rows and row["k"] <= self.rows[-1]["k"]:
            raise ValidationError(
                f"Trace rows must increase in k: {row['k']} after {self.rows[-1]['k']}."
            )
        self.rows.append({name: row[name] for name in self.columns})
        if decisions is not None:
            self.decisions.append(np.array(decisions, dtype=float))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.to_frame().to_numpy(dtype=float))))

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=list(self.columns))
        return frame.astype({"k": "int64"})


def write_atomic(path: Path | str, write) -> Path:
    """Call ``write(tmp_path)`` on a temporary sibling of ``path`` and move it in place.

    Raises
    ------
    OutputError
        If the file cannot be written.
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with NamedTemporaryFile(
            dir=path.parent, prefix=f".{path.name}.", delete=False
        ) as tmp_file:
            tmp_path = Path(tmp_file.name)
        try:
            write(tmp_path)
            tmp_path.replace(path)
        finally:
            tmp_path.unlink(missing_ok=True)
    except OSError as err:
        raise OutputError(f"Could not write {path}: {err}") from err
    return path


def write_trace(trace: Trace, path: Path | str) -> Path:
    """Write the trace as CSV with full round-trip precision.

    Parameters
    ----------
    trace : Trace
        Trace to write. An empty trace gives a header-only file.
    path : Path | str
        Output file.

    Returns
    -------
    Path
        The written file.
    """
    frame = trace.to_frame()
    path = write_atomic(
        path,
        lambda tmp: frame.to_csv(tmp, index=False, float_format="%.17g", lineterminator="\n"),
    )
    logger.debug("Wrote %i trace rows to %s", len(trace), path)
    return path


def read_trace(path: Path | str) -> pd.DataFrame:
    """Read a trace file written by `write_trace`."""
    return pd.read_csv(path, float_precision="round_trip")
