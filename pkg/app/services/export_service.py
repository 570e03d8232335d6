"""CSV and JSON emission of trajectories, bisection traces and reports.

Files are queued while a run is assembled and written together by ``flush``,
so a run that fails midway leaves no partial result set behind. Floats go to
CSV with 17 significant digits and to JSON as their shortest round-trip
representation; NaN becomes an empty CSV cell and JSON null.
"""
import csv
import json
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .spectral_service import ControlTrajectory, StateTrajectory
from ..utils.runtime_paths import ensure_output_dir

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '{:.17g}'
TRACE_HEADER = ('n', 'a', 'b', 'mid', 'r_mid')
N_PER_STEP_HEADER = ('t', 'N', 'masked_adjoint_norm')


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return ''
    return FLOAT_FORMAT.format(value)


def to_jsonable(value):
    """Recursively convert numpy scalars / arrays and NaN into plain JSON values."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def coefficient_header(num_modes: int) -> tuple[str, ...]:
    return ('t',) + tuple(f"coeff_{k}" for k in range(1, num_modes + 1))


def state_rows(trajectory: StateTrajectory):
    return [(t,) + tuple(row) for t, row in zip(trajectory.grid.nodes, trajectory.states)]


def control_rows(control: ControlTrajectory):
    """One row per cell, stamped with the cell's left node."""
    return [(t,) + tuple(row) for t, row in zip(control.grid.nodes[:-1], control.values)]


@dataclass(frozen=True)
class _PendingFile:
    name: str
    kind: str
    payload: object
    header: tuple | None = None


class ExportService:
    """Collects result files for one output directory and writes them on flush."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.file_queue: list[_PendingFile] = []
        self.written_files: list[str] = []

    def add_csv(self, name: str, header, rows) -> None:
        self.file_queue.append(_PendingFile(name, 'csv', [tuple(row) for row in rows], tuple(header)))

    def add_json(self, name: str, data) -> None:
        self.file_queue.append(_PendingFile(name, 'json', to_jsonable(data)))

    def add_state(self, name: str, trajectory: StateTrajectory) -> None:
        self.add_csv(name, coefficient_header(trajectory.states.shape[1]), state_rows(trajectory))

    def add_control(self, name: str, control: ControlTrajectory) -> None:
        self.add_csv(name, coefficient_header(control.values.shape[1]), control_rows(control))

    def add_trace(self, name: str, trace) -> None:
        self.add_csv(name, TRACE_HEADER, trace.rows())

    def flush(self) -> list[str]:
        """Write every queued file; returns the paths written in this call."""
        if not self.file_queue:
            return []
        out_dir = ensure_output_dir(self.out_dir)
        written = []
        for pending in self.file_queue:
            path = os.path.join(out_dir, pending.name)
            if pending.kind == 'csv':
                self._write_csv(path, pending.header, pending.payload)
            else:
                self._write_json(path, pending.payload)
            written.append(path)
            logger.debug(f"Wrote {path}")
        self.file_queue.clear()
        self.written_files.extend(written)
        logger.info(f"Wrote {len(written)} result files to {out_dir}")
        return written

    @staticmethod
    def _write_csv(path: str, header, rows) -> None:
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])

    @staticmethod
    def _write_json(path: str, data) -> None:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True, allow_nan=False)
            f.write('\n')
