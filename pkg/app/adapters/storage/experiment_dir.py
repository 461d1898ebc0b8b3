import csv
import logging
import math
import os
from typing import Any, Dict, Mapping, Sequence

import numpy as np
import yaml

from ...domain.states import Snapshot
from ...errors import OutputError
from .snapshots import write_binary

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".17g"
RESOLVED_CONFIG_FILE = "resolved_config.yaml"
REPORT_SEPARATOR = " = "


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, FLOAT_FORMAT)
    return str(value)


def experiment_dir_name(config_hash: str, seed: int) -> str:
    return f"{config_hash[:12]}-seed{seed}"


class ExperimentDirectory:
    """Result sink writing plain files under one directory."""

    def __init__(self, path: str):
        self.path = path
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as exc:
            raise OutputError(f"cannot create output directory {path}: {exc}") from exc

    def _target(self, name: str) -> str:
        return os.path.join(self.path, name)

    def write_table(self, name: str, columns: Sequence[str], rows: np.ndarray) -> str:
        target = self._target(name)
        try:
            with open(target, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(columns)
                for row in np.atleast_2d(rows):
                    writer.writerow([format_value(v) for v in row])
        except OSError as exc:
            raise OutputError(f"cannot write {target}: {exc}") from exc
        logger.info("wrote %s", target)
        return target

    def write_matrix(self, name: str, matrix: np.ndarray) -> str:
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        columns = [f"c{i}" for i in range(matrix.shape[1])]
        return self.write_table(name, columns, matrix)

    def write_report(self, name: str, entries: Mapping[str, Any]) -> str:
        target = self._target(name)
        try:
            with open(target, "w") as fh:
                for key, value in entries.items():
                    fh.write(f"{key}{REPORT_SEPARATOR}{format_value(value)}\n")
        except OSError as exc:
            raise OutputError(f"cannot write {target}: {exc}") from exc
        logger.info("wrote %s", target)
        return target

    def write_config(self, resolved: Dict[str, Any]) -> str:
        target = self._target(RESOLVED_CONFIG_FILE)
        try:
            with open(target, "w") as fh:
                yaml.safe_dump(resolved, fh, sort_keys=False, default_flow_style=None)
        except OSError as exc:
            raise OutputError(f"cannot write {target}: {exc}") from exc
        return target

    def write_snapshots(self, name: str, snapshots: Sequence[Snapshot]) -> str:
        target = self._target(name)
        write_binary(target, snapshots)
        logger.info("wrote %d snapshots to %s", len(snapshots), target)
        return target


def read_report(path: str) -> Dict[str, str]:
    try:
        with open(path) as fh:
            lines = [line.rstrip("\n") for line in fh if line.strip()]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    return dict(line.split(REPORT_SEPARATOR, 1) for line in lines)


def read_table(path: str):
    """(columns, rows) of a table written by write_table."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            columns = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    except (OSError, StopIteration, ValueError) as exc:
        raise OutputError(f"cannot read table {path}: {exc}") from exc
    return columns, rows.reshape(-1, len(columns))
