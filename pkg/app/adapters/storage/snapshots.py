"""Checkpoint files for the estimator state.

Binary layout (little-endian float64 throughout, one record per snapshot):

    k, m, theta_bar[m], theta_hat[m], tril(P)[m(m+1)/2], tril(P_bar)[m(m+1)/2]

The text layout carries the same fields, one snapshot per line, in `.17g`.
Batched states are written one record per output column.
"""
from typing import Iterable, List

import numpy as np

from ...domain.states import Snapshot
from ...errors import OutputError

RECORD_DTYPE = np.dtype("<f8")
TEXT_FORMAT = "%.17g"


def record_length(m: int) -> int:
    return 2 + 2 * m + m * (m + 1)


def _tril(P: np.ndarray) -> np.ndarray:
    rows, cols = np.tril_indices(P.shape[-1])
    return P[..., rows, cols]


def _untril(values: np.ndarray, m: int) -> np.ndarray:
    P = np.zeros(values.shape[:-1] + (m, m))
    rows, cols = np.tril_indices(m)
    P[..., rows, cols] = values
    P[..., cols, rows] = values
    return P


def encode_snapshot(snap: Snapshot) -> np.ndarray:
    """(columns, record_length) array; a single-column state gives one record."""
    theta_bar = np.atleast_2d(snap.theta_bar)
    m = theta_bar.shape[-1]
    count = theta_bar.shape[0]
    head = np.tile([float(snap.k), float(m)], (count, 1))
    P = snap.P.reshape(count, m, m)
    P_bar = snap.P_bar.reshape(count, m, m)
    return np.hstack([head, theta_bar, np.atleast_2d(snap.theta_hat), _tril(P), _tril(P_bar)])


def decode_records(records: np.ndarray) -> List[Snapshot]:
    """Inverse of encode_snapshot; consecutive records with the same k form one batch."""
    records = np.atleast_2d(np.asarray(records, dtype=float))
    snaps: List[Snapshot] = []
    start = 0
    while start < len(records):
        k = records[start, 0]
        stop = start
        while stop < len(records) and records[stop, 0] == k:
            stop += 1
        block = records[start:stop]
        m = int(block[0, 1])
        if block.shape[1] != record_length(m) or np.any(block[:, 1] != m):
            raise OutputError(f"malformed snapshot record at k={k}")
        tri = m * (m + 1) // 2
        theta_bar = block[:, 2 : 2 + m]
        theta_hat = block[:, 2 + m : 2 + 2 * m]
        P = _untril(block[:, 2 + 2 * m : 2 + 2 * m + tri], m)
        P_bar = _untril(block[:, 2 + 2 * m + tri :], m)
        if len(block) == 1:
            theta_bar, theta_hat, P, P_bar = theta_bar[0], theta_hat[0], P[0], P_bar[0]
        snaps.append(Snapshot(k=int(k), theta_bar=theta_bar, theta_hat=theta_hat, P=P, P_bar=P_bar))
        start = stop
    return snaps


def write_binary(path: str, snapshots: Iterable[Snapshot]) -> None:
    try:
        with open(path, "wb") as fh:
            for snap in snapshots:
                fh.write(encode_snapshot(snap).astype(RECORD_DTYPE).tobytes())
    except OSError as exc:
        raise OutputError(f"cannot write snapshots to {path}: {exc}") from exc


def read_binary(path: str, m: int) -> List[Snapshot]:
    try:
        flat = np.fromfile(path, dtype=RECORD_DTYPE)
    except OSError as exc:
        raise OutputError(f"cannot read snapshots from {path}: {exc}") from exc
    width = record_length(m)
    if flat.size % width:
        raise OutputError(f"{path} is not a whole number of {width}-value records")
    return decode_records(flat.reshape(-1, width))


def write_text(path: str, snapshots: Iterable[Snapshot]) -> None:
    records = [encode_snapshot(s) for s in snapshots]
    try:
        np.savetxt(path, np.vstack(records) if records else np.empty((0, 0)), fmt=TEXT_FORMAT)
    except OSError as exc:
        raise OutputError(f"cannot write snapshots to {path}: {exc}") from exc


def read_text(path: str) -> List[Snapshot]:
    try:
        records = np.loadtxt(path, ndmin=2)
    except (OSError, ValueError) as exc:
        raise OutputError(f"cannot read snapshots from {path}: {exc}") from exc
    return decode_records(records) if records.size else []
