from typing import Any, Dict, Mapping, Protocol, Sequence

import numpy as np

from ..domain.states import Snapshot


class ResultSinkPort(Protocol):
    def write_table(self, name: str, columns: Sequence[str], rows: np.ndarray) -> str: ...
    def write_report(self, name: str, entries: Mapping[str, Any]) -> str: ...
    def write_matrix(self, name: str, matrix: np.ndarray) -> str: ...
    def write_config(self, resolved: Dict[str, Any]) -> str: ...
    def write_snapshots(self, name: str, snapshots: Sequence[Snapshot]) -> str: ...
