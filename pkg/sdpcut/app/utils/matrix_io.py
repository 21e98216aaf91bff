import csv
import logging
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MATRIX_KINDS = ("A", "B", "R", "gram")


def export_matrix_csv(matrix: np.ndarray, path: Path, kind: str) -> Path:
    """Write a square matrix row-major with a '# n=<n> kind=<kind>' header"""
    if kind not in MATRIX_KINDS:
        raise ValueError(f"Unknown matrix kind: {kind}")
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {matrix.shape}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# n={matrix.shape[0]} kind={kind}\n")
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow(repr(float(value)) for value in row)

    logger.debug(f"Exported {kind} matrix of order {matrix.shape[0]} to {path}")
    return path


def load_matrix_csv(path: Path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# n="):
            raise ValueError(f"Missing matrix header in {path}")
        rows = [[float(value) for value in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=float)


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_rows_csv(
    rows: Iterable[Any],
    path: Path,
    header: Optional[Sequence[str]] = None,
    exclude: Sequence[str] = (),
) -> Path:
    """Write dataclass rows to CSV; column order follows `header` or the dataclass fields"""
    rows = list(rows)
    if header is None:
        if not rows or not is_dataclass(rows[0]):
            raise ValueError("A header is required for empty or non-dataclass rows")
        header = [f.name for f in fields(rows[0]) if f.name not in exclude]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            record: Dict[str, Any] = asdict(row) if is_dataclass(row) else dict(row)
            writer.writerow(_format_value(record.get(column)) for column in header)

    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def read_rows_csv(path: Path) -> List[Dict[str, str]]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
