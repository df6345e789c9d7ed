"""Plot-ready CSV output with a reproducibility header."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence],
              meta: Mapping[str, object]) -> Path:
    """Write ``rows`` under a ``# key: value`` header (version, seed, config hash)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# crsurv-version: {__version__}\n")
        for key, value in meta.items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict[str, str]]:
    """Read a file written by :func:`write_csv`, skipping header comments."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def weighted_quantile(values: np.ndarray, weights: np.ndarray | None,
                      q: Sequence[float]) -> np.ndarray:
    """Quantiles of a weighted sample (inverted empirical CDF, midpoint rule).

    Equal weights reproduce ``np.quantile(..., method="hazen")``.
    """
    values = np.asarray(values, dtype=float)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        values = values[weights > 0]
        weights = weights[weights > 0]
    # equal weights take the unweighted path so the result is bit-identical
    if weights is None or np.all(weights == weights[0]):
        return np.quantile(values, q, method="hazen")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cdf = (np.cumsum(w) - 0.5 * w) / w.sum()
    return np.interp(q, cdf, v)
