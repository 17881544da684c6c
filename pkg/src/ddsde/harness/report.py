"""``report.csv`` and ``report.meta`` writers."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from .experiments import ExperimentResult

SCHEMA_VERSION = 1


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_report(result: ExperimentResult, out_dir, config_hash: str) -> Path:
    """Write both files into ``out_dir`` and return the CSV path.

    The CSV starts with its header row; the column order is fixed per
    experiment kind and versioned by ``schema_version`` in the meta file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(result.columns)
        for row in result.rows:
            w.writerow([_cell(v) for v in row])
    meta = {
        "schema_version": SCHEMA_VERSION,
        "experiment": result.kind,
        "config_hash": config_hash,
        "passed": bool(result.passed),
        "summary": result.summary,
        "versions": {
            "ddsde": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    (out / "report.meta").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return path
