"""File I/O helpers shared by the command-line entry points.

All numeric outputs are written with repr-stable formatting (17 significant
digits for CSV, default float repr for JSON with sorted keys), so a rerun
with the same configuration and seed produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError


def load_matrix_csv(path: str | Path, name: str = "matrix") -> np.ndarray:
    """Read a headerless numeric CSV as a 2-d float array."""
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read {name} from {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{name} file {path} is not numeric CSV: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} file {path} contains non-finite entries")
    return arr


def load_vector_csv(path: str | Path, name: str = "vector") -> np.ndarray:
    arr = load_matrix_csv(path, name)
    if 1 not in arr.shape and arr.ndim == 2 and min(arr.shape) != 1:
        raise DataError(f"{name} file {path} must be a single column or row")
    return arr.ravel()


def save_matrix_csv(path: str | Path, arr: np.ndarray, header: str | None = None) -> None:
    arr = np.atleast_2d(np.asarray(arr))
    np.savetxt(path, arr, delimiter=",", fmt="%.17g",
               header=header or "", comments="")


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars to plain Python."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not np.isfinite(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def save_json(path: str | Path, payload: dict) -> None:
    text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def sha256_of(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def prepare_outputs(out_dir: str | Path, filenames: list[str]) -> Path:
    """Create the run directory and refuse to overwrite existing outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clashes = [nm for nm in filenames if (out / nm).exists()]
    if clashes:
        raise ConfigError(
            f"output files already exist in {out}: {', '.join(clashes)}; "
            "outputs are write-once, use a fresh directory"
        )
    return out
