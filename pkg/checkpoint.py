"""On-disk formats: network checkpoints and the CSV series the lab emits.

Checkpoint layout:
    8 bytes   little-endian uint64, length H of the JSON header
    H bytes   UTF-8 JSON header, space-padded so the data block starts on an
              8-byte boundary
    data      raw little-endian float64 arrays, row-major, W¹..Wᴸ then a

The header carries version, L, m, d, seed, step and one
``{"name", "shape", "offset"}`` entry per array, offsets counted in bytes from
the start of the data block.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from errors import ShapeError
from network import NetworkParams

logger = logging.getLogger("ntk-checkpoint")

CHECKPOINT_VERSION = 1
_DTYPE = np.dtype("<f8")


def format_float(x) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return f"{float(x):.17g}"


# ── Checkpoints ───────────────────────────────────────────────────────────────

def save_checkpoint(path, params: NetworkParams, seed: int, step: int, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = [(f"W{l}", w) for l, w in enumerate(params.weights, start=1)] + [("a", params.a)]
    entries, offset = [], 0
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * _DTYPE.itemsize
    header = {
        "version": CHECKPOINT_VERSION,
        "L": params.L,
        "m": params.m,
        "d": params.d,
        "seed": int(seed),
        "step": int(step),
        "arrays": entries,
        **(extra or {}),
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    raw += b" " * (-(8 + len(raw)) % 8)
    with open(path, "wb") as f:
        f.write(len(raw).to_bytes(8, "little"))
        f.write(raw)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes(order="C"))
    logger.debug(f"[CKPT] wrote {path} step={step}")
    return path


def read_header(path) -> dict:
    with open(path, "rb") as f:
        size = int.from_bytes(f.read(8), "little")
        return json.loads(f.read(size).decode("utf-8"))


def load_checkpoint(path) -> tuple:
    """Returns (NetworkParams, header)."""
    blob = Path(path).read_bytes()
    size = int.from_bytes(blob[:8], "little")
    header = json.loads(blob[8:8 + size].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {header.get('version')} in {path}")
    data = blob[8 + size:]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * _DTYPE.itemsize
        if end > len(data):
            raise ShapeError(f"checkpoint {path} is truncated at array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[start:end], dtype=_DTYPE).reshape(shape).astype(np.float64)
    weights = tuple(arrays[f"W{l}"] for l in range(1, header["L"] + 1))
    params = NetworkParams(weights, arrays["a"])
    if (params.L, params.m, params.d) != (header["L"], header["m"], header["d"]):
        raise ShapeError(f"checkpoint {path} header disagrees with its arrays")
    return params, header


# ── CSV series ────────────────────────────────────────────────────────────────

def write_csv(path, columns: list, rows) -> Path:
    """Rows of numbers (ints stay ints, floats get 17 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def read_csv(path) -> tuple:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


def write_dataset_csv(path, inputs: np.ndarray, labels: np.ndarray) -> Path:
    d = inputs.shape[1]
    columns = [f"x{j}" for j in range(1, d + 1)] + ["y"]
    return write_csv(path, columns, ([*x, int(y)] for x, y in zip(inputs, labels)))
