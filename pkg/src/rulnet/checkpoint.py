"""Versioned binary model bundles.

Layout (all integers little-endian):

    bytes 0..7    magic  b"RULBNDL\\x00"
    bytes 8..11   format version (uint32, currently 1)
    bytes 12..19  header length H (uint64)
    bytes 20..    H bytes of UTF-8 JSON (sorted keys): model hyperparams,
                  experiment config snapshot, condition model (centroids,
                  means, stds as lists), and a tensor table of
                  {name, shape, dtype, offset, nbytes}
    then          the raw little-endian tensor buffers, concatenated in
                  table order

Loading verifies magic, version, and buffer bounds; a truncated file
raises CheckpointError without producing a partial model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ConditionModel
from .errors import CheckpointError, ConfigurationError
from .model import RulModel

MAGIC = b"RULBNDL\x00"
FORMAT_VERSION = 1


@dataclass
class Bundle:
    """A trained model plus everything needed to run it on raw files."""

    model: RulModel
    condition_model: ConditionModel
    config: dict

    @property
    def window(self) -> int:
        return self.model.window

    @property
    def r_max(self) -> float:
        return float(self.config.get("r_max", 125.0))

    def require_window(self, window: int) -> None:
        if window != self.model.window:
            raise ConfigurationError(
                f"bundle was trained with window {self.model.window}, got {window}"
            )


def save_bundle(path: str | Path, model: RulModel, cm: ConditionModel, config: dict) -> None:
    tensors = model.state_arrays()
    table = []
    offset = 0
    for name, arr in tensors:
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        nbytes = little.nbytes
        table.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": np.dtype(arr.dtype).str.replace(">", "<"),
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    header = {
        "hyperparams": model.hyperparams(),
        "config": config,
        "condition_model": {
            "centroids": cm.centroids.tolist(),
            "means": cm.means.tolist(),
            "stds": cm.stds.tolist(),
        },
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        out.write(struct.pack("<Q", len(blob)))
        out.write(blob)
        for _, arr in tensors:
            out.write(np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False)).tobytes())


def load_bundle(path: str | Path) -> Bundle:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read bundle: {exc}") from None
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a rulnet bundle (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported bundle version {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 12)
    body_start = 20 + header_len
    if len(raw) < body_start:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[20:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = body_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated tensor {entry['name']!r}")
        arr = np.frombuffer(raw[start:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"])

    model = RulModel.from_hyperparams(header["hyperparams"])
    model.load_state_arrays(arrays)
    cm_data = header["condition_model"]
    cm = ConditionModel(
        centroids=np.array(cm_data["centroids"], dtype=np.float64),
        means=np.array(cm_data["means"], dtype=np.float64),
        stds=np.array(cm_data["stds"], dtype=np.float64),
    )
    return Bundle(model=model, condition_model=cm, config=header["config"])
