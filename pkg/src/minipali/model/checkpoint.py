"""Checkpoint container: a zip holding ``manifest.json`` plus one ``.npy`` per array.

Arrays are stored little-endian (``<f8`` / ``<f4``) and zip entries carry a
fixed timestamp, so saving the same state twice yields identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelConfig

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step: int = 0
    opt_state: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _npy_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": int(ckpt.step),
        "config": ckpt.config.to_dict(),
        "byte_order": "little",
        "params": {k: {"shape": list(v.shape), "dtype": np.asarray(v).dtype.newbyteorder("<").str}
                   for k, v in sorted(ckpt.params.items())},
        "opt_state": sorted(ckpt.opt_state),
        "meta": ckpt.meta,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
        for k in sorted(ckpt.params):
            _write(zf, f"params/{k}.npy", _npy_bytes(ckpt.params[k]))
        for k in sorted(ckpt.opt_state):
            _write(zf, f"opt/{k}.npy", _npy_bytes(ckpt.opt_state[k]))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
        params = {k: np.lib.format.read_array(io.BytesIO(zf.read(f"params/{k}.npy")))
                  for k in manifest["params"]}
        opt = {k: np.lib.format.read_array(io.BytesIO(zf.read(f"opt/{k}.npy")))
               for k in manifest["opt_state"]}
    for k, spec in manifest["params"].items():
        if list(params[k].shape) != spec["shape"]:
            raise CheckpointError(f"{k}: stored shape {params[k].shape} != manifest {spec['shape']}")
    return Checkpoint(ModelConfig.from_dict(manifest["config"]), params, manifest["step"], opt,
                      manifest.get("meta", {}))
