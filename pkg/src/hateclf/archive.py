"""Named-tensor archive: a directory holding ``manifest.json`` and one flat
``tensors.bin`` data file.  Each manifest entry records shape, dtype and byte
offset, so tensors can be read without unpickling anything."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import torch

from .errors import IoFailure, MissingTensor, VersionMismatch

FORMAT = "hateclf-tensors"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
DATA = "tensors.bin"

_DTYPES = {
    "float16": np.float16,
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "int32": np.int32,
    "uint8": np.uint8,
}


def save_archive(path: str | Path, tensors: Mapping[str, torch.Tensor], meta: Optional[Mapping[str, Any]] = None) -> None:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        entries = {}
        offset = 0
        with open(path / DATA, "wb") as fh:
            for name, t in tensors.items():
                arr = t.detach().cpu().contiguous().numpy()
                if arr.dtype.name not in _DTYPES:
                    raise IoFailure(f"unsupported dtype {arr.dtype} for tensor {name}")
                buf = arr.tobytes(order="C")
                fh.write(buf)
                entries[name] = {
                    "shape": list(arr.shape),
                    "dtype": arr.dtype.name,
                    "offset": offset,
                    "nbytes": len(buf),
                }
                offset += len(buf)
        manifest = {"format": FORMAT, "version": FORMAT_VERSION, "tensors": entries, "meta": dict(meta or {})}
        (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    except OSError as e:
        raise IoFailure(f"cannot write archive {path}: {e}") from e


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except FileNotFoundError as e:
        raise IoFailure(f"{path}: no {MANIFEST}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise IoFailure(f"{path}: unreadable manifest: {e}") from e
    if manifest.get("format") != FORMAT or manifest.get("version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: archive format {manifest.get('format')!r} version {manifest.get('version')!r}, "
            f"expected {FORMAT!r} version {FORMAT_VERSION}"
        )
    return manifest


def load_archive(path: str | Path, names=None) -> tuple[dict[str, torch.Tensor], dict]:
    """Return ``(tensors, manifest)``.  A tensor whose bytes lie beyond the end
    of the data file raises MissingTensor."""
    path = Path(path)
    manifest = read_manifest(path)
    data_path = path / DATA
    size = os.path.getsize(data_path) if data_path.exists() else 0
    out = {}
    wanted = manifest["tensors"] if names is None else {n: manifest["tensors"][n] for n in names if n in manifest["tensors"]}
    with open(data_path, "rb") if data_path.exists() else open(os.devnull, "rb") as fh:
        for name, e in wanted.items():
            dtype = np.dtype(_DTYPES[e["dtype"]])
            expected = int(np.prod(e["shape"], dtype=np.int64)) * dtype.itemsize
            if e["nbytes"] != expected or e["offset"] + e["nbytes"] > size:
                raise MissingTensor(f"{path}: tensor {name} is truncated or absent from {DATA}")
            fh.seek(e["offset"])
            arr = np.frombuffer(fh.read(e["nbytes"]), dtype=dtype).reshape(e["shape"])
            out[name] = torch.from_numpy(arr.copy())
    return out, manifest
