"""Single-file checkpoints: named float/int arrays plus JSON metadata.

The file is an ``.npz``-compatible zip archive written with fixed member
timestamps and sorted member order, so identical contents give identical
bytes. ``numpy.load`` can read it directly.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)
_META = "__meta__.json"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(_META, date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta or {}, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    arrays = {}
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read(_META))
        for name in zf.namelist():
            if name == _META:
                continue
            arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return arrays, meta


def split_prefix(arrays: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    """Sub-dictionary of ``prefix/...`` entries with the prefix removed."""
    cut = len(prefix) + 1
    return {k[cut:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
