"""Named float64 tensors in one little-endian blob plus a JSON manifest."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError


def save_checkpoint(stem: str | Path, params: dict[str, np.ndarray], extra: dict | None = None) -> None:
    stem = Path(stem)
    entries, offset = [], 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = {"dtype": "float64-le", "tensors": entries, "extra": extra or {}}
    stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2))


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    if not stem.with_suffix(".json").exists():
        raise DataError(f"missing checkpoint manifest {stem.with_suffix('.json')}")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    blob = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    params = {}
    for e in manifest["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"] // 8
        params[e["name"]] = blob[start : start + size].reshape(e["shape"]).astype(np.float64)
    return params, manifest.get("extra", {})
