"""Parameter checkpoints: an .npz of named arrays plus a JSON sidecar."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import IO
from typing import Any
from typing import Callable

import numpy as np

from age_estimator._data import CheckpointMismatchError
from age_estimator._nn import GATE_ORDER
from age_estimator._nn import StackParams

FORMAT_VERSION = 1
_HEADER_KEY = "__header__"


def sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _replace_atomically(path: Path, write: Callable[[IO[bytes]], object]) -> None:
    """Write through a temporary file in the same directory, then rename."""
    tmp = tempfile.NamedTemporaryFile(
        dir=path.parent, prefix=f".{path.name}.", suffix=".tmp", delete=False,
    )
    try:
        with tmp:
            write(tmp)
        os.replace(tmp.name, path)
    except BaseException:
        Path(tmp.name).unlink(missing_ok=True)
        raise


def save_checkpoint(
    path: Path,
    params: StackParams,
    seed: int,
    metadata: dict[str, Any],
) -> None:
    """Write weights to `path` (.npz) and `metadata` next to it (.json).

    The header inside the archive records sizes, gate order and seed so the
    weights can be read without the sidecar.
    """
    n_x, n_h, n_fc, n_o = params.sizes
    header = {
        "format": FORMAT_VERSION,
        "gate_order": list(GATE_ORDER),
        "sizes": {"n_x": n_x, "n_h": n_h, "n_fc": n_fc, "n_o": n_o},
        "seed": seed,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        _HEADER_KEY: np.array(json.dumps(header, sort_keys=True)),
        **params.named_arrays(),
    }
    sidecar = json.dumps({"header": header, **metadata}, indent=2, sort_keys=True) + "\n"
    _replace_atomically(path, lambda f: np.savez(f, **arrays))
    _replace_atomically(sidecar_path(path), lambda f: f.write(sidecar.encode()))


def load_checkpoint(path: Path) -> tuple[StackParams, dict[str, Any]]:
    """Read weights and sidecar metadata written by `save_checkpoint`."""
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive[_HEADER_KEY]))
        arrays = {
            name: np.array(archive[name], dtype=np.float64)
            for name in archive.files
            if name != _HEADER_KEY
        }

    if header.get("format") != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"{path}: unsupported checkpoint format {header.get('format')}",
        )
    if tuple(header.get("gate_order", ())) != GATE_ORDER:
        raise CheckpointMismatchError(
            f"{path}: gate order {header.get('gate_order')} != {list(GATE_ORDER)}",
        )

    params = StackParams.from_arrays(arrays)
    sizes = header["sizes"]
    if params.sizes != (sizes["n_x"], sizes["n_h"], sizes["n_fc"], sizes["n_o"]):
        raise CheckpointMismatchError(f"{path}: header sizes disagree with weights")

    sidecar = sidecar_path(path)
    metadata: dict[str, Any] = {"header": header}
    if sidecar.exists():
        metadata = json.loads(sidecar.read_text())
    return params, metadata
