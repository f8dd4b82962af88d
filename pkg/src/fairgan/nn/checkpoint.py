"""Flat numpy archive checkpoints.

A checkpoint is one ``.npz`` file: every tensor appears under a
hierarchical name (``generator/linear.weight``, ``optim/g/.../exp_avg``)
as a little-endian float32 array, RNG state rides along as raw uint8
bytes, and a ``__header__`` entry holds a JSON document with the format
version, the architecture specs, and whatever run metadata the caller
supplies. Loads are bit-exact: saving and reloading yields identical
arrays.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict
from enum import Enum
from typing import Any, Mapping

import numpy as np
import torch

from ..errors import CheckpointError

FORMAT_VERSION = 1
HEADER_KEY = "__header__"

_FLOAT_LE = np.dtype("<f4")


def encode_spec(spec: Any) -> dict:
    """Dataclass spec to a JSON-safe dict; enums become their values."""
    out = {}
    for k, v in asdict(spec).items():
        if isinstance(v, Enum):
            v = v.value
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def save_archive(path, arrays: Mapping[str, np.ndarray], header: dict) -> None:
    """Write arrays plus a JSON header to ``path`` as an npz archive.

    Float arrays are coerced to little-endian float32; uint8 arrays pass
    through untouched (RNG state, raw bytes). Other dtypes are rejected so
    the on-disk format stays a two-dtype affair.
    """
    payload: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        if name == HEADER_KEY:
            raise CheckpointError(f"array name {HEADER_KEY!r} is reserved")
        arr = np.asarray(arr)
        if arr.dtype == np.uint8:
            payload[name] = arr
        elif np.issubdtype(arr.dtype, np.floating):
            payload[name] = np.ascontiguousarray(arr, dtype=_FLOAT_LE)
        else:
            raise CheckpointError(
                f"array {name!r} has dtype {arr.dtype}; only float32 and uint8 are stored"
            )
    doc = dict(header)
    doc["format_version"] = FORMAT_VERSION
    header_bytes = json.dumps(doc, sort_keys=True).encode("utf-8")
    payload[HEADER_KEY] = np.frombuffer(header_bytes, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **payload)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read an archive back as (arrays, header), verifying the version."""
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if HEADER_KEY not in data:
        raise CheckpointError(f"checkpoint {path} has no header entry")
    try:
        header = json.loads(bytes(data.pop(HEADER_KEY)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint {path} header is not valid JSON: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format version {version!r}; "
            f"this build reads version {FORMAT_VERSION}"
        )
    return data, header


def state_dict_to_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in module.state_dict().items():
        out[f"{prefix}/{name}"] = tensor.detach().cpu().numpy().astype(_FLOAT_LE)
    return out


def arrays_to_state_dict(
    prefix: str, arrays: Mapping[str, np.ndarray]
) -> dict[str, torch.Tensor]:
    marker = prefix + "/"
    found = {
        name[len(marker):]: torch.from_numpy(np.array(arr, dtype=np.float32))
        for name, arr in arrays.items()
        if name.startswith(marker)
    }
    if not found:
        raise CheckpointError(f"checkpoint contains no arrays under {prefix!r}")
    return found


def rng_state_to_array(generator: torch.Generator) -> np.ndarray:
    return generator.get_state().numpy().astype(np.uint8)


def rng_state_from_array(arr: np.ndarray) -> torch.Generator:
    g = torch.Generator()
    g.set_state(torch.from_numpy(np.array(arr, dtype=np.uint8)))
    return g
