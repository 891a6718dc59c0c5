"""Named-tensor checkpoints: meta.json plus a single float32 blob.

Layout on disk:

    <dir>/meta.json    {"format": "tcr-checkpoint-v1",
                        "tensors": {name: {"shape": [...], "offset": bytes}},
                        "extra": {...}}
    <dir>/weights.f32  all tensors, little-endian float32, at their offsets

Offsets are assigned in sorted-name order, so a checkpoint written twice
from the same values is byte identical. `extra` carries JSON-serializable
sidecar state (epoch counters, optimizer scalars, model config).
"""

import json
import os

import numpy as np

from .autodiff import Tensor
from .errors import DatasetFormatError, MissingArtifactError

__all__ = ["save_checkpoint", "load_checkpoint"]

_FORMAT = "tcr-checkpoint-v1"


def _named_arrays(tensors):
    out = {}
    for name, t in tensors.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        out[name] = np.ascontiguousarray(arr, dtype=np.float32)
    return out


def save_checkpoint(path, tensors, extra=None, optimizer=None):
    """Write a checkpoint directory.

    tensors: flat dict name -> Tensor or ndarray (stored as float32).
    optimizer: AdamW state as produced by init_adamw; its moment arrays
    are stored as tensors under opt.m/<name> and opt.v/<name>, its
    scalars inside extra["optimizer"].
    """
    arrays = _named_arrays(tensors)
    extra = dict(extra or {})
    if optimizer is not None:
        arrays.update({f"opt.m/{k}": np.ascontiguousarray(v, dtype=np.float32)
                       for k, v in optimizer["m"].items()})
        arrays.update({f"opt.v/{k}": np.ascontiguousarray(v, dtype=np.float32)
                       for k, v in optimizer["v"].items()})
        extra["optimizer"] = {
            "betas": list(optimizer["betas"]),
            "eps": optimizer["eps"],
            "weight_decay": optimizer["weight_decay"],
            "step": optimizer["step"],
        }

    os.makedirs(path, exist_ok=True)
    meta = {"format": _FORMAT, "tensors": {}, "extra": extra}
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        meta["tensors"][name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.nbytes
    with open(os.path.join(path, "weights.f32"), "wb") as fh:
        for name in sorted(arrays):
            fh.write(arrays[name].astype("<f4", copy=False).tobytes())
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path, requires_grad=True):
    """Read a checkpoint directory.

    Returns (tensors, extra, optimizer) where tensors maps name -> Tensor,
    extra is the stored sidecar dict, and optimizer is a reconstructed
    AdamW state (or None if the checkpoint carried none).
    """
    meta_path = os.path.join(path, "meta.json")
    blob_path = os.path.join(path, "weights.f32")
    if not os.path.exists(meta_path):
        raise MissingArtifactError(f"checkpoint meta not found: {meta_path}")
    if not os.path.exists(blob_path):
        raise MissingArtifactError(f"checkpoint blob not found: {blob_path}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != _FORMAT:
        raise DatasetFormatError(
            f"unsupported checkpoint format {meta.get('format')!r}")
    blob = np.fromfile(blob_path, dtype="<f4")

    arrays = {}
    for name, entry in meta["tensors"].items():
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"]) // 4
        if entry["offset"] % 4 != 0 or start + n > blob.size:
            raise DatasetFormatError(
                f"checkpoint blob too short for tensor {name!r}: "
                f"needs {n} values at offset {entry['offset']}")
        arrays[name] = blob[start:start + n].reshape(shape).copy()

    tensors = {}
    moments_m, moments_v = {}, {}
    for name, arr in arrays.items():
        if name.startswith("opt.m/"):
            moments_m[name[len("opt.m/"):]] = arr
        elif name.startswith("opt.v/"):
            moments_v[name[len("opt.v/"):]] = arr
        else:
            tensors[name] = Tensor(arr, requires_grad=requires_grad)

    extra = dict(meta.get("extra", {}))
    optimizer = None
    opt_meta = extra.pop("optimizer", None)
    if opt_meta is not None:
        optimizer = {
            "betas": tuple(opt_meta["betas"]),
            "eps": float(opt_meta["eps"]),
            "weight_decay": float(opt_meta["weight_decay"]),
            "step": int(opt_meta["step"]),
            "m": moments_m,
            "v": moments_v,
        }
    return tensors, extra, optimizer
