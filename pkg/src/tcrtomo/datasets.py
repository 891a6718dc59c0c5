"""Dataset containers and the on-disk layout.

A dataset directory holds one meta.json plus raw little-endian float32
payloads, one file per tensor:

    meta.json            geometry, counts, seeds, per-item file names
    gt_<i>.f32           ground-truth frames, T*H*W values, C order
    sino_<i>_t<t>.f32    measured sinogram of item i at step t, n_a(t)*n_off

Raw f32 + explicit metadata keeps the format trivially parseable from any
language and makes byte-identical regeneration easy to verify with cmp/sha.
Sinogram sets reuse the same idea for measurement-only data (no gt), which is
how externally acquired scans enter the pipeline.
"""

import json
import os

import numpy as np

from .errors import DatasetFormatError, MissingArtifactError
from .geometry import ScanGeometry

_FORMAT_DATASET = "tcr-dataset-v1"
_FORMAT_SINOGRAM = "tcr-sinogram-v1"


class Sinogram:
    """Per-step measurement stack: frames[t] is (n_angles(t), n_offsets)."""

    def __init__(self, frames, angles, offsets):
        if len(frames) != len(angles):
            raise ValueError(
                f"{len(frames)} sinogram frames vs {len(angles)} angle lists")
        self.frames = [np.asarray(f, dtype=np.float64) for f in frames]
        self.angles = [np.asarray(a, dtype=np.float64) for a in angles]
        self.offsets = np.asarray(offsets, dtype=np.float64)
        for t, (f, a) in enumerate(zip(self.frames, self.angles)):
            if f.shape != (a.size, self.offsets.size):
                raise ValueError(
                    f"step {t}: frame shape {f.shape} does not match "
                    f"({a.size}, {self.offsets.size})")

    @property
    def n_steps(self):
        return len(self.frames)


class Dataset:
    """In-memory dataset: ground-truth sequences paired with sinograms."""

    def __init__(self, geometry, gt, sinograms, seed=0, split="train",
                 noise_level=0.0, specs=None):
        if len(gt) != len(sinograms):
            raise ValueError(
                f"{len(gt)} gt sequences vs {len(sinograms)} sinograms")
        self.geometry = geometry
        self.gt = [np.asarray(g, dtype=np.float32) for g in gt]
        self.sinograms = list(sinograms)
        self.seed = seed
        self.split = split
        self.noise_level = noise_level
        self.specs = specs

    def __len__(self):
        return len(self.gt)


def _write_f32(path, arr):
    np.asarray(arr, dtype="<f4").tofile(path)


def _read_f32(path, shape, name):
    try:
        raw = np.fromfile(path, dtype="<f4")
    except FileNotFoundError:
        raise MissingArtifactError(f"missing payload file for {name}: {path}")
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise DatasetFormatError(
            f"tensor {name}: payload {path} holds {raw.size} float32 values, "
            f"expected {expected} for shape {tuple(shape)}")
    return raw.reshape(shape)


def _dump_meta(path, meta):
    # sort_keys + fixed separators so regeneration is byte-identical
    with open(path, "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_meta(path):
    if not os.path.isfile(path):
        raise MissingArtifactError(f"missing meta.json: {path}")
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)


def write_dataset(ds, path):
    """Write a Dataset to a directory (created if needed)."""
    os.makedirs(path, exist_ok=True)
    items = []
    for i, (gt, sino) in enumerate(zip(ds.gt, ds.sinograms)):
        gt_file = f"gt_{i}.f32"
        _write_f32(os.path.join(path, gt_file), gt)
        sino_files = []
        for t, frame in enumerate(sino.frames):
            fname = f"sino_{i}_t{t}.f32"
            _write_f32(os.path.join(path, fname), frame)
            sino_files.append(fname)
        items.append({
            "index": i,
            "gt": {"file": gt_file, "shape": list(gt.shape)},
            "sino": [{"file": f, "shape": list(fr.shape),
                      "angles": [float(a) for a in ang]}
                     for f, fr, ang in zip(sino_files, sino.frames,
                                           sino.angles)],
        })
    meta = {
        "format": _FORMAT_DATASET,
        "endianness": "LE",
        "dtype": "float32",
        "geometry": ds.geometry.to_dict(),
        "n_items": len(ds.gt),
        "seed": ds.seed,
        "split": ds.split,
        "noise_level": ds.noise_level,
        "items": items,
    }
    if ds.specs is not None:
        meta["phantoms"] = ds.specs
    _dump_meta(os.path.join(path, "meta.json"), meta)


def read_dataset(path):
    """Load a dataset directory, validating every payload size."""
    meta = _load_meta(os.path.join(path, "meta.json"))
    if meta.get("format") != _FORMAT_DATASET:
        raise DatasetFormatError(
            f"{path}: format {meta.get('format')!r}, expected {_FORMAT_DATASET!r}")
    geom = ScanGeometry.from_dict(meta["geometry"])
    gt, sinos = [], []
    for item in meta["items"]:
        i = item["index"]
        gt.append(_read_f32(os.path.join(path, item["gt"]["file"]),
                            item["gt"]["shape"], f"gt_{i}"))
        frames, angles = [], []
        for t, entry in enumerate(item["sino"]):
            frames.append(_read_f32(os.path.join(path, entry["file"]),
                                    entry["shape"], f"sino_{i}_t{t}"))
            angles.append(np.asarray(entry["angles"], dtype=np.float64))
        sinos.append(Sinogram(frames, angles, geom.offsets))
    return Dataset(geom, gt, sinos, seed=meta["seed"], split=meta["split"],
                   noise_level=meta["noise_level"],
                   specs=meta.get("phantoms"))


def write_sinogram_set(sinograms, image_size, path):
    """Measurement-only directory: meta.json + sino_<i>_t<t>.f32 files."""
    os.makedirs(path, exist_ok=True)
    items = []
    offsets = None
    for i, sino in enumerate(sinograms):
        if offsets is None:
            offsets = sino.offsets
        entry = []
        for t, frame in enumerate(sino.frames):
            fname = f"sino_{i}_t{t}.f32"
            _write_f32(os.path.join(path, fname), frame)
            entry.append({"file": fname, "shape": list(frame.shape),
                          "angles": [float(a) for a in sino.angles[t]]})
        items.append({"index": i, "sino": entry})
    meta = {
        "format": _FORMAT_SINOGRAM,
        "endianness": "LE",
        "dtype": "float32",
        "image_size": int(image_size),
        "offsets": [float(o) for o in offsets],
        "n_items": len(sinograms),
        "items": items,
    }
    _dump_meta(os.path.join(path, "meta.json"), meta)


def load_external_sinogram(path):
    """Load a sinogram set directory -> (list of Sinogram, image_size).

    Angle counts may vary arbitrarily per step; geometry comes entirely from
    the metadata, so scans acquired elsewhere only need meta.json + raw f32
    payloads to be reconstructable.
    """
    meta = _load_meta(os.path.join(path, "meta.json"))
    if meta.get("format") != _FORMAT_SINOGRAM:
        raise DatasetFormatError(
            f"{path}: format {meta.get('format')!r}, expected {_FORMAT_SINOGRAM!r}")
    offsets = np.asarray(meta["offsets"], dtype=np.float64)
    sinos = []
    for item in meta["items"]:
        i = item["index"]
        frames, angles = [], []
        for t, entry in enumerate(item["sino"]):
            shape = entry["shape"]
            if len(shape) != 2 or shape[1] != offsets.size:
                raise DatasetFormatError(
                    f"sino_{i}_t{t}: shape {shape} does not match "
                    f"{offsets.size} offsets")
            frames.append(_read_f32(os.path.join(path, entry["file"]),
                                    shape, f"sino_{i}_t{t}"))
            ang = np.asarray(entry["angles"], dtype=np.float64)
            if ang.size != shape[0]:
                raise DatasetFormatError(
                    f"sino_{i}_t{t}: {ang.size} angles for {shape[0]} rows")
            angles.append(ang)
        sinos.append(Sinogram(frames, angles, offsets))
    return sinos, int(meta["image_size"])
