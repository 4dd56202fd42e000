"""On-disk formats: DSFT tensors, checkpoints, and PNM images.

DSFT record: magic "DSFT", format version u32 LE, rank u32 LE, dims as
rank x u32 LE, then product(dims) float64 LE values in row-major order.

A checkpoint is a u64 LE manifest length, a UTF-8 JSON manifest, then
concatenated DSFT records. The manifest maps tensor names to byte offsets
(relative to the blob start) and dims, and carries arbitrary metadata
(configs) plus a format version.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

DSFT_MAGIC = b"DSFT"
DSFT_VERSION = 1
CHECKPOINT_VERSION = 1


def write_tensor(f, arr: np.ndarray) -> int:
    """Write one DSFT record; returns the number of bytes written."""
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    header = DSFT_MAGIC + struct.pack("<II", DSFT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f8").tobytes()
    f.write(header)
    f.write(payload)
    return len(header) + len(payload)


def read_tensor(f) -> np.ndarray:
    magic = f.read(4)
    if magic != DSFT_MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {DSFT_MAGIC!r}")
    version, rank = struct.unpack("<II", f.read(8))
    if version != DSFT_VERSION:
        raise ValueError(f"unsupported DSFT version {version}")
    dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
    count = int(np.prod(dims)) if dims else 1
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise ValueError("truncated DSFT payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor(f)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = io.BytesIO()
    entries = {}
    for name, arr in tensors.items():
        offset = blob.tell()
        write_tensor(blob, arr)
        entries[name] = {"offset": offset, "dims": list(np.asarray(arr).shape)}
    manifest = json.dumps(
        {"version": CHECKPOINT_VERSION, "meta": meta, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        f.write(blob.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
        base = f.tell()
        tensors = {}
        for name, entry in manifest["tensors"].items():
            f.seek(base + entry["offset"])
            arr = read_tensor(f)
            if list(arr.shape) != entry["dims"]:
                raise ValueError(f"manifest dims {entry['dims']} != stored {arr.shape} for {name}")
            tensors[name] = arr
    return tensors, manifest["meta"]


# ---------------------------------------------------------------------------
# PNM images (binary PGM P5 / PPM P6)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-d image, got shape {img.shape}")
    img = img.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    """img is (H, W, 3) uint8."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs (H, W, 3), got shape {img.shape}")
    img = img.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())
