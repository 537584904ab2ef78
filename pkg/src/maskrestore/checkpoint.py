"""Self-describing checkpoint container.

Layout::

    MRCKPT1\\n                 8-byte magic
    header_len                 uint64 little-endian
    header                     UTF-8 JSON, ``header_len`` bytes
    blob                       concatenated float32 little-endian tensors

The header records the architecture, refinement scales, per-scale
thresholds, a parameter manifest (name, shape, byte offset, byte count)
and a SHA-256 of the blob, so a file can be inspected or integrity-checked
without instantiating the network.  Writing is fully deterministic: the
same weights and metadata produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .model import ArchConfig, RestorationNet

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "inspect_checkpoint"]

MAGIC = b"MRCKPT1\n"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised when a checkpoint file is missing, truncated, or corrupt."""


def save_checkpoint(
    path: str | Path,
    model: RestorationNet,
    scales: tuple[int, ...] | list[int],
    thresholds: dict[int, float],
    meta: dict | None = None,
) -> None:
    """Write model weights plus detection metadata to ``path``.

    Args:
        path: Destination file; parent directories must exist.
        model: Trained restoration network.
        scales: Grid cell sizes the thresholds were calibrated for.
        thresholds: Per-scale patch-error thresholds, keyed by cell size.
        meta: Optional JSON-serializable extras echoed into the header.
    """
    scales = [int(s) for s in scales]
    missing = [s for s in scales if s not in thresholds]
    if missing:
        raise ValueError(f"no threshold recorded for scales {missing}")

    manifest = []
    chunks = []
    offset = 0
    for name, tensor in model.state_dict().items():
        if tensor.dtype != torch.float32:
            raise CheckpointError(f"parameter {name!r} is {tensor.dtype}, expected float32")
        raw = tensor.detach().cpu().numpy().astype("<f4", copy=False).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)

    header = {
        "format_version": FORMAT_VERSION,
        "arch": model.arch.to_dict(),
        "scales": scales,
        "thresholds": {str(s): float(thresholds[s]) for s in scales},
        "params": manifest,
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def _read_header(path: str | Path) -> tuple[dict, int]:
    """Parse and validate the header; returns (header, blob byte offset)."""
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint not found: {p}")
    with open(p, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{p} is not a checkpoint (bad magic {magic!r})")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{p} is truncated before the header length")
        (header_len,) = struct.unpack("<Q", raw_len)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise CheckpointError(f"{p} is truncated inside the header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p} has an unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{p} has format_version {header.get('format_version')!r}, "
            f"this build reads version {FORMAT_VERSION}"
        )
    return header, len(MAGIC) + 8 + header_len


def inspect_checkpoint(path: str | Path, verify_blob: bool = False) -> dict:
    """Return header metadata without building a model.

    With ``verify_blob`` the stored SHA-256 is checked against the payload
    and a ``"blob_ok"`` flag is added.
    """
    header, blob_start = _read_header(path)
    info = {
        "format_version": header["format_version"],
        "arch": header["arch"],
        "scales": header["scales"],
        "thresholds": header["thresholds"],
        "n_params": len(header["params"]),
        "blob_sha256": header["blob_sha256"],
        "meta": header.get("meta", {}),
    }
    if verify_blob:
        with open(path, "rb") as fh:
            fh.seek(blob_start)
            blob = fh.read()
        info["blob_ok"] = hashlib.sha256(blob).hexdigest() == header["blob_sha256"]
    return info


def load_checkpoint(path: str | Path) -> tuple[RestorationNet, dict]:
    """Rebuild the network and metadata stored at ``path``.

    Returns:
        ``(model, info)`` where ``info`` holds ``scales`` (list of int),
        ``thresholds`` (dict int -> float), and the header ``meta`` dict.
        The model is returned in eval mode.

    Raises:
        CheckpointError: On missing file, bad magic, truncation, hash
            mismatch, or a manifest that does not match the architecture.
    """
    header, blob_start = _read_header(path)
    with open(path, "rb") as fh:
        fh.seek(blob_start)
        blob = fh.read()
    if hashlib.sha256(blob).hexdigest() != header["blob_sha256"]:
        raise CheckpointError(f"{path}: weight blob does not match its recorded SHA-256")

    model = RestorationNet(ArchConfig.from_dict(header["arch"]))
    state = {}
    for entry in header["params"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointError(f"{path}: manifest entry {entry['name']!r} overruns the blob")
        arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=start)
        state[entry["name"]] = torch.from_numpy(arr.copy()).reshape(entry["shape"])
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not fit the declared architecture: {exc}") from exc
    model.eval()

    info = {
        "scales": [int(s) for s in header["scales"]],
        "thresholds": {int(k): float(v) for k, v in header["thresholds"].items()},
        "meta": header.get("meta", {}),
    }
    return model, info
