"""Versioned checkpoint container.

A checkpoint is a zip archive holding one ``manifest.json`` plus one .npy
blob per tensor.  The manifest records the format version, the training
configuration, arbitrary JSON metadata, and a sha256 digest per blob;
loading verifies every digest.  Tensors inside nested structures (optimizer
state) are replaced by ``{"__tensor__": <blob name>}`` markers in the
manifest and restored on load.  Archives are written with fixed timestamps
so identical state produces identical bytes.
"""

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _strip_tensors(obj, blobs, prefix):
    """Replace tensors in a nested structure by blob markers."""
    if isinstance(obj, torch.Tensor):
        name = f"{prefix}/{len(blobs)}"
        blobs[name] = obj.detach().cpu().numpy()
        return {"__tensor__": name}
    if isinstance(obj, dict):
        return {str(k): _strip_tensors(v, blobs, prefix) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strip_tensors(v, blobs, prefix) for v in obj]
    return obj


def _restore_tensors(obj, blobs):
    if isinstance(obj, dict):
        if set(obj) == {"__tensor__"}:
            return torch.from_numpy(blobs[obj["__tensor__"]].copy())
        return {k: _restore_tensors(v, blobs) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_tensors(v, blobs) for v in obj]
    return obj


@dataclass
class CheckpointBundle:
    config: dict
    model_state: dict       # parameter name -> numpy array
    optimizer_state: dict   # group name -> torch optimizer state dict
    meta: dict


def save_checkpoint(path, config, model, optimizer_states=None, meta=None):
    """Write model (and optionally optimizer) state to ``path``.

    Args:
        path: output file.
        config: JSON-serializable training/model configuration.
        model: nn.Module whose state_dict is stored.
        optimizer_states: optional dict group name -> optimizer.state_dict().
        meta: optional JSON-serializable extras (epoch, step, metrics...).
    """
    blobs = {}
    for name, tensor in model.state_dict().items():
        blobs[f"model/{name}"] = tensor.detach().cpu().numpy()
    opt_manifest = {}
    for group, state in (optimizer_states or {}).items():
        opt_manifest[group] = _strip_tensors(state, blobs, f"opt/{group}")

    digests = {}
    encoded = {}
    for name, arr in blobs.items():
        buf = io.BytesIO()
        np.save(buf, arr, allow_pickle=False)
        raw = buf.getvalue()
        encoded[name] = raw
        digests[name] = {
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "meta": meta or {},
        "optimizers": opt_manifest,
        "blobs": digests,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(encoded):
            info = zipfile.ZipInfo(f"blobs/{name}.npy", date_time=_EPOCH)
            zf.writestr(info, encoded[name])


def load_checkpoint(path):
    """Read a checkpoint, verifying format version and blob digests."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        version = manifest.get("format_version")
        if version != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported checkpoint format version {version!r}, "
                f"this build reads version {FORMAT_VERSION}"
            )
        blobs = {}
        for name, spec in manifest["blobs"].items():
            raw = zf.read(f"blobs/{name}.npy")
            digest = hashlib.sha256(raw).hexdigest()
            if digest != spec["sha256"]:
                raise DataError(f"{path}: digest mismatch for blob {name}")
            blobs[name] = np.load(io.BytesIO(raw), allow_pickle=False)

    model_state = {
        name[len("model/"):]: arr for name, arr in blobs.items()
        if name.startswith("model/")
    }
    optimizer_state = {
        group: _restore_tensors(state, blobs)
        for group, state in manifest["optimizers"].items()
    }
    return CheckpointBundle(
        config=manifest["config"],
        model_state=model_state,
        optimizer_state=optimizer_state,
        meta=manifest["meta"],
    )
