"""Checkpoint persistence: a JSON manifest plus a raw little-endian f32 blob.

`<prefix>.manifest.json` describes the model config, step, and the byte
layout of `<prefix>.tensors.bin`, where tensors are concatenated in
manifest order. The format is deliberately trivial to parse from any
language and merges byte-exactly. Optimizer moments ride along under
`adam.m.*` / `adam.v.*` names when training state is saved; they are never
touched by merging.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .model import ModelConfig, Parameters

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Base class for persistence failures."""


class VersionError(CheckpointError):
    """Manifest format version not supported."""


class ManifestError(CheckpointError):
    """Offset table inconsistent with itself or the blob."""


class ShapeError(CheckpointError):
    """Tensor shapes disagree with the model config."""


class TruncatedError(CheckpointError):
    """Blob shorter than the manifest promises."""


def _manifest_path(prefix) -> Path:
    prefix = str(prefix)
    if prefix.endswith(".manifest.json"):
        return Path(prefix)
    return Path(prefix + ".manifest.json")


def _blob_path(manifest_path: Path) -> Path:
    return manifest_path.with_name(manifest_path.name.replace(".manifest.json", ".tensors.bin"))


def save_checkpoint(params: Parameters, prefix, step: int = 0,
                    opt_state=None, merge_spec: dict | None = None) -> Path:
    """Write manifest + blob atomically; returns the manifest path.

    Tensors persist as little-endian float32 regardless of runtime dtype.
    """
    manifest_path = _manifest_path(prefix)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)

    named: list[tuple[str, np.ndarray]] = list(params.tensors.items())
    if opt_state is not None:
        for name, t in opt_state.m.items():
            named.append((f"adam.m.{name}", t))
        for name, t in opt_state.v.items():
            named.append((f"adam.v.{name}", t))

    entries = []
    offset = 0
    blobs = []
    for name, tensor in named:
        data = np.ascontiguousarray(tensor, dtype="<f4")
        entries.append({"name": name, "shape": list(tensor.shape),
                        "offset": offset, "nbytes": data.nbytes})
        blobs.append(data.tobytes())
        offset += data.nbytes

    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": params.config.to_dict(),
        "step": int(step),
        "has_optimizer_state": opt_state is not None,
        "total_bytes": offset,
        "tensors": entries,
    }
    if opt_state is not None:
        manifest["optimizer_t"] = int(opt_state.t)
    if merge_spec is not None:
        manifest["merge_spec"] = merge_spec

    blob_path = _blob_path(manifest_path)
    tmp_blob = blob_path.with_suffix(".bin.tmp")
    with open(tmp_blob, "wb") as fh:
        fh.write(b"".join(blobs))
    os.replace(tmp_blob, blob_path)
    tmp_manifest = manifest_path.with_suffix(".json.tmp")
    with open(tmp_manifest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    os.replace(tmp_manifest, manifest_path)
    return manifest_path


def read_manifest(prefix) -> dict:
    manifest_path = _manifest_path(prefix)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest inconsistent: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint format version "
                           f"{manifest.get('format_version')!r}")
    return manifest


def load_checkpoint(prefix, *, want_optimizer: bool = False):
    """Read a checkpoint; returns (Parameters, step) or (.., opt arrays).

    Raises distinct errors for version mismatch, inconsistent offset
    tables, truncated blobs, and shape mismatches.
    """
    manifest_path = _manifest_path(prefix)
    manifest = read_manifest(manifest_path)
    config = ModelConfig.from_dict(manifest["model_config"])

    expected = 0
    for entry in manifest["tensors"]:
        if entry["offset"] != expected:
            raise ManifestError("manifest inconsistent: offsets are not "
                                "ascending and contiguous")
        nbytes = int(np.prod(entry["shape"], dtype=np.int64)) * 4
        if nbytes != entry["nbytes"]:
            raise ManifestError("manifest inconsistent: nbytes does not match shape")
        expected += entry["nbytes"]
    if expected != manifest["total_bytes"]:
        raise ManifestError("manifest inconsistent: total_bytes mismatch")

    blob_path = _blob_path(manifest_path)
    try:
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read blob {blob_path}: {exc}") from exc
    if len(blob) < expected:
        raise TruncatedError(f"blob truncated: {len(blob)} bytes, "
                             f"manifest promises {expected}")

    from .model import parameter_shapes  # local import to avoid cycle at module load
    want_shapes = parameter_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        raw = np.frombuffer(blob, dtype="<f4", count=entry["nbytes"] // 4,
                            offset=entry["offset"])
        arr = raw.reshape(entry["shape"]).copy()
        name = entry["name"]
        if name.startswith("adam.m."):
            adam_m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v."):]] = arr
        else:
            if name not in want_shapes:
                raise ShapeError(f"unexpected tensor {name!r} for this config")
            if tuple(arr.shape) != want_shapes[name]:
                raise ShapeError(f"tensor {name!r} has shape {arr.shape}, "
                                 f"config wants {want_shapes[name]}")
            tensors[name] = arr
    missing = set(want_shapes) - set(tensors)
    if missing:
        raise ShapeError(f"checkpoint is missing tensors: {sorted(missing)}")

    params = Parameters(config, {name: tensors[name] for name in want_shapes})
    step = int(manifest["step"])
    if want_optimizer:
        opt = None
        if manifest.get("has_optimizer_state"):
            opt = (adam_m, adam_v, int(manifest.get("optimizer_t", 0)))
        return params, step, opt
    return params, step
