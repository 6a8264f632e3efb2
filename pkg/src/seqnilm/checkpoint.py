"""JSON manifest + flat little-endian float32 blob, for checkpoints and window caches."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .blocks import AttentionParams, BlockParams, PyramidParams, branch_widths, sinusoidal_pe
from .errors import CheckpointError
from .model import Model, ModelConfig, NormStats
from .tensor import Tensor

FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


def blob_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def write_arrays(manifest_path, arrays: Dict[str, np.ndarray], header: dict) -> Tuple[Path, Path]:
    """Write ``arrays`` back to back as float32 and index them in the manifest."""
    manifest_path = Path(manifest_path)
    index, offset, chunks = {}, 0, []
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=_LE_F32).tobytes()
        index[name] = {"shape": list(np.shape(arr)), "offset": offset, "length": int(np.size(arr))}
        offset += len(raw)
        chunks.append(raw)
    bpath = blob_path(manifest_path)
    tmp = bpath.with_suffix(".bin.tmp")
    with open(tmp, "wb") as fh:
        for c in chunks:
            fh.write(c)
    os.replace(tmp, bpath)
    doc = {"format_version": FORMAT_VERSION, **header, "blob": bpath.name, "blob_bytes": offset,
           "parameters": index}
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path, bpath


def read_arrays(manifest_path) -> Tuple[dict, Dict[str, np.ndarray]]:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read manifest {manifest_path}: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: format_version {doc.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    bpath = manifest_path.parent / doc.get("blob", blob_path(manifest_path).name)
    try:
        raw = bpath.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read blob {bpath}: {exc}") from None
    if len(raw) != doc.get("blob_bytes", len(raw)):
        raise CheckpointError(f"{bpath}: blob is {len(raw)} bytes, manifest says {doc['blob_bytes']}")
    arrays = {}
    for name, ent in doc["parameters"].items():
        start, count = ent["offset"], ent["length"]
        end = start + 4 * count
        if end > len(raw):
            raise CheckpointError(f"{bpath}: truncated while reading {name}")
        arr = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=start)
        arrays[name] = arr.astype(np.float32).reshape(ent["shape"])
    return doc, arrays


def save_checkpoint(model: Model, path, extra: dict | None = None) -> Tuple[Path, Path]:
    """Save to ``path`` (JSON manifest) and its ``.bin`` sibling."""
    header = {
        "model_config": model.config.to_dict(),
        "norm_stats": model.norm.to_dict() if model.norm else None,
        "extra": extra or {},
    }
    arrays = {name: p.data for name, p in model.named_parameters()}
    return write_arrays(path, arrays, header)


def _p(arrays, name):
    if name not in arrays:
        raise CheckpointError(f"checkpoint lacks parameter {name}")
    return Tensor(arrays[name], requires_grad=True, dtype=np.float32)


def load_checkpoint(path) -> Model:
    doc, arrays = read_arrays(path)
    try:
        cfg = ModelConfig.from_dict(doc["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad model_config: {exc}") from None
    blocks = []
    for i in range(cfg.n_layers):
        g = lambda n: _p(arrays, f"blocks.{i}.{n}")  # noqa: E731
        attn = AttentionParams(*(g(f"attn.{n}") for n in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o")),
                               n_heads=cfg.n_heads)
        blocks.append(BlockParams(attn, *(g(n) for n in ("ln1_g", "ln1_b", "ln2_g", "ln2_b",
                                                         "ff_w1", "ff_b1", "ff_w2", "ff_b2"))))
    n_scales = len(cfg.scales)
    pyramid = PyramidParams(
        proj_w=[_p(arrays, f"pyramid.proj_w.{i}") for i in range(n_scales)],
        proj_b=[_p(arrays, f"pyramid.proj_b.{i}") for i in range(n_scales)],
        fuse_w=_p(arrays, "pyramid.fuse_w"), fuse_b=_p(arrays, "pyramid.fuse_b"),
        scales=tuple(cfg.scales),
    )
    widths = [w.shape[1] for w in pyramid.proj_w]
    if widths != branch_widths(cfg.d_model, n_scales):
        raise CheckpointError(f"{path}: pyramid branch widths {widths} do not match the config")
    norm = doc.get("norm_stats")
    model = Model(
        config=cfg, embed_w=_p(arrays, "embed_w"), embed_b=_p(arrays, "embed_b"), blocks=blocks,
        pyramid=pyramid, power_w=_p(arrays, "power_w"), power_b=_p(arrays, "power_b"),
        state_w=_p(arrays, "state_w"), state_b=_p(arrays, "state_b"),
        positional=sinusoidal_pe(cfg.window_len, cfg.d_model, np.float32),
        norm=NormStats.from_dict(norm) if norm else None,
    )
    if len(list(model.named_parameters())) != len(arrays):
        raise CheckpointError(f"{path}: parameter set does not match the config")
    return model


def read_checkpoint_extra(path) -> dict:
    return json.loads(Path(path).read_text()).get("extra", {})
