"""Single-file checkpoints (``.npz``) for the transfer model and selector nets.

The archive holds every parameter with its Adam state plus a JSON metadata
record: format version, package version, config echo, vocabulary, model
shapes and a SHA-256 over all stored tensors.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dam import EMBEDDING, DamConfig
from .data import Vocabulary
from .numerics import Param, ParamStore
from .selector import SelectorNets
from .transfer import TransferModel

FORMAT = "rtl-checkpoint/1"


class CheckpointError(ValueError):
    pass


def _flatten(prefix: str, store: ParamStore) -> dict[str, np.ndarray]:
    out = {}
    for name, p in store.entries.items():
        base = f"{prefix}/{name}"
        out[f"{base}/value"] = p.value
        out[f"{base}/adam_m"] = p.adam_m
        out[f"{base}/adam_v"] = p.adam_v
        out[f"{base}/step"] = np.array(p.step, dtype=np.int64)
    return out


def _digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for key in sorted(arrays):
        a = np.ascontiguousarray(arrays[key])
        h.update(key.encode())
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    model: TransferModel,
    vocab: Vocabulary,
    nets: SelectorNets | None = None,
    config: Sequence[str] = (),
    extra: dict | None = None,
) -> Path:
    arrays = _flatten("model", model.params)
    if nets is not None:
        arrays.update(_flatten("selector", nets.params))
    meta = {
        "format": FORMAT,
        "version": __version__,
        "config": list(config),
        "vocab": vocab.itos,
        "dam": {"hidden_size": model.cfg.hidden_size, "embedding_dim": model.cfg.embedding_dim},
        "trainable_embeddings": model.trainable_embeddings,
        "clip_norm": model.clip_norm,
        "selector": None if nets is None else {"state_dim": nets.state_dim, "hidden": nets.hidden},
        "shapes": {k: list(v.shape) for k, v in arrays.items()},
        "sha256": _digest(arrays),
        "extra": extra or {},
    }
    path = Path(path)
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    path.write_bytes(buf.getvalue())
    return path


def _unflatten(prefix: str, arrays: dict[str, np.ndarray]) -> ParamStore:
    store = ParamStore()
    names = sorted({k[len(prefix) + 1 :].rsplit("/", 1)[0] for k in arrays if k.startswith(prefix + "/")})
    for name in names:
        base = f"{prefix}/{name}"
        value = arrays[f"{base}/value"].astype(np.float64)
        store.entries[name] = Param(
            value=value,
            grad=np.zeros_like(value),
            adam_m=arrays[f"{base}/adam_m"].astype(np.float64),
            adam_v=arrays[f"{base}/adam_v"].astype(np.float64),
            step=int(arrays[f"{base}/step"]),
        )
    return store


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None):
    """Returns ``(model, nets_or_None, vocab, meta)``.

    If ``vocab`` is given it must match the stored vocabulary size.
    """
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: missing metadata")
    try:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata") from exc
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    if _digest(arrays) != meta["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    stored_vocab = Vocabulary(meta["vocab"][2:])
    if stored_vocab.itos != meta["vocab"]:
        raise CheckpointError(f"{path}: malformed vocabulary")
    if vocab is not None and len(vocab) != len(stored_vocab):
        raise CheckpointError(
            f"{path}: vocabulary size {len(stored_vocab)} does not match expected {len(vocab)}"
        )
    params = _unflatten("model", arrays)
    cfg = DamConfig(**meta["dam"])
    if params[EMBEDDING].shape != (len(stored_vocab), cfg.embedding_dim):
        raise CheckpointError(f"{path}: embedding shape does not match the vocabulary")
    model = TransferModel(params, cfg, meta["trainable_embeddings"], meta["clip_norm"])
    nets = None
    if meta["selector"] is not None:
        sel = meta["selector"]
        nets = SelectorNets(sel["state_dim"], sel["hidden"], np.random.default_rng(0), meta["clip_norm"])
        nets.params = _unflatten("selector", arrays)
    return model, nets, stored_vocab, meta
