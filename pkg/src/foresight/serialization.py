"""Dataset files and binary model checkpoints.

Checkpoint layout (little-endian)::

    b"FAPC" | u16 version | u32 len | JSON header | u32 n_tensors |
    repeated: u16 name_len | name | u8 ndim | u32 * ndim shape | f64 * size data

The JSON header carries the model kind, its architecture config, the
vocabulary (captioner) and any fitted scalars (time standardisation).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .captioner import Seq2SeqConfig, Seq2SeqModel, Vocabulary
from .datagen import VideoRecord
from .predictor import PredictorConfig, PredictorModel

MAGIC = b"FAPC"
VERSION = 1


class CheckpointError(Exception):
    pass


# ---------------------------------------------------------------------------
# datasets


def write_jsonl(path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_videos(path, videos: Iterable[VideoRecord]) -> int:
    return write_jsonl(path, (v.to_dict() for v in videos))


def load_videos(path) -> list[VideoRecord]:
    return [VideoRecord.from_dict(d) for d in read_jsonl(path)]


# ---------------------------------------------------------------------------
# checkpoints


def _write_tensors(fh: BinaryIO, named: dict[str, np.ndarray]):
    fh.write(struct.pack("<I", len(named)))
    for name, arr in named.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def _read_tensors(fh: BinaryIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8").astype(np.float64)
        out[name] = data.reshape(shape)
    return out


def save_checkpoint(path, model) -> None:
    if isinstance(model, PredictorModel):
        header = {"kind": "predictor", "config": vars(model.cfg).copy(),
                  "feature_dims": list(model.feature_dims),
                  "time_mean": model.time_mean, "time_std": model.time_std,
                  "class_names": model.class_names}
    elif isinstance(model, Seq2SeqModel):
        header = {"kind": "captioner", "config": vars(model.cfg).copy(),
                  "vocab": model.vocab.itos if model.vocab is not None else None,
                  "vocab_max_size": model.vocab.max_size if model.vocab is not None else None}
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    named = {name: p.data for name, p in model.named_parameters().items()}
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        _write_tensors(fh, named)


def load_checkpoint(path):
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}") from e
    with fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != VERSION:
            raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        tensors = _read_tensors(fh)
    kind = header.get("kind")
    if kind == "predictor":
        model = PredictorModel(PredictorConfig(**header["config"]), tuple(header["feature_dims"]))
        model.time_mean = header["time_mean"]
        model.time_std = header["time_std"]
        model.class_names = header.get("class_names")
    elif kind == "captioner":
        vocab = None
        if header.get("vocab") is not None:
            vocab = Vocabulary(header["vocab"][4:], header["vocab_max_size"])
        model = Seq2SeqModel(Seq2SeqConfig(**header["config"]), vocab)
    else:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    params = model.named_parameters()
    if set(params) != set(tensors):
        raise CheckpointError(f"parameter names differ: {sorted(set(params) ^ set(tensors))}")
    for name, p in params.items():
        if p.shape != tensors[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {p.shape} vs {tensors[name].shape}")
        p.data[...] = tensors[name]
    return model


def peek_kind(path) -> str:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        _read_exact(fh, 2)
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        return json.loads(_read_exact(fh, hlen).decode("utf-8"))["kind"]


def ensure_parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p
