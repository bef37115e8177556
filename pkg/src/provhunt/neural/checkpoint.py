"""Portable checkpoint format.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"PHCK"
    offset 4   uint32    format version (1)
    offset 8   uint32    header length H in bytes
    offset 12  H bytes   UTF-8 JSON header, keys sorted:
                         version, d, vocab_digest, layers {text, gin, fusion},
                         model_config, tokenizer {max_len, vocab},
                         params [{name, shape}, ...], meta
    then       for each entry of ``params`` in order: prod(shape) float32
               values, row-major (C order)

Writing the same parameters twice produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from provhunt.errors import SchemaError
from provhunt.neural.model import GraphTextModel, ModelConfig
from provhunt.neural.tokenizer import Tokenizer

MAGIC = b"PHCK"
VERSION = 1


def checkpoint_bytes(model: GraphTextModel, meta: dict | None = None) -> bytes:
    state = model.state_dict()
    header = {
        "version": VERSION,
        "d": model.cfg.d,
        "vocab_digest": model.tokenizer.digest(),
        "layers": {"text": model.cfg.text_layers, "gin": model.cfg.gin_layers, "fusion": model.cfg.fusion_layers},
        "model_config": model.cfg.to_dict(),
        "tokenizer": {"max_len": model.tokenizer.max_len, "vocab": model.tokenizer.vocab},
        "params": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, ensure_ascii=True, separators=(",", ":")).encode("ascii")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    for tensor in state.values():
        arr = tensor.detach().cpu().to(torch.float32).contiguous().numpy()
        parts.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    return b"".join(parts)


def save_checkpoint(path, model: GraphTextModel, meta: dict | None = None) -> bytes:
    data = checkpoint_bytes(model, meta)
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return data


def read_header(data: bytes) -> tuple[dict, int]:
    if data[:4] != MAGIC:
        raise SchemaError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise SchemaError(f"unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + hlen].decode("ascii"))
    return header, 12 + hlen


def load_checkpoint(path) -> tuple[GraphTextModel, dict]:
    data = Path(path).read_bytes()
    header, offset = read_header(data)
    tok = Tokenizer(header["tokenizer"]["vocab"], max_len=header["tokenizer"]["max_len"])
    if tok.digest() != header["vocab_digest"]:
        raise SchemaError("vocabulary digest mismatch")
    model = GraphTextModel(tok, ModelConfig(**header["model_config"]))
    state = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += 4 * n
    if offset != len(data):
        raise SchemaError("checkpoint has trailing bytes")
    model.load_state_dict(state)
    model.eval()
    return model, header.get("meta", {})
