"""Model checkpoints: one JSON header line, then float64 little-endian
parameter arrays in the model's fixed parameter order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .base import ArchConfig
from .neural import NeuralModel
from .tabular import TabularModel

FORMAT_VERSION = 1


def _header(model) -> dict:
    h = {"format_version": FORMAT_VERSION, "kind": model.kind, "role": model.role,
         "shapes": [list(p.shape) for p in model.params()]}
    if model.kind == "neural":
        h |= {"src_vocab": model.src_vocab, "tgt_vocab": model.tgt_vocab, "arch": model.arch.to_dict()}
    else:
        h |= {"src_vocab": model.src_vocab, "tgt_vocab": model.tgt_vocab,
              "max_len": model.max_len, "max_src_len": model.max_src_len}
    return h


def save_model(model, path) -> None:
    flat = model.get_flat_params().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(json.dumps(_header(model), sort_keys=True).encode("utf-8") + b"\n")
        fh.write(flat.tobytes())


def load_model(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    flat = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if header["kind"] == "neural":
        model = NeuralModel(header["role"], header["src_vocab"], header["tgt_vocab"],
                            ArchConfig(**header["arch"]))
    elif header["kind"] == "tabular":
        model = TabularModel(header["role"], header["src_vocab"], header["tgt_vocab"],
                             header["max_len"], header["max_src_len"])
    else:
        raise ParseError(f"{path}: unknown model kind {header['kind']!r}")
    if [list(p.shape) for p in model.params()] != header["shapes"]:
        raise ParseError(f"{path}: parameter shapes do not match the header")
    model.set_flat_params(flat)
    return model
