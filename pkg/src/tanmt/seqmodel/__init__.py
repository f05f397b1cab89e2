"""Conditional sequence models: tabular (enumerable oracle) and neural."""

from .base import ROLES, ArchConfig, CondSeqModel, parse_role
from .checkpoint import load_model, save_model
from .decoding import beam_search, greedy_decode, sample_batch
from .neural import NeuralModel
from .tabular import TabularModel, all_sequences, n_sequences, seq_index


def init_model(kind: str, role: str, arch: ArchConfig | None = None, seed: int = 0, *,
               src_vocab: int, tgt_vocab: int, max_len: int = 3, max_src_len: int | None = None):
    """Create a model with N(0, init_std^2) parameters, deterministic per seed."""
    import numpy as np

    if kind == "neural":
        return NeuralModel(role, src_vocab, tgt_vocab, arch, seed)
    if kind == "tabular":
        arch = arch or ArchConfig()
        return TabularModel.random(role, src_vocab, tgt_vocab, max_len, max_src_len,
                                   np.random.default_rng(seed), scale=arch.init_std)
    raise ValueError(f"unknown model kind {kind!r}")


__all__ = [
    "ROLES", "ArchConfig", "CondSeqModel", "NeuralModel", "TabularModel", "all_sequences",
    "beam_search", "greedy_decode", "init_model", "load_model", "n_sequences", "parse_role",
    "sample_batch", "save_model", "seq_index",
]
