"""Shared interface of conditional sequence models p(target | source)."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import TokenSeq
from ..errors import ContractError

ROLES = ("z|x", "y|z", "z|y", "x|z")


def parse_role(role: str) -> tuple[str, str]:
    """Return ``(src_lang, tgt_lang)`` for a role such as ``"z|x"``."""
    try:
        tgt, src = role.split("|")
    except ValueError:
        raise ContractError(f"malformed role {role!r}") from None
    tgt, src = tgt.upper(), src.upper()
    if tgt == src or {tgt, src} - {"X", "Y", "Z"}:
        raise ContractError(f"malformed role {role!r}")
    return src, tgt


@dataclass(frozen=True)
class ArchConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    init_std: float = 0.01
    max_len_ratio: int = 2
    max_len_offset: int = 5
    precision: str = "float32"

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ContractError("embed_dim and hidden_dim must be >= 1")
        if not self.init_std > 0:
            raise ContractError("init_std must be > 0")
        if self.precision not in ("float32", "float64"):
            raise ContractError("precision must be 'float32' or 'float64'")

    @classmethod
    def paper(cls, hidden_dim: int = 512) -> "ArchConfig":
        return cls(embed_dim=256, hidden_dim=hidden_dim)

    def to_dict(self) -> dict:
        return asdict(self)


class CondSeqModel:
    """Base class; subclasses provide scoring, a decoding stepper and gradients.

    Stepper protocol used by :mod:`tanmt.seqmodel.decoding`::

        state = model.start(srcs)           # one row per source
        logp, state = model.step(state)     # (rows, n_outputs) log-probabilities
        state = model.feed(state, tokens)   # commit the chosen tokens
        state = model.reorder(state, rows)  # gather rows (beam bookkeeping)
    """

    kind = "abstract"
    eos_id: int

    def __init__(self, role: str):
        self.role = role
        self.src_lang, self.tgt_lang = parse_role(role)

    # -- helpers ---------------------------------------------------------
    def _seq(self, seq, lang: str) -> tuple:
        if isinstance(seq, TokenSeq):
            if seq.lang != lang:
                raise ContractError(f"model {self.role} expects {lang} here, got {seq.lang}")
            return seq.tokens
        return tuple(int(t) for t in seq)

    def src_tokens(self, src) -> tuple:
        return self._seq(src, self.src_lang)

    def tgt_tokens(self, tgt) -> tuple:
        return self._seq(tgt, self.tgt_lang)

    def clone(self):
        return copy.deepcopy(self)

    # -- scoring -----------------------------------------------------------
    def log_probs(self, srcs, tgts) -> np.ndarray:
        raise NotImplementedError

    def token_log_probs(self, src, tgt) -> np.ndarray:
        """Per-step log-probabilities, one per target token plus the end step."""
        raise NotImplementedError

    def log_prob(self, src, tgt) -> float:
        steps = self.token_log_probs(src, tgt)
        total = 0.0
        for v in steps:
            total += float(v)
        return total

    def max_target_len(self, src) -> int:
        raise NotImplementedError

    # -- parameters and gradients -------------------------------------------
    def params(self) -> list:
        raise NotImplementedError

    def weighted_grad(self, srcs, tgts, weights):
        """Value and gradient of ``sum_i w_i log p(tgt_i | src_i)``.

        Returns ``(value, grads)`` with ``grads`` aligned to :meth:`params`.
        """
        raise NotImplementedError

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([np.asarray(_to_numpy(p), dtype=np.float64).ravel() for p in self.params()])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for p in self.params():
            n = int(np.prod(p.shape))
            _assign(p, flat[offset:offset + n].reshape(tuple(p.shape)))
            offset += n
        if offset != flat.size:
            raise ContractError("flat parameter vector has the wrong length")

    def grad_log_prob(self, src, tgt) -> np.ndarray:
        _, grads = self.weighted_grad([src], [tgt], [1.0])
        return np.concatenate([np.asarray(_to_numpy(g), dtype=np.float64).ravel() for g in grads])

    # -- decoding -------------------------------------------------------------
    def sample(self, src, seed: int):
        from .decoding import sample_batch

        seqs, lps = sample_batch(self, [src], np.random.default_rng(seed))
        return TokenSeq(seqs[0], self.tgt_lang), float(lps[0])

    def beam_decode(self, src, width: int = 8, alpha: float = 1.0) -> TokenSeq:
        from .decoding import beam_search

        return TokenSeq(beam_search(self, [src], width, alpha)[0][0], self.tgt_lang)


def _to_numpy(x):
    if isinstance(x, np.ndarray):
        return x
    return x.detach().cpu().numpy()


def _assign(p, values: np.ndarray) -> None:
    if isinstance(p, np.ndarray):
        p[...] = values
    else:
        import torch

        with torch.no_grad():
            p.copy_(torch.from_numpy(np.array(values, copy=True)).to(p.dtype))
