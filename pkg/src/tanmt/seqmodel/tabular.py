"""Exactly enumerable conditional sequence model.

One softmax over ``V + 1`` outcomes (``V`` tokens plus end-of-sequence) per
context, where a context is a (source sequence, target prefix) pair.  Source
and target sequences are indexed by their rank in shortlex order, which makes
every distribution a flat array that can be enumerated, summed and compared
exactly.  A prefix of length ``max_len`` can only be followed by the end
step, which then has probability one.

Target tokens are ``0 .. V-1``; the end symbol is ``V`` (``eos_id``).
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..corpus import TokenSeq
from ..errors import CapacityError, ContractError
from .base import CondSeqModel

MAX_TABLE_ENTRIES = 50_000_000


def n_sequences(v: int, max_len: int) -> int:
    """Number of sequences of length ``0 .. max_len`` over ``v`` symbols."""
    return sum(v ** k for k in range(max_len + 1))


def level_offset(v: int, length: int) -> int:
    return n_sequences(v, length - 1) if length > 0 else 0


def seq_index(seq, v: int) -> int:
    value = 0
    for t in seq:
        value = value * v + int(t)
    return level_offset(v, len(seq)) + value


def all_sequences(v: int, max_len: int) -> list[tuple]:
    out = [()]
    level = [()]
    for _ in range(max_len):
        level = [s + (t,) for s in level for t in range(v)]
        out.extend(level)
    return out


class TabularModel(CondSeqModel):
    kind = "tabular"
    max_vocab = 16
    max_length = 4

    def __init__(self, role: str, src_vocab: int, tgt_vocab: int, max_len: int,
                 max_src_len: int | None = None, logits=None):
        super().__init__(role)
        max_src_len = max_len if max_src_len is None else max_src_len
        if max(src_vocab, tgt_vocab) > self.max_vocab or max(max_len, max_src_len) > self.max_length:
            raise CapacityError(
                f"tabular models are capped at vocab {self.max_vocab} and length {self.max_length}")
        if min(src_vocab, tgt_vocab) < 1 or max_len < 1 or max_src_len < 0:
            raise ContractError("vocabularies need >= 1 symbol and max_len >= 1")
        self.src_vocab, self.tgt_vocab = src_vocab, tgt_vocab
        self.max_len, self.max_src_len = max_len, max_src_len
        self.eos_id = tgt_vocab
        self.n_src = n_sequences(src_vocab, max_src_len)
        self.n_ctx = n_sequences(tgt_vocab, max_len - 1)
        shape = (self.n_src, self.n_ctx, tgt_vocab + 1)
        if np.prod(shape) > MAX_TABLE_ENTRIES:
            raise CapacityError(f"tabular parameter table {shape} is too large")
        self.logits = np.zeros(shape) if logits is None else np.array(logits, dtype=np.float64)
        if self.logits.shape != shape:
            raise ContractError(f"logits must have shape {shape}")

    @classmethod
    def random(cls, role, src_vocab, tgt_vocab, max_len, max_src_len=None, rng=None, scale=1.0):
        m = cls(role, src_vocab, tgt_vocab, max_len, max_src_len)
        rng = np.random.default_rng() if rng is None else rng
        m.logits = rng.normal(0.0, scale, m.logits.shape)
        return m

    def set_distribution(self, src, probs) -> None:
        """Set the contexts of ``src`` so that p(. | src) equals ``probs``.

        ``probs`` is indexed like :meth:`distribution`.  Contexts that can no
        longer be reached get uniform rows.
        """
        v, n = self.tgt_vocab, self.max_len
        q = np.asarray(probs, dtype=np.float64)
        if q.shape != (n_sequences(v, n),):
            raise ContractError("distribution has the wrong length")
        s = self.src_index(src)
        mass = q[level_offset(v, n):].copy()
        for length in range(n - 1, -1, -1):
            off = level_offset(v, length)
            complete = q[off:off + v ** length]
            children = mass.reshape(v ** length, v)
            total = complete + children.sum(axis=1)
            rows = np.concatenate([children, complete[:, None]], axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                logp = np.where(total[:, None] > 0, np.log(rows) - np.log(total)[:, None], 0.0)
            self.logits[s, off:off + v ** length] = logp
            mass = total

    # -- indexing ---------------------------------------------------------------
    def src_index(self, src) -> int:
        toks = self.src_tokens(src)
        if len(toks) > self.max_src_len or any(not 0 <= t < self.src_vocab for t in toks):
            raise ContractError(f"source {toks} outside the model's enumerable domain")
        return seq_index(toks, self.src_vocab)

    def _check_tgt(self, tgt) -> tuple:
        toks = self.tgt_tokens(tgt)
        if len(toks) > self.max_len or any(not 0 <= t < self.tgt_vocab for t in toks):
            raise ContractError(f"target {toks} outside the model's enumerable domain")
        return toks

    def log_softmax(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.logits - logsumexp(self.logits, axis=-1, keepdims=True)

    def _contexts(self, toks) -> list[int]:
        return [seq_index(toks[:t], self.tgt_vocab) for t in range(len(toks))]

    # -- scoring -----------------------------------------------------------------
    def token_log_probs(self, src, tgt) -> np.ndarray:
        s, toks = self.src_index(src), self._check_tgt(tgt)
        lp = self.log_softmax()[s]
        steps = [lp[c, t] for c, t in zip(self._contexts(toks), toks)]
        steps.append(lp[seq_index(toks, self.tgt_vocab), self.eos_id] if len(toks) < self.max_len else 0.0)
        return np.array(steps, dtype=np.float64)

    def log_probs(self, srcs, tgts) -> np.ndarray:
        return np.array([self.log_prob(s, t) for s, t in zip(srcs, tgts)])

    def log_prob_all_sources(self, tgt) -> np.ndarray:
        """log p(tgt | s) for every source class s, in source-index order."""
        toks = self._check_tgt(tgt)
        lp = self.log_softmax()
        total = np.zeros(self.n_src)
        for c, t in zip(self._contexts(toks), toks):
            total = total + lp[:, c, t]
        if len(toks) < self.max_len:
            total = total + lp[:, seq_index(toks, self.tgt_vocab), self.eos_id]
        return total

    def log_distribution(self, src) -> np.ndarray:
        """log p(t | src) for all targets t of length 0..max_len, shortlex order."""
        v, n = self.tgt_vocab, self.max_len
        lp = self.log_softmax()[self.src_index(src)]
        out = np.empty(n_sequences(v, n))
        prefix = np.zeros(1)
        for length in range(n + 1):
            off = level_offset(v, length)
            if length == n:
                out[off:off + v ** length] = prefix
            else:
                ctx = lp[off:off + v ** length]
                out[off:off + v ** length] = prefix + ctx[:, v]
                prefix = (prefix[:, None] + ctx[:, :v]).reshape(-1)
        return out

    def distribution(self, src) -> np.ndarray:
        return np.exp(self.log_distribution(src))

    def enumerate_distribution(self, src, max_len: int | None = None) -> list[tuple[TokenSeq, float]]:
        if max_len is not None and max_len != self.max_len:
            raise CapacityError(f"model enumerates exactly up to length {self.max_len}")
        probs = self.distribution(src)
        return [(TokenSeq(seq, self.tgt_lang), float(p))
                for seq, p in zip(all_sequences(self.tgt_vocab, self.max_len), probs) if p > 0.0]

    def max_target_len(self, src) -> int:
        return self.max_len

    # -- gradients -----------------------------------------------------------------
    def params(self) -> list:
        return [self.logits]

    def weighted_grad(self, srcs, tgts, weights):
        lp = self.log_softmax()
        probs = np.exp(lp)
        grad = np.zeros_like(self.logits)
        value = 0.0
        for src, tgt, w in zip(srcs, tgts, weights):
            if w == 0:
                continue
            s, toks = self.src_index(src), self._check_tgt(tgt)
            ctxs = self._contexts(toks)
            outcomes = list(toks)
            if len(toks) < self.max_len:
                ctxs.append(seq_index(toks, self.tgt_vocab))
                outcomes.append(self.eos_id)
            for c, t in zip(ctxs, outcomes):
                grad[s, c] -= w * probs[s, c]
                grad[s, c, t] += w
                value += w * lp[s, c, t]
        return value, [grad]

    # -- stepper -----------------------------------------------------------------------
    def start(self, srcs):
        n = len(srcs)
        return {"src": np.array([self.src_index(s) for s in srcs], dtype=np.int64),
                "rel": np.zeros(n, dtype=np.int64), "length": np.zeros(n, dtype=np.int64)}

    def step(self, state):
        v = self.tgt_vocab
        lp = self.log_softmax()
        length = state["length"]
        forced = length >= self.max_len
        offsets = np.array([level_offset(v, int(k)) for k in np.minimum(length, self.max_len - 1)])
        ctx = np.where(forced, 0, offsets + state["rel"])
        out = lp[state["src"], ctx].copy()
        out[forced] = -np.inf
        out[forced, self.eos_id] = 0.0
        return out, state

    def feed(self, state, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        grow = tokens != self.eos_id
        return {"src": state["src"],
                "rel": np.where(grow, state["rel"] * self.tgt_vocab + np.where(grow, tokens, 0), state["rel"]),
                "length": state["length"] + grow}

    def reorder(self, state, rows):
        return {k: v[rows] for k, v in state.items()}
