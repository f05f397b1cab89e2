"""Attention encoder-decoder (bidirectional GRU encoder, additive attention,
GRU decoder) behind the :class:`CondSeqModel` interface."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from ..corpus import BOS, EOS, PAD, pad_sequences
from ..errors import ContractError
from .base import ArchConfig, CondSeqModel

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


class AttnEncoderDecoder(nn.Module):
    def __init__(self, src_vocab: int, tgt_vocab: int, arch: ArchConfig):
        super().__init__()
        e, h = arch.embed_dim, arch.hidden_dim
        self.src_emb = nn.Embedding(src_vocab, e)
        self.tgt_emb = nn.Embedding(tgt_vocab, e)
        self.encoder = nn.GRU(e, h, batch_first=True, bidirectional=True)
        self.init_proj = nn.Linear(2 * h, h)
        self.att_keys = nn.Linear(2 * h, h, bias=False)
        self.att_query = nn.Linear(h, h)
        self.att_v = nn.Linear(h, 1, bias=False)
        self.cell = nn.GRUCell(e + 2 * h, h)
        self.readout = nn.Linear(h + 2 * h + e, e)
        self.out = nn.Linear(e, tgt_vocab)
        invalid = torch.zeros(tgt_vocab, dtype=torch.bool)
        invalid[[PAD, BOS]] = True
        self.register_buffer("invalid", invalid, persistent=False)

    def encode(self, src: torch.Tensor, lens: torch.Tensor):
        emb = self.src_emb(src)
        packed = pack_padded_sequence(emb, lens, batch_first=True, enforce_sorted=False)
        out, _ = self.encoder(packed)
        enc, _ = pad_packed_sequence(out, batch_first=True, total_length=src.shape[1])
        mask = torch.arange(src.shape[1])[None, :] < lens[:, None]
        mean = (enc * mask[..., None]).sum(1) / lens[:, None].to(enc.dtype)
        return enc, self.att_keys(enc), mask, torch.tanh(self.init_proj(mean))

    def step(self, prev, s, enc, keys, mask):
        """One decoder step; returns next-token log-probs and the new state."""
        e = self.tgt_emb(prev)
        scores = self.att_v(torch.tanh(keys + self.att_query(s)[:, None, :])).squeeze(-1)
        attn = torch.softmax(scores.masked_fill(~mask, float("-inf")), dim=1)
        ctx = torch.bmm(attn[:, None, :], enc).squeeze(1)
        s = self.cell(torch.cat([e, ctx], 1), s)
        r = torch.tanh(self.readout(torch.cat([s, ctx, e], 1)))
        logits = self.out(r).masked_fill(self.invalid, float("-inf"))
        return torch.log_softmax(logits, dim=-1), s

    def step_log_probs(self, src, src_lens, tgt_in, tgt_out):
        """Teacher-forced log-probabilities of ``tgt_out``, shape (batch, steps)."""
        enc, keys, mask, s = self.encode(src, src_lens)
        cols = []
        for t in range(tgt_in.shape[1]):
            logp, s = self.step(tgt_in[:, t], s, enc, keys, mask)
            cols.append(logp.gather(1, tgt_out[:, t:t + 1]).squeeze(1))
        return torch.stack(cols, 1)


class NeuralModel(CondSeqModel):
    kind = "neural"
    eos_id = EOS

    def __init__(self, role: str, src_vocab: int, tgt_vocab: int, arch: ArchConfig | None = None,
                 seed: int = 0):
        super().__init__(role)
        self.arch = arch or ArchConfig()
        self.src_vocab, self.tgt_vocab = src_vocab, tgt_vocab
        self.dtype = _DTYPES[self.arch.precision]
        gen = torch.Generator().manual_seed(int(seed))
        self.net = AttnEncoderDecoder(src_vocab, tgt_vocab, self.arch).to(self.dtype)
        with torch.no_grad():
            for p in self.net.parameters():
                p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64).to(self.dtype)
                        * self.arch.init_std)

    def max_target_len(self, src) -> int:
        n = len(src.tokens) if hasattr(src, "tokens") else len(src)
        return self.arch.max_len_ratio * n + self.arch.max_len_offset

    def params(self) -> list:
        # raw storage, so optimizers can update in place outside autograd
        return [p.data for p in self.net.parameters()]

    # -- batching ---------------------------------------------------------------
    def _tensors(self, srcs, tgts):
        src_toks = [self.src_tokens(s) for s in srcs]
        tgt_toks = [self.tgt_tokens(t) for t in tgts]
        for s, t in zip(src_toks, tgt_toks):
            if not s:
                raise ContractError("empty source sequence")
            if any(not 0 <= i < self.src_vocab for i in s) or any(not 0 <= i < self.tgt_vocab for i in t):
                raise ContractError("token id outside the model vocabulary")
        src, src_lens = pad_sequences(src_toks)
        tgt_in, _ = pad_sequences([(BOS,) + t for t in tgt_toks])
        tgt_out, _ = pad_sequences([t + (EOS,) for t in tgt_toks])
        steps = np.arange(tgt_in.shape[1])[None, :]
        tlen = np.array([len(t) for t in tgt_toks])[:, None]
        max_lens = np.array([self.max_target_len(s) for s in src_toks])[:, None]
        if (tlen > max_lens).any():
            raise ContractError("target longer than the model's maximum decode length")
        # the end step is free (probability one) once the length cap is reached
        valid = (steps < tlen) | ((steps == tlen) & (tlen < max_lens))
        return (torch.from_numpy(src), torch.from_numpy(src_lens), torch.from_numpy(tgt_in),
                torch.from_numpy(tgt_out), torch.from_numpy(valid))

    def step_log_probs(self, srcs, tgts):
        """Per-step log-probs (batch, steps) with invalid steps zeroed; differentiable."""
        src, src_lens, tgt_in, tgt_out, valid = self._tensors(srcs, tgts)
        lp = self.net.step_log_probs(src, src_lens, tgt_in, tgt_out)
        return torch.where(valid, lp, torch.zeros((), dtype=lp.dtype))

    def sequence_log_probs(self, srcs, tgts) -> torch.Tensor:
        return self.step_log_probs(srcs, tgts).sum(1)

    def log_probs(self, srcs, tgts) -> np.ndarray:
        with torch.no_grad():
            return self.sequence_log_probs(srcs, tgts).double().numpy()

    def token_log_probs(self, src, tgt) -> np.ndarray:
        with torch.no_grad():
            lp = self.step_log_probs([src], [tgt])[0].double().numpy()
        return lp[:len(self.tgt_tokens(tgt)) + 1]

    def weighted_grad(self, srcs, tgts, weights):
        self.net.zero_grad(set_to_none=False)
        w = torch.as_tensor(np.asarray(weights, dtype=np.float64), dtype=self.dtype)
        objective = (w * self.sequence_log_probs(srcs, tgts)).sum()
        objective.backward()
        return float(objective.detach()), [p.grad for p in self.net.parameters()]

    # -- stepper --------------------------------------------------------------------
    def start(self, srcs):
        src_toks = [self.src_tokens(s) for s in srcs]
        src, lens = pad_sequences(src_toks)
        with torch.no_grad():
            enc, keys, mask, s = self.net.encode(torch.from_numpy(src), torch.from_numpy(lens))
        return {"enc": enc, "keys": keys, "mask": mask, "s": s,
                "prev": torch.full((len(srcs),), BOS, dtype=torch.long)}

    def step(self, state):
        with torch.no_grad():
            logp, s = self.net.step(state["prev"], state["s"], state["enc"], state["keys"], state["mask"])
        state = dict(state, next_s=s)
        return logp.double().numpy(), state

    def feed(self, state, tokens):
        state = dict(state, s=state["next_s"], prev=torch.as_tensor(np.asarray(tokens), dtype=torch.long))
        del state["next_s"]
        return state

    def reorder(self, state, rows):
        idx = torch.as_tensor(np.asarray(rows), dtype=torch.long)
        return {k: v.index_select(0, idx) for k, v in state.items()}
