"""Batched ancestral sampling and beam search over any model stepper."""

from __future__ import annotations

import numpy as np


def _force_end(logp: np.ndarray, forced: np.ndarray, eos: int) -> None:
    if forced.any():
        logp[forced] = -np.inf
        logp[forced, eos] = 0.0


def sample_batch(model, srcs, rng):
    """Draw one target per source; returns ``(token tuples, log-probs)``.

    Generation is forced to end once a hypothesis reaches the model's
    maximum target length.
    """
    n = len(srcs)
    if n == 0:
        return [], np.zeros(0)
    eos = model.eos_id
    max_lens = np.array([model.max_target_len(s) for s in srcs])
    state = model.start(srcs)
    seqs = [[] for _ in range(n)]
    logps = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for t in range(int(max_lens.max()) + 1):
        logp, state = model.step(state)
        logp = np.asarray(logp, dtype=np.float64)
        _force_end(logp, t >= max_lens, eos)
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(n) * cdf[:, -1]
        tokens = np.minimum((cdf <= u[:, None]).sum(axis=1), logp.shape[1] - 1)
        # never land on a zero-probability outcome through rounding at the cdf edge
        bad = ~np.isfinite(logp[np.arange(n), tokens])
        for i in np.flatnonzero(bad):
            tokens[i] = int(np.flatnonzero(np.isfinite(logp[i]))[-1])
        for i in np.flatnonzero(alive):
            tok = int(tokens[i])
            logps[i] += logp[i, tok]
            if tok == eos:
                alive[i] = False
            else:
                seqs[i].append(tok)
        if not alive.any():
            break
        tokens[~alive] = eos
        state = model.feed(state, tokens)
    return [tuple(s) for s in seqs], logps


def beam_search(model, srcs, width: int = 8, alpha: float = 1.0):
    """Beam search for each source; returns a list of ``(tokens, log-prob)``.

    Finished hypotheses are ranked by ``log p / (len + 1) ** alpha`` where the
    ``+ 1`` counts the end step; ``alpha = 0`` ranks by raw log-probability.
    A source stops expanding once ``width`` hypotheses have finished.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    n = len(srcs)
    if n == 0:
        return []
    eos = model.eos_id
    w_ = width
    max_lens = np.array([model.max_target_len(s) for s in srcs])
    state = model.reorder(model.start(srcs), np.repeat(np.arange(n), w_))
    scores = np.full((n, w_), -np.inf)
    scores[:, 0] = 0.0
    hyps = [[()] * w_ for _ in range(n)]
    finished = [[] for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    for t in range(int(max_lens.max()) + 1):
        logp, state = model.step(state)
        logp = np.asarray(logp, dtype=np.float64).reshape(n, w_, -1)
        v = logp.shape[2]
        forced = t >= max_lens
        if forced.any():
            logp[forced] = -np.inf
            logp[forced, :, eos] = 0.0
        cand = (scores[:, :, None] + logp).reshape(n, -1)
        new_scores = np.full((n, w_), -np.inf)
        rows = np.repeat(np.arange(n)[:, None] * w_, w_, axis=1)
        tokens = np.full((n, w_), eos, dtype=np.int64)
        new_hyps = [[()] * w_ for _ in range(n)]
        for b in range(n):
            if done[b]:
                continue
            live = 0
            for idx in np.argsort(-cand[b], kind="stable"):
                sc = cand[b, idx]
                if not np.isfinite(sc):
                    break
                k, tok = divmod(int(idx), v)
                if tok == eos:
                    finished[b].append((sc / (t + 1) ** alpha, sc, hyps[b][k]))
                    continue
                new_scores[b, live] = sc
                rows[b, live] = b * w_ + k
                tokens[b, live] = tok
                new_hyps[b][live] = hyps[b][k] + (tok,)
                live += 1
                if live == w_:
                    break
            if live == 0 or len(finished[b]) >= w_:
                done[b] = True
                new_scores[b] = -np.inf
        if done.all():
            break
        state = model.feed(model.reorder(state, rows.reshape(-1)), tokens.reshape(-1))
        scores, hyps = new_scores, new_hyps
    results = []
    for b in range(n):
        # ties keep the earliest finisher
        best = max(range(len(finished[b])), key=lambda i: (finished[b][i][0], -i))
        _, raw, seq = finished[b][best]
        results.append((seq, float(raw)))
    return results


def greedy_decode(model, srcs):
    return beam_search(model, srcs, width=1)
