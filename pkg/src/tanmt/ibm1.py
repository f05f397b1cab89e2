"""IBM Model 1 lexical translation tables and sentence-pair scoring.

The table holds t(target token | source token) for every source token plus a
null source; each source column is a distribution over target tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

SCORE_FLOOR = 1e-9


def _tokens(seq):
    return seq.tokens if hasattr(seq, "tokens") else tuple(seq)


@dataclass
class TTable:
    """``t[tgt, src]``; column ``n_src`` is the null source."""

    t: np.ndarray
    src_name: str = "src"
    tgt_name: str = "tgt"
    history: list = field(default_factory=list)

    @property
    def n_tgt(self) -> int:
        return self.t.shape[0]

    @property
    def n_src(self) -> int:
        return self.t.shape[1] - 1

    @property
    def null(self) -> int:
        return self.n_src

    @classmethod
    def uniform(cls, n_src: int, n_tgt: int, **kw) -> "TTable":
        return cls(np.full((n_tgt, n_src + 1), 1.0 / n_tgt), **kw)

    def prob(self, tgt_tok: int, src_tok: int | None) -> float:
        col = self.null if src_tok is None else src_tok
        if not (0 <= tgt_tok < self.n_tgt and 0 <= col <= self.n_src):
            return 0.0
        return float(self.t[tgt_tok, col])

    def column_sums(self) -> np.ndarray:
        return self.t.sum(axis=0)

    def save(self, path) -> None:
        rows, cols = np.nonzero(self.t)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format_version": 1, "src": self.src_name, "tgt": self.tgt_name,
                                 "n_src": self.n_src, "n_tgt": self.n_tgt}) + "\n")
            for r, c in zip(rows, cols):
                src = "NULL" if c == self.null else str(c)
                fh.write(f"{r}\t{src}\t{float(self.t[r, c])!r}\n")

    @classmethod
    def load(cls, path) -> "TTable":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise ParseError(f"{path}: empty t-table file")
        head = json.loads(lines[0])
        t = np.zeros((head["n_tgt"], head["n_src"] + 1))
        for lineno, line in enumerate(lines[1:], 2):
            try:
                r, c, p = line.split("\t")
                t[int(r), head["n_src"] if c == "NULL" else int(c)] = float(p)
            except ValueError:
                raise ParseError("expected 'tgt<TAB>src<TAB>prob'", lineno) from None
        return cls(t, head["src"], head["tgt"])


def _flatten(pairs, n_src):
    # one row per (target position, source slot) combination, null included
    f_idx, e_idx, row = [], [], []
    r = 0
    for p in pairs:
        src = np.asarray(_tokens(p.src), dtype=np.int64)
        src = np.append(src, n_src)
        for f in _tokens(p.tgt):
            f_idx.append(np.full(len(src), f, dtype=np.int64))
            e_idx.append(src)
            row.append(np.full(len(src), r, dtype=np.int64))
            r += 1
    return np.concatenate(f_idx), np.concatenate(e_idx), np.concatenate(row), r


def corpus_log_likelihood(ttable: TTable, pairs) -> float:
    """sum over pairs and target positions of log(sum_i t(f|e_i) / (l + 1))."""
    f, e, row, n_rows = _flatten(pairs, ttable.n_src)
    lens = np.bincount(row, minlength=n_rows)  # l + 1 per target position
    sums = np.bincount(row, ttable.t[f, e], minlength=n_rows)
    return float(np.sum(np.log(sums / lens)))


def train_ibm1(pairs, iterations: int = 10, n_src: int | None = None, n_tgt: int | None = None,
               src_name: str = "src", tgt_name: str = "tgt") -> TTable:
    """Model 1 EM from a uniform table.

    ``history`` on the result holds the corpus log-likelihood before each
    iteration and after the last one.
    """
    pairs = [p for p in pairs if len(p.tgt) > 0]
    if not pairs:
        raise ConfigError("IBM Model 1 needs a non-empty corpus")
    if iterations < 1:
        raise ConfigError("iterations must be >= 1")
    n_src = n_src or 1 + max(max(_tokens(p.src), default=0) for p in pairs)
    n_tgt = n_tgt or 1 + max(max(_tokens(p.tgt)) for p in pairs)
    table = TTable.uniform(n_src, n_tgt, src_name=src_name, tgt_name=tgt_name)
    f, e, row, n_rows = _flatten(pairs, n_src)
    cell = f * (n_src + 1) + e
    lens = np.bincount(row, minlength=n_rows)
    for _ in range(iterations):
        vals = table.t[f, e]
        sums = np.bincount(row, vals, minlength=n_rows)
        table.history.append(float(np.sum(np.log(sums / lens))))
        posterior = vals / sums[row]
        counts = np.bincount(cell, posterior, minlength=n_tgt * (n_src + 1)).reshape(n_tgt, n_src + 1)
        totals = counts.sum(axis=0)
        # sources never observed keep their previous (uniform) column
        seen = totals > 0
        table.t[:, seen] = counts[:, seen] / totals[seen]
    sums = np.bincount(row, table.t[f, e], minlength=n_rows)
    table.history.append(float(np.sum(np.log(sums / lens))))
    return table


def model1_score(ttable: TTable, src, tgt) -> float:
    """Length-normalized Model 1 probability of ``tgt`` given ``src``.

    Per target token, the average of t(tgt_j | s) over the source tokens and
    the null source; the score is the geometric mean of those averages over
    target positions.  Table entries below ``SCORE_FLOOR`` (including tokens
    the table has never seen) count as ``SCORE_FLOOR``.
    """
    src_toks = list(_tokens(src)) + [None]
    tgt_toks = _tokens(tgt)
    if not tgt_toks:
        raise ValueError("target must contain at least one token")
    total = 0.0
    for f in tgt_toks:
        s = sum(max(ttable.prob(f, e), SCORE_FLOOR) for e in src_toks)
        total += math.log(s / len(src_toks))
    return math.exp(total / len(tgt_toks))


def model1_scores(ttable: TTable, srcs, tgts) -> np.ndarray:
    return np.array([model1_score(ttable, s, t) for s, t in zip(srcs, tgts)])
