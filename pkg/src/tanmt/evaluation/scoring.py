"""Decoding-based evaluation of single models and model quads."""

from __future__ import annotations

from ..corpus import TokenSeq
from ..seqmodel.decoding import beam_search
from .bleu import BleuReport, corpus_bleu

# column order of the comparison tables
DIRECTIONS = ("X=>Z", "Z=>X", "Y=>Z", "Z=>Y")
DIRECTION_ROLE = {"X=>Z": "z|x", "Z=>X": "x|z", "Y=>Z": "z|y", "Z=>Y": "y|z"}


def translate(model, srcs, beam_width: int = 8, chunk: int = 256) -> list[TokenSeq]:
    out = []
    for i in range(0, len(srcs), chunk):
        for toks, _ in beam_search(model, srcs[i:i + chunk], beam_width):
            out.append(TokenSeq(toks, model.tgt_lang))
    return out


def evaluate_model(model, test_pairs, beam_width: int = 8) -> BleuReport:
    """Decode every source with beam search and score against the references."""
    pairs = [p if p.src.lang == model.src_lang else p.flipped() for p in test_pairs]
    hyps = translate(model, [p.src for p in pairs], beam_width)
    return corpus_bleu(hyps, [p.tgt for p in pairs])


def direction_pairs(splits: dict, split: str) -> dict:
    """Evaluation pairs per direction from ``{split}_xz`` / ``{split}_yz``."""
    xz, yz = splits[f"{split}_xz"], splits[f"{split}_yz"]
    return {"X=>Z": xz, "Z=>X": [p.flipped() for p in xz],
            "Y=>Z": yz, "Z=>Y": [p.flipped() for p in yz]}


def evaluate_quad(quad, splits: dict, split: str = "test", beam_width: int = 8,
                  limit: int | None = None) -> dict:
    """BLEU report per direction; ``limit`` keeps the first pairs of each split."""
    pairs = direction_pairs(splits, split)
    return {d: evaluate_model(quad.get(DIRECTION_ROLE[d]), pairs[d][:limit], beam_width) for d in DIRECTIONS}


def mean_percent(reports: dict) -> float:
    return sum(r.percent for r in reports.values()) / len(reports)
