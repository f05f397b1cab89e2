from .bleu import BleuReport, corpus_bleu
from .scoring import DIRECTION_ROLE, DIRECTIONS, direction_pairs, evaluate_model, evaluate_quad, translate

__all__ = ["BleuReport", "DIRECTIONS", "DIRECTION_ROLE", "corpus_bleu", "direction_pairs",
           "evaluate_model", "evaluate_quad", "translate"]
