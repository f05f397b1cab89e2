import numpy as np
import pytest

from tanmt.corpus import CipherSpec, TokenSeq, generate_tri_corpus
from tanmt.seqmodel import ArchConfig, TabularModel, all_sequences


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = CipherSpec.random(20, seed=0, length_range=(3, 6))
    return generate_tri_corpus(spec, (300, 60, 60, 100, 20, 20), seed=0)


@pytest.fixture
def arch64():
    return ArchConfig(embed_dim=6, hidden_dim=5, precision="float64")


def point_mass(role, src_vocab, tgt_vocab, max_len, target, max_src_len=None):
    """Tabular model that puts probability one on ``target`` for every source."""
    m = TabularModel(role, src_vocab, tgt_vocab, max_len, max_src_len)
    probs = np.zeros(len(all_sequences(tgt_vocab, max_len)))
    probs[all_sequences(tgt_vocab, max_len).index(tuple(target))] = 1.0
    for src in all_sequences(src_vocab, m.max_src_len):
        m.set_distribution(src, probs)
    return m


def seq(tokens, lang):
    return TokenSeq(tuple(tokens), lang)


# -- acceptance reporting -------------------------------------------------------

_CRITERIA: dict = {}


class Criterion:
    def __init__(self, number, name):
        self.number, self.name = number, name
        self.passed, self.detail = False, "did not finish"
        self.table = None

    def finish(self, passed, detail, table=None):
        self.passed, self.detail, self.table = bool(passed), detail, table
        print(self.line())
        return self.passed

    def line(self):
        return f"criterion {self.number:>2} [{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


@pytest.fixture
def criterion():
    def make(number, name):
        _CRITERIA[number] = Criterion(number, name)
        return _CRITERIA[number]

    return make


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n].line())
    for n in sorted(_CRITERIA):
        if _CRITERIA[n].table:
            terminalreporter.write_line(f"\ncriterion {n} test BLEU:")
            terminalreporter.write_line(_CRITERIA[n].table)
