"""Method comparisons and the monolingual-data sweep on one corpus."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from ..baselines import (BaselineConfig, compose_good_init, pretrain_quad, train_back_translation,
                         train_teacher_student, train_teachers)
from ..corpus import TokenSeq, reference_model_map
from ..em.training import EMConfig, ta_nmt_train
from ..errors import ConfigError
from ..ibm1 import train_ibm1
from ..seeding import derive_seed
from ..seqmodel.base import ArchConfig
from .bleu import corpus_bleu
from .scoring import DIRECTIONS, direction_pairs, evaluate_quad

log = logging.getLogger(__name__)

METHODS = ("MLE", "T-S", "BackTrans", "TA-NMT", "TA-NMT(GI)")
DEFAULT_RATES = (0, 10, 30, 60, 100)


@dataclass
class ExperimentConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    pretrain: BaselineConfig = field(default_factory=BaselineConfig)
    teacher: BaselineConfig = field(default_factory=BaselineConfig)
    teacher_student: BaselineConfig = field(default_factory=lambda: BaselineConfig(kind="teacher_student"))
    back_translation: BaselineConfig = field(default_factory=lambda: BaselineConfig(kind="back_translation"))
    ta: EMConfig = field(default_factory=EMConfig)
    ibm1_iterations: int = 10
    test_beam_width: int = 8
    test_split: str = "test"
    test_limit: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperimentReport:
    """BLEU (percent) per method and direction, plus per-method averages."""

    bleu: dict
    metadata: dict = field(default_factory=dict)

    @property
    def averages(self) -> dict:
        return {m: sum(row[d] for d in DIRECTIONS) / len(DIRECTIONS) for m, row in self.bleu.items()}

    def table(self) -> str:
        head = f"{'method':<12}" + "".join(f"{d:>9}" for d in DIRECTIONS) + f"{'Ave':>9}"
        lines = [head, "-" * len(head)]
        avg = self.averages
        for m, row in self.bleu.items():
            lines.append(f"{m:<12}" + "".join(f"{row[d]:>9.2f}" for d in DIRECTIONS) + f"{avg[m]:>9.2f}")
        return "\n".join(lines)

    def records(self) -> list[dict]:
        avg = self.averages
        return [{"method": m, "direction": d, "bleu": row[d]} for m, row in self.bleu.items() for d in DIRECTIONS] + \
               [{"method": m, "direction": "Ave", "bleu": avg[m]} for m in self.bleu]

    def save(self, out_dir, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(self.table() + "\n", encoding="utf-8")
        with open(out / f"{stem}.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"metadata": self.metadata}, sort_keys=True) + "\n")
            for r in self.records():
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def ibm1_tables(corpus, iterations: int = 10) -> dict:
    """Model 1 tables t(z | x) and t(z | y) from the low-resource pairs."""
    nz = len(corpus.vocabs["Z"])
    return {
        "xz": train_ibm1(corpus.low_xz, iterations, len(corpus.vocabs["X"]), nz, "X", "Z"),
        "yz": train_ibm1(corpus.low_yz, iterations, len(corpus.vocabs["Y"]), nz, "Y", "Z"),
    }


def _scores(quad, corpus, config: ExperimentConfig) -> dict:
    reports = evaluate_quad(quad, corpus.splits, config.test_split, config.test_beam_width, config.test_limit)
    return {d: reports[d].percent for d in DIRECTIONS}


def oracle_scores(corpus, split: str = "test") -> dict:
    """BLEU of the ground-truth cipher translator for each direction."""
    out = {}
    for d, pairs in direction_pairs(corpus.splits, split).items():
        src_lang, tgt_lang = d.split("=>")
        tr = reference_model_map(corpus, src_lang, tgt_lang)
        hyps = [TokenSeq(tuple(tr(p.src.tokens)), tgt_lang) for p in pairs]
        out[d] = corpus_bleu(hyps, [p.tgt for p in pairs]).percent
    return out


def run_comparison(corpus, methods=METHODS, config: ExperimentConfig | None = None, seed: int = 0,
                   pretrained=None, return_quads: bool = False):
    """Train every requested method from one shared pretrained quad and
    report test BLEU for the four low-resource directions.

    ``pretrained`` skips pretraining (the caller vouches it was produced
    with the same seed and configuration).
    """
    config = config or ExperimentConfig()
    methods = list(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s): {', '.join(unknown)}")
    t0 = time.perf_counter()
    if pretrained is None:
        pretrained, _ = pretrain_quad(corpus, config.arch, config.pretrain, derive_seed(seed, "pretrain"))
        log.info("pretraining done, %.0fs elapsed", time.perf_counter() - t0)
    needs_tables = {"TA-NMT", "TA-NMT(GI)"} & set(methods)
    tables = ibm1_tables(corpus, config.ibm1_iterations) if needs_tables else None
    ta_seed, bt_seed = derive_seed(seed, "ta"), derive_seed(seed, "bt")
    quads = {}
    bt_quad = None
    for m in METHODS:
        if m not in methods:
            continue
        if m == "MLE":
            quads[m] = pretrained
        elif m == "T-S":
            teachers = train_teachers(corpus, config.arch, config.teacher, derive_seed(seed, "teachers"))
            quads[m], _ = train_teacher_student(pretrained, corpus, None, config.teacher_student,
                                                derive_seed(seed, "ts"), teachers)
        elif m == "BackTrans":
            bt_quad, _ = train_back_translation(pretrained, corpus, None, config.back_translation, bt_seed)
            quads[m] = bt_quad
        elif m == "TA-NMT":
            quads[m], _ = ta_nmt_train(pretrained, corpus, tables, None, config.ta, ta_seed)
        else:
            # back-translation with bt_seed is deterministic, so its result is reused
            if bt_quad is None:
                bt_quad, _ = train_back_translation(pretrained, corpus, None, config.back_translation, bt_seed)
            quads[m], _ = ta_nmt_train(bt_quad, corpus, tables, None, config.ta, ta_seed)
        log.info("%s done, %.0fs elapsed", m, time.perf_counter() - t0)
    bleu = {m: _scores(quads[m], corpus, config) for m in methods}
    log.info("test scoring done, %.0fs elapsed", time.perf_counter() - t0)
    report = ExperimentReport(bleu, {"seed": seed, "config": config.digest(), "methods": methods})
    return (report, quads) if return_quads else report


@dataclass
class SweepReport:
    records: list

    def series(self, method: str, direction: str = "X=>Z") -> list[tuple]:
        return [(r["rate"], r[direction]) for r in self.records if r["method"] == method]

    def table(self) -> str:
        lines = [f"{'method':<12}{'rate':>6}" + "".join(f"{d:>9}" for d in DIRECTIONS) + f"{'Ave':>9}"]
        for r in self.records:
            lines.append(f"{r['method']:<12}{r['rate']:>6g}" + "".join(f"{r[d]:>9.2f}" for d in DIRECTIONS)
                         + f"{r['Ave']:>9.2f}")
        return "\n".join(lines)

    def save(self, out_dir, stem: str = "sweep") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.txt").write_text(self.table() + "\n", encoding="utf-8")
        with open(out / f"{stem}.jsonl", "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def mono_sweep(corpus, rates=DEFAULT_RATES, config: ExperimentConfig | None = None, seed: int = 0,
               pretrained=None) -> SweepReport:
    """Back-translation and back-translation followed by joint training at
    each utilization rate of the monolingual Z pool."""
    config = config or ExperimentConfig()
    rates = sorted(float(r) for r in rates)
    if any(r < 0 or r > 100 for r in rates):
        raise ConfigError("utilization rates must lie in [0, 100]")
    if not corpus.mono_z:
        raise ConfigError("the sweep needs a monolingual Z pool")
    if pretrained is None:
        pretrained, _ = pretrain_quad(corpus, config.arch, config.pretrain, derive_seed(seed, "pretrain"))
    tables = ibm1_tables(corpus, config.ibm1_iterations)
    ta_seed, bt_seed = derive_seed(seed, "ta"), derive_seed(seed, "bt")
    records = []
    gi_records = []
    for rate in rates:
        bt_cfg = replace(config.back_translation, mono_rate=rate)
        bt_quad, _ = train_back_translation(pretrained, corpus, None, bt_cfg, bt_seed)
        gi_quad, _ = ta_nmt_train(bt_quad, corpus, tables, None, config.ta, ta_seed)
        for method, quad, sink in (("BackTrans", bt_quad, records), ("TA-NMT(GI)", gi_quad, gi_records)):
            s = _scores(quad, corpus, config)
            sink.append({"method": method, "rate": rate, **s, "Ave": sum(s.values()) / len(s)})
    return SweepReport(records + gi_records)


__all__ = ["DEFAULT_RATES", "METHODS", "ExperimentConfig", "ExperimentReport", "SweepReport",
           "compose_good_init", "ibm1_tables", "mono_sweep", "oracle_scores", "run_comparison"]
