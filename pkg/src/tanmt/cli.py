"""Command-line driver: corpus generation, training, evaluation, sweeps and
the exact-math oracle suite.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .baselines import (BaselineConfig, pretrain_quad, train_back_translation, train_teacher_student,
                        train_teachers)
from .corpus import CipherSpec, CorpusSizes, generate_tri_corpus, read_corpus, write_corpus
from .em.quad import ModelQuad
from .em.training import EMConfig, TATrainer
from .errors import ConfigError, TanmtError
from .evaluation.experiments import (DEFAULT_RATES, ExperimentConfig, ExperimentReport, ibm1_tables,
                                     mono_sweep, oracle_scores)
from .evaluation.scoring import DIRECTIONS, evaluate_quad
from .optim import OptimizerState
from .seeding import derive_seed
from .seqmodel import ROLES, ArchConfig, load_model, save_model

RUN_ROOT_ENV = "TANMT_RUN_ROOT"
METHODS = {"mle": "MLE", "ts": "T-S", "backtrans": "BackTrans", "ta": "TA-NMT", "ta-gi": "TA-NMT(GI)"}

log = logging.getLogger("tanmt")


# --------------------------------------------------------------------------
# configuration


@dataclass
class CorpusConfig:
    base_vocab_size: int = 200
    cipher_seed: int = 0
    reorder_window: int = 2
    length_range: tuple = (4, 10)
    zipf_exponent: float = 1.1
    noise_rate: float = 0.0
    rich_xy: int = 50_000
    low_xz: int = 2_000
    low_yz: int = 2_000
    mono_z: int = 20_000
    valid: int = 300
    test: int = 500
    overlap: float = 0.0

    def cipher(self) -> CipherSpec:
        return CipherSpec.random(self.base_vocab_size, self.cipher_seed, reorder_window=self.reorder_window,
                                 length_range=tuple(self.length_range), zipf_exponent=self.zipf_exponent,
                                 noise_rate=self.noise_rate)

    def sizes(self) -> CorpusSizes:
        return CorpusSizes(self.rich_xy, self.low_xz, self.low_yz, self.mono_z, self.valid, self.test)


@dataclass
class OptimizerConfig:
    rule: str = "adadelta"
    rho: float = 0.95
    epsilon: float = 1e-6
    clip_norm: float | None = 5.0
    clip_mode: str = "clip"

    def state(self, learning_rate: float) -> OptimizerState:
        return OptimizerState(self.rule, learning_rate, self.rho, self.epsilon, self.clip_norm, self.clip_mode)


@dataclass
class EvalConfig:
    beam_width: int = 8
    limit: int | None = None


_SECTIONS = {
    "corpus": CorpusConfig, "arch": ArchConfig, "optimizer": OptimizerConfig,
    "pretrain": BaselineConfig, "teacher": BaselineConfig, "teacher_student": BaselineConfig,
    "back_translation": BaselineConfig, "ta": EMConfig, "eval": EvalConfig,
}
_SECTION_DEFAULTS = {"teacher_student": {"kind": "teacher_student"},
                     "back_translation": {"kind": "back_translation"}}


@dataclass
class RunConfig:
    seed: int = 0
    run_dir: str | None = None
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    pretrain: BaselineConfig = field(default_factory=BaselineConfig)
    teacher: BaselineConfig = field(default_factory=BaselineConfig)
    teacher_student: BaselineConfig = field(default_factory=lambda: BaselineConfig(kind="teacher_student"))
    back_translation: BaselineConfig = field(default_factory=lambda: BaselineConfig(kind="back_translation"))
    ta: EMConfig = field(default_factory=EMConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        kw = {}
        for key, value in raw.items():
            if key in _SECTIONS:
                kw[key] = _build_section(key, value)
            else:
                kw[key] = value
        if not isinstance(kw.get("seed", 0), int):
            raise ConfigError("'seed' must be an integer")
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(arch=self.arch, pretrain=self.pretrain, teacher=self.teacher,
                                teacher_student=self.teacher_student, back_translation=self.back_translation,
                                ta=self.ta, test_beam_width=self.eval.beam_width, test_limit=self.eval.limit)


def _build_section(name: str, value):
    cls = _SECTIONS[name]
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    for key in value:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key!r}")
    try:
        return cls(**{**_SECTION_DEFAULTS.get(name, {}), **value})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config section {name!r}: {exc}") from None


# --------------------------------------------------------------------------
# helpers


def _resolve(path) -> Path:
    p = Path(path)
    root = os.environ.get(RUN_ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


@contextmanager
def run_lock(run_dir: Path):
    """Exclusive lock file guarding one run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise TanmtError(f"{run_dir} is locked by another command (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _save_quad(quad: ModelQuad, out: Path, prefix: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    for role in ROLES:
        save_model(quad.get(role), out / f"{prefix}{role.replace('|', '')}.ckpt")


def _load_quad(out: Path, prefix: str = "") -> ModelQuad | None:
    paths = [out / f"{prefix}{r.replace('|', '')}.ckpt" for r in ROLES]
    if not all(p.exists() for p in paths):
        return None
    return ModelQuad(*(load_model(p) for p in paths))


def _corpus_for_run(cfg: RunConfig, run_dir: Path):
    cdir = run_dir / "corpus"
    if (cdir / "manifest.json").exists():
        return read_corpus(cdir)
    corpus = generate_tri_corpus(cfg.corpus.cipher(), cfg.corpus.sizes(), derive_seed(cfg.seed, "corpus"),
                                 cfg.corpus.overlap)
    write_corpus(corpus, cdir)
    return corpus


def _pretrained(cfg: RunConfig, corpus, run_dir: Path) -> ModelQuad:
    pdir = run_dir / "pretrained"
    quad = _load_quad(pdir)
    if quad is None:
        print("pretraining the four low-resource models", flush=True)
        quad, curve = pretrain_quad(corpus, cfg.arch, cfg.pretrain, derive_seed(cfg.seed, "pretrain"),
                                    cfg.optimizer.state(cfg.pretrain.learning_rate))
        _save_quad(quad, pdir)
        with open(pdir / "curve.jsonl", "w", encoding="utf-8") as fh:
            for row in curve.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return quad


# --------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    cfg = _config(args)
    out = _resolve(args.out)
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"{out} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    corpus = generate_tri_corpus(cfg.corpus.cipher(), cfg.corpus.sizes(), derive_seed(cfg.seed, "corpus"),
                                 cfg.corpus.overlap)
    manifest = write_corpus(corpus, out)
    print(f"wrote {len(manifest['files'])} files to {out}")
    return 0


def _train_method(cfg: RunConfig, method: str, corpus, pre: ModelQuad, out: Path, resume: bool):
    seed = cfg.seed
    opt = cfg.optimizer
    if method == "mle":
        return pre
    if method == "ts":
        teachers = train_teachers(corpus, cfg.arch, cfg.teacher, derive_seed(seed, "teachers"),
                                  opt.state(cfg.teacher.learning_rate))
        quad, _ = train_teacher_student(pre, corpus, opt.state(cfg.teacher_student.learning_rate),
                                        cfg.teacher_student, derive_seed(seed, "ts"), teachers)
        return quad
    if method in ("backtrans", "ta-gi"):
        bt_dir = out.parent / "backtrans"
        quad = _load_quad(bt_dir, "final-") if method == "ta-gi" else None
        if quad is None:
            quad, _ = train_back_translation(pre, corpus, opt.state(cfg.back_translation.learning_rate),
                                             cfg.back_translation, derive_seed(seed, "bt"))
            if method == "ta-gi":
                _save_quad(quad, bt_dir, "final-")
        if method == "backtrans":
            return quad
        pre = quad
    trainer = TATrainer(pre, corpus, ibm1_tables(corpus), opt.state(cfg.ta.learning_rate), cfg.ta,
                        derive_seed(seed, "ta"), out / "ta", method=method)
    if resume and trainer.resume():
        print(f"resumed at step {trainer.step}", flush=True)
    quad, _ = trainer.run()
    return quad


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.method not in METHODS:
        raise ConfigError(f"unknown method {args.method!r}; choose from {', '.join(METHODS)}")
    run_dir = _resolve(args.out or cfg.run_dir or "run")
    out = run_dir / args.method
    if (out / "final-zx.ckpt").exists() and not (args.force or args.resume):
        raise ConfigError(f"{out} already holds a trained quad (use --force or --resume)")
    with run_lock(run_dir):
        corpus = _corpus_for_run(cfg, run_dir)
        pre = _pretrained(cfg, corpus, run_dir)
        quad = _train_method(cfg, args.method, corpus, pre, out, args.resume)
        _save_quad(quad, out, "final-")
    print(f"saved {args.method} models to {out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = _resolve(args.out or "run")
    corpus = read_corpus(run_dir / "corpus")
    if args.method == "oracle":
        scores = oracle_scores(corpus, args.split)
    else:
        if args.method not in METHODS:
            raise ConfigError(f"unknown method {args.method!r}")
        quad = _load_quad(run_dir / args.method, "final-")
        if quad is None:
            raise ConfigError(f"no trained models under {run_dir / args.method}")
        reports = evaluate_quad(quad, corpus.splits, args.split, args.beam, args.limit)
        scores = {d: reports[d].percent for d in DIRECTIONS}
    name = "oracle" if args.method == "oracle" else METHODS[args.method]
    report = ExperimentReport({name: scores}, {"split": args.split, "beam": args.beam})
    report.save(run_dir / "reports", f"{args.method}-{args.split}")
    print(report.table())
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rates = DEFAULT_RATES if not args.rates else [float(r) for r in args.rates.split(",")]
    run_dir = _resolve(args.out or cfg.run_dir or "sweep")
    with run_lock(run_dir):
        corpus = _corpus_for_run(cfg, run_dir)
        pre = _pretrained(cfg, corpus, run_dir)
        report = mono_sweep(corpus, rates, cfg.experiment(), cfg.seed, pretrained=pre)
    report.save(run_dir / "reports")
    print(report.table())
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    results = run_all()
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} property groups passed")
    return 0 if n_ok == len(results) else 2


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tanmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one method in a run directory")
    p.add_argument("--config")
    p.add_argument("--method", required=True, choices=sorted(METHODS))
    p.add_argument("--out", help=f"run directory (relative paths resolve under ${RUN_ROOT_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate trained models")
    p.add_argument("--out", help="run directory")
    p.add_argument("--method", required=True, choices=sorted(METHODS) + ["oracle"])
    p.add_argument("--split", default="test", choices=("valid", "test"))
    p.add_argument("--beam", type=int, default=8)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="monolingual-data utilization sweep")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--rates", help="comma-separated percentages, default 0,10,30,60,100")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the exact-math oracle suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TanmtError, ArithmeticError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
