"""Comparison systems: MLE pretraining, teacher-student pseudo data,
back-translation, and back-translation followed by joint training."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, replace

import numpy as np

from .corpus import ParallelPair, TokenSeq, make_batches
from .curve import EarlyStopper, TrainCurve
from .em.quad import ModelQuad
from .em.training import EMConfig, ta_nmt_train
from .errors import ConfigError
from .evaluation.scoring import evaluate_model, translate
from .optim import OptimizerState
from .optim import step as optim_step
from .seeding import derive_seed, rng_for
from .seqmodel import ArchConfig, NeuralModel

KINDS = ("mle", "teacher_student", "back_translation")

# corpus fields holding the true pairs for each role, and whether to flip them
_TRUE_PAIRS = {"z|x": ("low_xz", False), "x|z": ("low_xz", True),
               "z|y": ("low_yz", False), "y|z": ("low_yz", True)}
_VALID = {"z|x": ("valid_xz", False), "x|z": ("valid_xz", True),
          "z|y": ("valid_yz", False), "y|z": ("valid_yz", True)}


@dataclass
class BaselineConfig:
    kind: str = "mle"
    max_steps: int = 2000
    eval_every: int = 100
    patience: int = 5
    batch_size: int = 64
    learning_rate: float = 1.0
    valid_beam_width: int = 4
    valid_limit: int | None = None
    gen_width: int = 4
    mono_rate: float = 100.0
    mono_side_cap: int | None = 20_000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown baseline kind {self.kind!r}")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        for name in ("eval_every", "patience", "batch_size", "valid_beam_width", "gen_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.mono_rate <= 100.0:
            raise ConfigError("mono_rate must lie in [0, 100]")

    def to_dict(self) -> dict:
        return asdict(self)


def _pairs_for(corpus_lists: dict, field_name: str, flip: bool) -> list:
    pairs = corpus_lists[field_name]
    return [p.flipped() for p in pairs] if flip else list(pairs)


def true_pairs(corpus, role: str) -> list:
    name, flip = _TRUE_PAIRS[role]
    return _pairs_for({name: getattr(corpus, name)}, name, flip)


def valid_pairs(corpus, role: str) -> list:
    name, flip = _VALID[role]
    return _pairs_for(corpus.splits, name, flip) if name in corpus.splits else []


def _opt(opt, lr):
    o = copy.deepcopy(opt) if opt is not None else OptimizerState(learning_rate=lr)
    o.reset()
    return o


def _train_loop(model, true, pseudo, opt, config: BaselineConfig, valid, seed, curve: TrainCurve, tag: str):
    """Mini-batch likelihood ascent; pseudo pairs (when any) are mixed 1:1 with
    true pairs in every batch.  Returns the model with the best validation BLEU."""
    if config.max_steps == 0:
        return model
    # a pseudo source can be too short for the model to emit its partner at all
    pseudo = [p for p in pseudo if len(p.tgt) <= model.max_target_len(p.src)]
    stopper = EarlyStopper(config.patience)
    best = model.clone()

    def evaluate(step):
        nonlocal best
        if not valid:
            return
        score = evaluate_model(model, valid[:config.valid_limit], config.valid_beam_width).percent
        if stopper.update(step, score):
            best = model.clone()
        curve.append(step=step, role=model.role, valid_bleu=score, tag=tag)

    half = config.batch_size if not pseudo else max(1, config.batch_size // 2)
    streams = {"true": (true, iter(()), 0), "pseudo": (pseudo, iter(()), 0)}

    def draw(name):
        pool, it, epoch = streams[name]
        batch = next(it, None)
        if batch is None:
            it = iter(make_batches(pool, half, derive_seed(seed, tag, name, epoch)))
            epoch += 1
            batch = next(it)
        streams[name] = (pool, it, epoch)
        return batch.pairs

    evaluate(0)
    for step in range(1, config.max_steps + 1):
        t = draw("true")
        srcs, tgts = [p.src for p in t], [p.tgt for p in t]
        weights = [1.0 / len(t)] * len(t)
        if pseudo:
            ps = draw("pseudo")[:len(t)]
            srcs += [p.src for p in ps]
            tgts += [p.tgt for p in ps]
            weights += [1.0 / len(ps)] * len(ps)
        _, grads = model.weighted_grad(srcs, tgts, weights)
        optim_step(model.params(), grads, opt, "ascend")
        if step % config.eval_every == 0 or step == config.max_steps:
            evaluate(step)
            if stopper.exhausted:
                break
    return best if valid else model


def pretrain_mle(model, pairs, opt: OptimizerState | None = None, config: BaselineConfig | None = None,
                 valid=None, seed: int = 0, curve: TrainCurve | None = None):
    """Maximum-likelihood training of one model; returns ``(model, curve)``.

    With validation pairs the best model by validation BLEU is returned.
    """
    config = config or BaselineConfig()
    curve = curve if curve is not None else TrainCurve(method="mle")
    if not pairs:
        raise ConfigError("MLE training needs a non-empty pair list")
    model = _train_loop(model, list(pairs), [], _opt(opt, config.learning_rate), config, valid or [],
                        seed, curve, f"mle:{model.role}")
    return model, curve


def init_quad(corpus, arch: ArchConfig | None = None, seed: int = 0) -> ModelQuad:
    vs = {lang: len(v) for lang, v in corpus.vocabs.items()}
    models = []
    for role in ("z|x", "y|z", "z|y", "x|z"):
        tgt, src = role.split("|")
        models.append(NeuralModel(role, vs[src.upper()], vs[tgt.upper()], arch, derive_seed(seed, "init", role)))
    return ModelQuad(*models)


def pretrain_quad(corpus, arch: ArchConfig | None = None, config: BaselineConfig | None = None,
                  seed: int = 0, opt: OptimizerState | None = None):
    """Pretrain all four low-resource models on their bilingual pairs."""
    config = config or BaselineConfig()
    quad = init_quad(corpus, arch, seed)
    curve = TrainCurve(method="mle")
    for role, model in quad.models().items():
        trained, _ = pretrain_mle(model, true_pairs(corpus, role), opt, config, valid_pairs(corpus, role),
                                  derive_seed(seed, "pretrain", role), curve)
        quad.set(role, trained)
    return quad, curve


def train_teachers(corpus, arch: ArchConfig | None = None, config: BaselineConfig | None = None,
                   seed: int = 0, opt: OptimizerState | None = None) -> dict:
    """p(x|y) and p(y|x) trained on the rich pairs."""
    config = config or BaselineConfig()
    vs = {lang: len(v) for lang, v in corpus.vocabs.items()}
    teachers = {}
    for role, flip in (("y|x", False), ("x|y", True)):
        tgt, src = role.split("|")
        model = NeuralModel(role, vs[src.upper()], vs[tgt.upper()], arch, derive_seed(seed, "teacher", role))
        pairs = [p.flipped() for p in corpus.rich_xy] if flip else list(corpus.rich_xy)
        teachers[role], _ = pretrain_mle(model, pairs, opt, replace(config, kind="mle"), None,
                                         derive_seed(seed, "teacher-train", role))
    return teachers


def _translate_pairs(model, srcs, width, pair_with, src_first: bool):
    """Pairs built from translations of ``srcs``; empty outputs are dropped."""
    hyps = translate(model, srcs, width)
    out = []
    for h, other in zip(hyps, pair_with):
        if len(h) == 0:
            continue
        out.append(ParallelPair(h, other) if src_first else ParallelPair(other, h))
    return out


def train_teacher_student(quad: ModelQuad, corpus, opt: OptimizerState | None = None,
                          config: BaselineConfig | None = None, seed: int = 0, teachers: dict | None = None):
    """Each low-resource model is trained on its true pairs mixed 1:1 with
    pseudo pairs whose rich-language side a frozen teacher translated from
    the other low-resource corpus."""
    config = config or BaselineConfig(kind="teacher_student")
    if not teachers or not {"x|y", "y|x"} <= set(teachers):
        raise ConfigError("teacher-student training needs 'x|y' and 'y|x' teacher models")
    out = quad.clone()
    curve = TrainCurve(method="teacher_student")
    if config.max_steps == 0:
        return out, curve
    # (y*, z*) -> (x', z*) and (x*, z*) -> (y', z*)
    ys = [p.src for p in corpus.low_yz]
    xs = [p.src for p in corpus.low_xz]
    xz_pseudo = _translate_pairs(teachers["x|y"], ys, config.gen_width, [p.tgt for p in corpus.low_yz], True)
    yz_pseudo = _translate_pairs(teachers["y|x"], xs, config.gen_width, [p.tgt for p in corpus.low_xz], True)
    pseudo = {"z|x": xz_pseudo, "x|z": [p.flipped() for p in xz_pseudo],
              "z|y": yz_pseudo, "y|z": [p.flipped() for p in yz_pseudo]}
    for role, model in out.models().items():
        trained = _train_loop(model.clone(), true_pairs(corpus, role), pseudo[role],
                              _opt(opt, config.learning_rate), config, valid_pairs(corpus, role),
                              derive_seed(seed, "ts", role), curve, f"ts:{role}")
        out.set(role, trained)
    return out, curve


def mono_pools(corpus, mono_rate: float = 100.0, side_cap: int | None = 20_000, seed: int = 0) -> dict:
    """Monolingual target pools per role: Z from ``mono_z`` (first ``mono_rate``
    percent) and X, Y from the rich pairs (a seeded subset of ``side_cap``)."""
    if not 0.0 <= mono_rate <= 100.0:
        raise ConfigError("mono_rate must lie in [0, 100]")
    n_z = int(round(len(corpus.mono_z) * mono_rate / 100.0))
    rich = corpus.rich_xy
    idx = np.arange(len(rich))
    if side_cap is not None and side_cap < len(rich):
        idx = np.sort(rng_for(seed, "mono-side").choice(len(rich), size=side_cap, replace=False))
    return {"Z": list(corpus.mono_z[:n_z]),
            "X": [rich[i].src for i in idx], "Y": [rich[i].tgt for i in idx]}


def train_back_translation(quad: ModelQuad, corpus, opt: OptimizerState | None = None,
                           config: BaselineConfig | None = None, seed: int = 0,
                           mono_rate: float | None = None):
    """Each model is trained on true pairs mixed 1:1 with pseudo pairs whose
    source side the starting reverse model translated from monolingual
    target text.  Pseudo data is generated once, from the input quad."""
    config = config or BaselineConfig(kind="back_translation")
    rate = config.mono_rate if mono_rate is None else mono_rate
    out = quad.clone()
    curve = TrainCurve(method="back_translation")
    if config.max_steps == 0:
        return out, curve
    pools = mono_pools(corpus, rate, config.mono_side_cap, seed)
    for role in ("z|x", "x|z", "z|y", "y|z"):
        tgt, src = role.split("|")
        reverse = quad.get(f"{src}|{tgt}")
        targets = [t if isinstance(t, TokenSeq) else TokenSeq(tuple(t), tgt.upper()) for t in pools[tgt.upper()]]
        pseudo = _translate_pairs(reverse, targets, config.gen_width, targets, True) if targets else []
        trained = _train_loop(out.get(role).clone(), true_pairs(corpus, role), pseudo,
                              _opt(opt, config.learning_rate), config, valid_pairs(corpus, role),
                              derive_seed(seed, "bt", role), curve, f"bt:{role}")
        out.set(role, trained)
    return out, curve


def compose_good_init(quad: ModelQuad, corpus, ttables=None, opt: OptimizerState | None = None,
                      configs: dict | None = None, seed: int = 0, mono_rate: float | None = None):
    """Back-translation followed by joint training from its output.

    Both stages receive ``seed`` unchanged, so a zero budget for either
    stage reproduces the other method's output exactly."""
    configs = configs or {}
    bt_cfg = configs.get("back_translation") or BaselineConfig(kind="back_translation")
    em_cfg = configs.get("ta") or EMConfig()
    bt_quad, bt_curve = train_back_translation(quad, corpus, opt, bt_cfg, seed, mono_rate)
    ta_quad, ta_curve = ta_nmt_train(bt_quad, corpus, ttables, None, em_cfg, seed)
    curve = TrainCurve(method="ta_gi")
    curve.extend(bt_curve)
    curve.extend(ta_curve)
    return ta_quad, curve
