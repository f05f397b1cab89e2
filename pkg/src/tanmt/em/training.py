"""Pseudo-pair generation, E/M updates on mixed batches and the joint
training loop over the four models.

One iteration runs, in order:

1. generate z' from p(z|x) for a batch of rich pairs (x, y);
2. E-step on p(z|x) with (x, z') pairs plus true (x*, z*) pairs;
3. M-step on p(y|z) with (z', y) pairs plus true (z*, y*) pairs;
4. the same three sub-steps with the roles of X and Y swapped.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..corpus import ParallelPair, TokenSeq
from ..curve import EarlyStopper, TrainCurve
from ..errors import ConfigError, ContractError
from ..evaluation.scoring import evaluate_quad, mean_percent
from ..ibm1 import model1_scores
from ..optim import OptimizerState
from ..optim import step as optim_step
from ..seeding import derive_seed, rng_for
from ..seqmodel.base import ROLES, _to_numpy
from ..seqmodel.checkpoint import load_model, save_model
from ..seqmodel.decoding import beam_search, sample_batch
from .quad import ModelQuad, get_direction

log = logging.getLogger(__name__)


@dataclass
class PseudoPair:
    """``pair`` is (source, z'); ``other`` is the source's rich-pair partner."""

    pair: ParallelPair
    other: TokenSeq
    weight: float = 1.0
    gen_log_ratio: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.weight) and np.isfinite(self.gen_log_ratio)):
            raise ContractError("pseudo pair weight and log-ratio must be finite")

    @property
    def latent(self) -> TokenSeq:
        return self.pair.tgt


class PseudoList(list):
    """A list of pseudo pairs that also counts dropped generations."""

    def __init__(self, items=(), dropped: int = 0):
        super().__init__(items)
        self.dropped = dropped


@dataclass
class MixedBatch:
    pseudo: list
    true_pairs: list

    def __post_init__(self):
        if self.pseudo and self.true_pairs and len(self.pseudo) != len(self.true_pairs):
            raise ContractError("pseudo and true pairs must be mixed 1:1")

    @classmethod
    def mix(cls, pseudo, true_pairs) -> "MixedBatch":
        """Trim the larger pool so both halves have equal size."""
        pseudo, true_pairs = list(pseudo), list(true_pairs)
        if pseudo and true_pairs:
            n = min(len(pseudo), len(true_pairs))
            pseudo, true_pairs = pseudo[:n], true_pairs[:n]
        return cls(pseudo, true_pairs)

    def __len__(self):
        return len(self.pseudo) + len(self.true_pairs)


@dataclass
class EMConfig:
    samples_per_source: int = 1
    gen_width: int = 4
    gen_mode: str = "beam"  # beam: top candidate; sample: ancestral samples
    weight_mode: str = "multiplicative"
    weight_threshold: float = 0.5
    patience: int = 5
    eval_every: int = 100
    max_steps: int = 1000
    baseline_subtraction: bool = False
    baseline_decay: float = 0.9
    batch_size: int = 64
    valid_beam_width: int = 4
    valid_limit: int | None = None
    learning_rate: float = 0.5

    def __post_init__(self):
        for name in ("samples_per_source", "gen_width", "patience", "eval_every", "batch_size",
                     "valid_beam_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.gen_mode not in ("beam", "sample"):
            raise ConfigError("gen_mode must be 'beam' or 'sample'")
        if self.gen_mode == "beam" and self.samples_per_source != 1:
            raise ConfigError("beam generation keeps the top candidate only; use gen_mode='sample'")
        if self.weight_mode not in ("multiplicative", "threshold"):
            raise ConfigError("weight_mode must be 'multiplicative' or 'threshold'")
        if not 0.0 <= self.weight_threshold <= 1.0:
            raise ConfigError("weight_threshold must lie in [0, 1]")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# pseudo pairs


def _source_and_other(gen_model, rich: ParallelPair):
    if rich.src.lang == gen_model.src_lang:
        return rich.src, rich.tgt
    if rich.tgt.lang == gen_model.src_lang:
        return rich.tgt, rich.src
    raise ContractError(f"pair {rich.src.lang}-{rich.tgt.lang} has no {gen_model.src_lang} side")


def generate_pseudo(gen_model, other_model, ttable, sources, config: EMConfig, seed: int,
                    decoder=None) -> PseudoList:
    """Generate z' for each rich pair and attach its weight and log-ratio.

    ``sources`` are rich pairs; the side in ``gen_model``'s source language is
    translated and the other side is scored by ``other_model``.  Empty
    generations (and, when ``decoder`` is given, generations too short for the
    decoder to emit the partner sentence) are dropped and counted.
    """
    srcs, others = zip(*(_source_and_other(gen_model, p) for p in sources)) if sources else ((), ())
    k = config.samples_per_source
    srcs = [s for s in srcs for _ in range(k)]
    others = [o for o in others for _ in range(k)]
    if config.gen_mode == "beam":
        zs = [toks for toks, _ in beam_search(gen_model, srcs, config.gen_width)]
    else:
        zs, _ = sample_batch(gen_model, srcs, np.random.default_rng(seed))
    keep = [i for i, z in enumerate(zs) if len(z) > 0 and
            (decoder is None or len(others[i]) <= decoder.max_target_len(z))]
    out = PseudoList(dropped=len(zs) - len(keep))
    if not keep:
        return out
    srcs = [srcs[i] for i in keep]
    others = [others[i] for i in keep]
    zs = [TokenSeq(zs[i], gen_model.tgt_lang) for i in keep]
    ratios = gen_model.log_probs(srcs, zs) - other_model.log_probs(others, zs)
    if ttable is None:
        weights = np.ones(len(zs))
    else:
        weights = model1_scores(ttable, srcs, zs)
        if config.weight_mode == "threshold":
            weights = (weights >= config.weight_threshold).astype(np.float64)
    for s, o, z, w, r in zip(srcs, others, zs, weights, ratios):
        out.append(PseudoPair(ParallelPair(s, z), o, float(w), float(r)))
    return out


def token_rewards(gen_model, other_model, source, other, z) -> np.ndarray:
    """Per-step rewards log p_other(z_t | z_<t, other) - log p_gen(z_t | z_<t, source).

    The last entry is the end-of-sentence step, so the rewards sum to minus
    the sequence log-ratio used by the E-step.
    """
    if len(gen_model.tgt_tokens(z)) == 0:
        raise ContractError("rewards need a non-empty latent sentence")
    return other_model.token_log_probs(other, z) - gen_model.token_log_probs(source, z)


# --------------------------------------------------------------------------
# updates


@dataclass
class UpdateStats:
    applied: bool
    objective: float = 0.0
    n_pseudo: int = 0
    n_true: int = 0
    mean_weight: float = float("nan")


_skipped = {"e_step": 0, "m_step": 0}


def skipped_updates() -> dict:
    return dict(_skipped)


def _update(model, srcs, tgts, weights, opt, kind) -> UpdateStats:
    if not srcs:
        _skipped[kind] += 1
        log.warning("%s skipped: empty batch", kind)
        return UpdateStats(False)
    value, grads = model.weighted_grad(srcs, tgts, weights)
    optim_step(model.params(), grads, opt, "ascend")
    return UpdateStats(True, float(value))


def e_step_update(quad: ModelQuad, direction, batch: MixedBatch, opt: OptimizerState,
                  config: EMConfig | None = None, baseline: float = 0.0) -> UpdateStats:
    """One update of the direction's generator.

    Pseudo part: the score-function estimate of grad KL(p_gen(z|src) || p_other(z|other))
    from each z' with weight w, i.e. w * (log-ratio - baseline) * grad log p_gen(z'|src),
    averaged and descended.  True part: mean log-likelihood of (src*, z*), ascended.
    Both are folded into one ascent on a weighted log-likelihood.
    """
    d = get_direction(direction)
    gen = quad.get(d.generator)
    n_p, n_t = len(batch.pseudo), len(batch.true_pairs)
    srcs = [pp.pair.src for pp in batch.pseudo] + [p.src for p in batch.true_pairs]
    tgts = [pp.pair.tgt for pp in batch.pseudo] + [p.tgt for p in batch.true_pairs]
    weights = [-pp.weight * (pp.gen_log_ratio - baseline) / n_p for pp in batch.pseudo]
    weights += [1.0 / n_t for _ in range(n_t)]
    stats = _update(gen, srcs, tgts, weights, opt, "e_step")
    stats.n_pseudo, stats.n_true = n_p, n_t
    if n_p:
        stats.mean_weight = float(np.mean([pp.weight for pp in batch.pseudo]))
    return stats


def m_step_update(quad: ModelQuad, direction, batch: MixedBatch, opt: OptimizerState,
                  config: EMConfig | None = None) -> UpdateStats:
    """One ascent step of the decoder on w * log p(other | z') plus true-pair likelihood."""
    d = get_direction(direction)
    dec = quad.get(d.decoder)
    n_p, n_t = len(batch.pseudo), len(batch.true_pairs)
    srcs = [pp.latent for pp in batch.pseudo] + [p.src for p in batch.true_pairs]
    tgts = [pp.other for pp in batch.pseudo] + [p.tgt for p in batch.true_pairs]
    weights = [pp.weight / n_p for pp in batch.pseudo] + [1.0 / n_t for _ in range(n_t)]
    stats = _update(dec, srcs, tgts, weights, opt, "m_step")
    stats.n_pseudo, stats.n_true = n_p, n_t
    if n_p:
        stats.mean_weight = float(np.mean([pp.weight for pp in batch.pseudo]))
    return stats


def lower_bound_estimate(quad: ModelQuad, direction, pseudo) -> float:
    """Mean of log p(other | z') over generated pairs: a one-sample estimate of
    the lower bound per rich pair."""
    if not pseudo:
        return float("nan")
    dec = quad.get(get_direction(direction).decoder)
    return float(np.mean(dec.log_probs([pp.latent for pp in pseudo], [pp.other for pp in pseudo])))


# --------------------------------------------------------------------------
# training loop


def _opt_to_arrays(opt: OptimizerState) -> dict:
    out = {}
    for i, (a, b) in opt.accumulators.items():
        out[f"{i}.g"] = np.asarray(_to_numpy(a), dtype=np.float64)
        out[f"{i}.d"] = np.asarray(_to_numpy(b), dtype=np.float64)
    return out


def _opt_from_arrays(opt: OptimizerState, arrays, params) -> None:
    acc = {}
    for i, p in enumerate(params):
        if f"{i}.g" not in arrays:
            continue
        pair = []
        for suffix in ("g", "d"):
            a = arrays[f"{i}.{suffix}"]
            if isinstance(p, np.ndarray):
                pair.append(np.array(a))
            else:
                import torch

                pair.append(torch.from_numpy(np.array(a)).to(p.dtype))
        acc[i] = tuple(pair)
    opt.accumulators = acc


class TATrainer:
    """Resumable joint trainer; see the module docstring for one iteration."""

    directions = ("X=>Y", "Y=>X")

    def __init__(self, quad: ModelQuad, corpus, ttables: dict | None = None,
                 opt: OptimizerState | None = None, config: EMConfig | None = None, seed: int = 0,
                 run_dir=None, method: str = "ta"):
        self.config = config or EMConfig()
        for name in ("rich_xy", "low_xz", "low_yz"):
            if not getattr(corpus, name):
                raise ConfigError(f"joint training needs non-empty {name} pairs")
        if self.config.max_steps > 0 and not (corpus.splits.get("valid_xz") and corpus.splits.get("valid_yz")):
            raise ConfigError("joint training needs validation pairs for model selection")
        self.quad = quad.clone()
        self.corpus = corpus
        self.ttables = ttables or {}
        template = opt or OptimizerState(learning_rate=self.config.learning_rate)
        self.opts = {}
        for role in ROLES:
            o = copy.deepcopy(template)
            o.reset()
            self.opts[role] = o
        self.seed = seed
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.curve = TrainCurve(self.run_dir / "curve.jsonl" if self.run_dir else None, method)
        self.stopper = EarlyStopper(self.config.patience)
        self.baselines = {d: 0.0 for d in self.directions}
        self.step = 0
        self.best = quad.clone()
        self.last_stats: dict = {}
        self.dropped = 0

    # -- one iteration -----------------------------------------------------------
    def _sample(self, pairs, rng):
        n = min(self.config.batch_size, len(pairs))
        return [pairs[i] for i in rng.choice(len(pairs), size=n, replace=False)]

    def train_step(self) -> dict:
        cfg = self.config
        rng = rng_for(self.seed, "ta-step", self.step)
        rich = self._sample(self.corpus.rich_xy, rng)
        true = {"low_xz": self._sample(self.corpus.low_xz, rng),
                "low_yz": self._sample(self.corpus.low_yz, rng)}
        stats = {}
        for name in self.directions:
            d = get_direction(name)
            gen, scorer, dec = (self.quad.get(r) for r in (d.generator, d.scorer, d.decoder))
            pseudo = generate_pseudo(gen, scorer, self.ttables.get(d.ttable), rich, cfg,
                                     derive_seed(self.seed, "ta-gen", self.step, name), decoder=dec)
            self.dropped += pseudo.dropped
            b1 = MixedBatch.mix(pseudo, true[d.true_gen])
            base = self.baselines[name] if cfg.baseline_subtraction else 0.0
            e = e_step_update(self.quad, d, b1, self.opts[d.generator], cfg, base)
            b2 = MixedBatch.mix(pseudo, [p.flipped() for p in true[d.true_dec]])
            m = m_step_update(self.quad, d, b2, self.opts[d.decoder], cfg)
            if pseudo and cfg.baseline_subtraction:
                mean_ratio = float(np.mean([pp.gen_log_ratio for pp in pseudo]))
                self.baselines[name] = cfg.baseline_decay * base + (1 - cfg.baseline_decay) * mean_ratio
            stats[name] = {"e": e, "m": m, "pseudo": pseudo}
        self.step += 1
        self.last_stats = stats
        return stats

    # -- validation, checkpoints ------------------------------------------------
    def evaluate(self) -> float:
        cfg = self.config
        reports = evaluate_quad(self.quad, self.corpus.splits, "valid", cfg.valid_beam_width, cfg.valid_limit)
        score = mean_percent(reports)
        improved = self.stopper.update(self.step, score)
        if improved:
            self.best = self.quad.clone()
        for name in self.directions:
            d = get_direction(name)
            st = self.last_stats.get(name)
            lb = lower_bound_estimate(self.quad, d, st["pseudo"]) if st else float("nan")
            mw = st["m"].mean_weight if st else float("nan")
            for role in (d.generator, d.decoder):
                direction = {"z|x": "X=>Z", "x|z": "Z=>X", "z|y": "Y=>Z", "y|z": "Z=>Y"}[role]
                self.curve.append(step=self.step, role=role, valid_bleu=reports[direction].percent,
                                  mean_valid_bleu=score, lower_bound_estimate=lb, mean_weight=mw)
        if self.run_dir is not None:
            self.save_checkpoint(improved)
        return score

    def save_checkpoint(self, improved: bool) -> None:
        rd = self.run_dir
        rd.mkdir(parents=True, exist_ok=True)
        for role in ROLES:
            tag = role.replace("|", "")
            save_model(self.quad.get(role), rd / f"{tag}-{self.step}.ckpt")
            if improved:
                save_model(self.quad.get(role), rd / f"best-{tag}.ckpt")
        np.savez(rd / f"optim-{self.step}.npz",
                 **{f"{r.replace('|', '')}/{k}": v for r in ROLES for k, v in _opt_to_arrays(self.opts[r]).items()})
        state = {"step": self.step, "stopper": self.stopper.to_dict(), "baselines": self.baselines,
                 "dropped": self.dropped, "steps": {r: self.opts[r].steps for r in ROLES},
                 "config": self.config.to_dict(), "seed": self.seed}
        tmp = rd / "state.json.tmp"
        tmp.write_text(json.dumps(state, sort_keys=True), encoding="utf-8")
        tmp.replace(rd / "state.json")

    def resume(self) -> bool:
        """Restore from the run directory; returns False when there is nothing to resume."""
        if self.run_dir is None or not (self.run_dir / "state.json").exists():
            return False
        rd = self.run_dir
        state = json.loads((rd / "state.json").read_text(encoding="utf-8"))
        step = state["step"]
        self.quad = ModelQuad(*(load_model(rd / f"{r.replace('|', '')}-{step}.ckpt") for r in ROLES))
        self.best = ModelQuad(*(load_model(rd / f"best-{r.replace('|', '')}.ckpt") for r in ROLES))
        arrays = np.load(rd / f"optim-{step}.npz")
        for r in ROLES:
            tag = r.replace("|", "")
            sub = {k.split("/", 1)[1]: arrays[k] for k in arrays.files if k.startswith(tag + "/")}
            _opt_from_arrays(self.opts[r], sub, self.quad.get(r).params())
            self.opts[r].steps = state["steps"][r]
        self.step = step
        self.stopper = EarlyStopper.from_dict(state["stopper"])
        self.baselines = state["baselines"]
        self.dropped = state["dropped"]
        self.curve = TrainCurve.read(rd / "curve.jsonl")
        self.curve.method = "ta" if not self.curve.rows else self.curve.rows[0].get("method")
        return True

    def run(self, until: int | None = None):
        """Train until convergence or ``max_steps``; ``until`` stops early (for interruption tests)."""
        cfg = self.config
        if cfg.max_steps == 0:
            return self.quad, self.curve
        if self.step == 0 and not self.stopper.history:
            self.evaluate()
        limit = cfg.max_steps if until is None else min(until, cfg.max_steps)
        while self.step < limit and not self.stopper.exhausted:
            self.train_step()
            if self.step % cfg.eval_every == 0 or self.step == cfg.max_steps:
                self.evaluate()
        return self.best, self.curve


def ta_nmt_train(quad: ModelQuad, corpus, ttables=None, opt: OptimizerState | None = None,
                 config: EMConfig | None = None, seed: int = 0, run_dir=None, resume: bool = False):
    """Joint training from a pretrained quad; returns ``(best quad, curve)``.

    The returned quad is the one with the best mean validation BLEU over the
    four directions among all evaluations, the starting point included.
    """
    trainer = TATrainer(quad, corpus, ttables, opt, config, seed, run_dir)
    if resume:
        trainer.resume()
    return trainer.run()
