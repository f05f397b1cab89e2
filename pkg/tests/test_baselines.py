import numpy as np
import pytest

import tanmt.baselines as bl
from tanmt.baselines import (BaselineConfig, compose_good_init, init_quad, mono_pools, pretrain_mle,
                             train_back_translation, train_teacher_student, train_teachers, true_pairs)
from tanmt.corpus import ParallelPair, reference_model_map
from tanmt.curve import TrainCurve
from tanmt.em.training import EMConfig, ta_nmt_train
from tanmt.errors import ConfigError
from tanmt.optim import OptimizerState
from tanmt.seqmodel import ArchConfig, TabularModel

from conftest import seq

ARCH = ArchConfig(embed_dim=8, hidden_dim=8, precision="float64")


def cfg(kind="mle", **kw):
    base = dict(max_steps=3, eval_every=3, batch_size=8, valid_limit=5, valid_beam_width=2, gen_width=2)
    base.update(kw)
    return BaselineConfig(kind=kind, **base)


def same_params(a, b):
    return all(np.array_equal(a.get(r).get_flat_params(), b.get(r).get_flat_params()) for r in a.models())


@pytest.fixture
def quad(tiny_corpus):
    return init_quad(tiny_corpus, ARCH, seed=0)


def test_defaults_follow_the_two_stage_schedule():
    assert BaselineConfig().learning_rate == 1.0
    assert EMConfig().learning_rate == 0.5
    with pytest.raises(ConfigError):
        BaselineConfig(kind="dual")
    with pytest.raises(ConfigError):
        BaselineConfig(mono_rate=120)


def test_single_pair_mle_reaches_probability_one():
    m = TabularModel("z|x", 3, 3, 2)
    pair = ParallelPair(seq((1,), "X"), seq((2, 0), "Z"))
    trained, _ = pretrain_mle(m, [pair] * 4, OptimizerState(rule="sgd", learning_rate=5.0, clip_norm=None),
                              BaselineConfig(max_steps=400, batch_size=4))
    assert trained.log_prob(pair.src, pair.tgt) >= -1e-3


def test_zero_budget_and_empty_pairs(quad, tiny_corpus):
    m = quad.zx
    out, _ = pretrain_mle(m, true_pairs(tiny_corpus, "z|x"), config=cfg(max_steps=0))
    assert np.array_equal(out.get_flat_params(), m.get_flat_params())
    with pytest.raises(ConfigError):
        pretrain_mle(m, [], config=cfg())


def test_mle_curve_and_selection(quad, tiny_corpus):
    model, curve = pretrain_mle(quad.zx.clone(), true_pairs(tiny_corpus, "z|x"), config=cfg(max_steps=4, eval_every=2),
                                valid=bl.valid_pairs(tiny_corpus, "z|x"))
    assert [r["step"] for r in curve.rows] == [0, 2, 4]
    assert all(r["role"] == "z|x" and r["tag"] == "mle:z|x" for r in curve.rows)


@pytest.fixture(scope="module")
def teachers(tiny_corpus):
    return train_teachers(tiny_corpus, ARCH, cfg(max_steps=2), seed=0)


def test_teacher_student_contracts(quad, tiny_corpus, teachers):
    with pytest.raises(ConfigError):
        train_teacher_student(quad, tiny_corpus, config=cfg("teacher_student"), teachers={"x|y": teachers["x|y"]})
    out, _ = train_teacher_student(quad, tiny_corpus, config=cfg("teacher_student", max_steps=0), teachers=teachers)
    assert same_params(out, quad)


def test_teachers_stay_frozen(quad, tiny_corpus, teachers):
    snap = {r: t.get_flat_params().copy() for r, t in teachers.items()}
    out, _ = train_teacher_student(quad, tiny_corpus, config=cfg("teacher_student"), teachers=teachers)
    for r, t in teachers.items():
        assert np.array_equal(t.get_flat_params(), snap[r])
    assert not same_params(out, quad)


def test_oracle_teacher_yields_true_pairs(quad, tiny_corpus, monkeypatch):
    maps = {"x|y": reference_model_map(tiny_corpus, "Y", "X"), "y|x": reference_model_map(tiny_corpus, "X", "Y")}

    def oracle_translate(model, srcs, width=8):
        return [seq(maps[model][0](s.tokens), maps[model][1]) for s in srcs]

    maps = {"x|y": (maps["x|y"], "X"), "y|x": (maps["y|x"], "Y")}
    seen = {}

    def capture(model, true, pseudo, *args, **kw):
        seen[model.role] = pseudo
        return model

    monkeypatch.setattr(bl, "translate", oracle_translate)
    monkeypatch.setattr(bl, "_train_loop", capture)
    train_teacher_student(quad, tiny_corpus, config=cfg("teacher_student"), teachers={"x|y": "x|y", "y|x": "y|x"})
    to_z = {"X": reference_model_map(tiny_corpus, "X", "Z"), "Y": reference_model_map(tiny_corpus, "Y", "Z")}
    for role in ("z|x", "z|y"):
        pseudo = seen[role]
        assert len(pseudo) == len(true_pairs(tiny_corpus, role))
        for p in pseudo:
            assert tuple(to_z[p.src.lang](p.src.tokens)) == p.tgt.tokens
    assert [p.flipped() for p in seen["z|x"]] == seen["x|z"]


def test_mono_pools(tiny_corpus):
    full = mono_pools(tiny_corpus, 100.0, None)
    assert len(full["Z"]) == len(tiny_corpus.mono_z) and len(full["X"]) == len(tiny_corpus.rich_xy)
    assert len(mono_pools(tiny_corpus, 30.0, None)["Z"]) == round(0.3 * len(tiny_corpus.mono_z))
    assert mono_pools(tiny_corpus, 0.0, None)["Z"] == []
    capped = mono_pools(tiny_corpus, 100.0, 50, seed=1)
    assert len(capped["X"]) == len(capped["Y"]) == 50
    assert capped == mono_pools(tiny_corpus, 100.0, 50, seed=1)


def test_back_translation_rate_zero_uses_no_z_pseudo_data(quad, tiny_corpus, monkeypatch):
    seen = {}

    def capture(model, true, pseudo, *args, **kw):
        seen[model.role] = pseudo
        return model

    monkeypatch.setattr(bl, "_train_loop", capture)
    train_back_translation(quad, tiny_corpus, config=cfg("back_translation"), mono_rate=0.0)
    assert seen["z|x"] == [] and seen["z|y"] == []
    assert len(seen["x|z"]) > 0
    train_back_translation(quad, tiny_corpus, config=cfg("back_translation"), mono_rate=100.0)
    zs = {p.tgt for p in seen["z|x"]}
    assert zs <= set(tiny_corpus.mono_z) and all(p.src.lang == "X" for p in seen["z|x"])


def test_pseudo_pairs_beyond_the_length_cap_are_dropped(quad, tiny_corpus):
    # a one-token source caps the target at 2 * 1 + 5 = 7 tokens
    model = quad.get("z|x")
    long_tgt = seq([4] * 9, "Z")
    pseudo = [ParallelPair(seq([4], "X"), long_tgt), ParallelPair(seq([5], "X"), long_tgt)]
    true = true_pairs(tiny_corpus, "z|x")
    valid = bl.valid_pairs(tiny_corpus, "z|x")[:5]
    with_bad, without = (bl._train_loop(model.clone(), true, p, bl._opt(None, 1.0), cfg(), valid, 0, TrainCurve(), "t")
                         for p in (pseudo, []))
    assert np.array_equal(with_bad.get_flat_params(), without.get_flat_params())


def test_back_translation_zero_budget(quad, tiny_corpus):
    out, _ = train_back_translation(quad, tiny_corpus, config=cfg("back_translation", max_steps=0))
    assert same_params(out, quad)


def test_good_init_composition_identities(quad, tiny_corpus):
    em = EMConfig(max_steps=2, eval_every=2, batch_size=8, valid_limit=5, gen_width=2, valid_beam_width=2)
    bt = cfg("back_translation")
    gi, _ = compose_good_init(quad, tiny_corpus, None, configs={"back_translation": bt,
                                                               "ta": EMConfig(max_steps=0)}, seed=4)
    bt_only, _ = train_back_translation(quad, tiny_corpus, config=bt, seed=4)
    assert same_params(gi, bt_only)
    gi, _ = compose_good_init(quad, tiny_corpus, None, configs={"back_translation": cfg("back_translation", max_steps=0),
                                                               "ta": em}, seed=4)
    ta_only, _ = ta_nmt_train(quad, tiny_corpus, None, None, em, seed=4)
    assert same_params(gi, ta_only)
