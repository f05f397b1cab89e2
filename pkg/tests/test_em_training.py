import json
import math

import numpy as np
import pytest

from tanmt.baselines import init_quad
from tanmt.corpus import ParallelPair
from tanmt.em import ModelQuad
from tanmt.em import exact
from tanmt.em.training import (EMConfig, MixedBatch, PseudoPair, TATrainer, e_step_update, generate_pseudo,
                               lower_bound_estimate, m_step_update, skipped_updates, ta_nmt_train, token_rewards)
from tanmt.errors import ConfigError, ContractError
from tanmt.ibm1 import TTable
from tanmt.optim import OptimizerState
from tanmt.seqmodel import ArchConfig, TabularModel, all_sequences

from conftest import point_mass, seq


def sgd(lr=0.3):
    return OptimizerState(rule="sgd", learning_rate=lr, clip_norm=None)


def flat(model):
    return model.get_flat_params().copy()


@pytest.fixture
def small_quad(tiny_corpus):
    return init_quad(tiny_corpus, ArchConfig(embed_dim=8, hidden_dim=8, precision="float64"), seed=0)


def rich(tokens_x, tokens_y):
    return ParallelPair(seq(tokens_x, "X"), seq(tokens_y, "Y"))


def tabular_quad(seed=0):
    rng = np.random.default_rng(seed)
    quad, pairs = exact.random_tabular_quad(rng, (3, 3, 3), 2, n_pairs=3, posterior=False)
    return quad, [rich(x, y) for x, y in pairs]


def test_pseudo_pair_and_batch_contracts():
    p = ParallelPair(seq((1,), "X"), seq((2,), "Z"))
    with pytest.raises(ContractError):
        PseudoPair(p, seq((0,), "Y"), weight=math.nan)
    with pytest.raises(ContractError):
        PseudoPair(p, seq((0,), "Y"), gen_log_ratio=math.inf)
    pp = PseudoPair(p, seq((0,), "Y"))
    with pytest.raises(ContractError):
        MixedBatch([pp, pp], [p])
    b = MixedBatch.mix([pp] * 5, [p] * 3)
    assert len(b.pseudo) == len(b.true_pairs) == 3
    assert len(MixedBatch.mix([], [p] * 3).true_pairs) == 3


@pytest.mark.parametrize("bad", [dict(samples_per_source=0), dict(weight_threshold=1.5), dict(max_steps=-1),
                                 dict(gen_mode="top"), dict(samples_per_source=2), dict(weight_mode="x")])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        EMConfig(**bad)


def test_one_candidate_per_source_and_uniform_weight(small_quad, tiny_corpus):
    sources = tiny_corpus.rich_xy[:12]
    v = len(tiny_corpus.vocabs["Z"])
    table = TTable.uniform(len(tiny_corpus.vocabs["X"]), v)
    out = generate_pseudo(small_quad.zx, small_quad.zy, table, sources, EMConfig(), seed=0)
    assert len(out) + out.dropped == len(sources)
    for pp, src in zip(out, sources):
        assert pp.pair.src == src.src and pp.other == src.tgt
        assert pp.weight == pytest.approx(1 / v, abs=1e-12)
        expect = small_quad.zx.log_prob(pp.pair.src, pp.latent) - small_quad.zy.log_prob(pp.other, pp.latent)
        assert pp.gen_log_ratio == pytest.approx(expect, abs=1e-9)
    thr = generate_pseudo(small_quad.zx, small_quad.zy, table, sources, EMConfig(weight_mode="threshold"), 0)
    assert {pp.weight for pp in thr} <= {0.0}


def test_reverse_direction_uses_the_y_side(small_quad, tiny_corpus):
    sources = tiny_corpus.rich_xy[:4]
    out = generate_pseudo(small_quad.zy, small_quad.zx, None, sources, EMConfig(gen_mode="sample"), seed=1)
    for pp in out:
        assert pp.pair.src.lang == "Y" and pp.other.lang == "X" and pp.weight == 1.0


def test_deterministic_generator_ignores_the_seed():
    gen = point_mass("z|x", 3, 3, 2, (2, 1))
    other = TabularModel("z|y", 3, 3, 2)
    sources = [rich((0,), (1,)), rich((2, 2), (0,))]
    cfg = EMConfig(gen_mode="sample")
    a = generate_pseudo(gen, other, None, sources, cfg, seed=0)
    b = generate_pseudo(gen, other, None, sources, cfg, seed=99)
    assert [p.latent.tokens for p in a] == [p.latent.tokens for p in b] == [(2, 1), (2, 1)]


def test_empty_generations_are_dropped():
    gen = point_mass("z|x", 3, 3, 2, ())
    out = generate_pseudo(gen, TabularModel("z|y", 3, 3, 2), None, [rich((0,), (1,))], EMConfig(), 0)
    assert len(out) == 0 and out.dropped == 1


def test_zero_weights_reduce_to_mle():
    quad, pairs = tabular_quad()
    pseudo = [PseudoPair(ParallelPair(seq((0,), "X"), seq((1, 2), "Z")), seq((1,), "Y"), 0.0, 1.7)]
    true = [ParallelPair(seq((2,), "X"), seq((0,), "Z"))]
    ref = quad.zx.clone()
    _, g = ref.weighted_grad([true[0].src], [true[0].tgt], [1.0])
    expect = flat(ref) + 0.3 * g[0].ravel()
    e_step_update(quad, "X=>Y", MixedBatch(pseudo, true), sgd())
    np.testing.assert_allclose(flat(quad.zx), expect, atol=1e-14)

    true_yz = [ParallelPair(seq((1,), "Z"), seq((2, 2), "Y"))]
    ref = quad.yz.clone()
    _, g = ref.weighted_grad([true_yz[0].src], [true_yz[0].tgt], [1.0])
    expect = flat(ref) + 0.3 * g[0].ravel()
    m_step_update(quad, "X=>Y", MixedBatch(pseudo, true_yz), sgd())
    np.testing.assert_allclose(flat(quad.yz), expect, atol=1e-14)


def _enumerated_pseudo(gen, scorer, x, y):
    # every z with weight n * p(z|x), so the batch mean is the exact expectation
    zs = all_sequences(gen.tgt_vocab, gen.max_len)
    p = gen.distribution(x)
    out = []
    for z, pz in zip(zs, p):
        ratio = gen.log_prob(x, z) - scorer.log_prob(y, z)
        out.append(PseudoPair(ParallelPair(seq(x, "X"), seq(z, "Z")), seq(y, "Y"), len(zs) * pz, ratio))
    return out


def test_e_step_descends_the_exact_kl_gradient():
    quad, pairs = tabular_quad(1)
    x, y = pairs[0].src.tokens, pairs[0].tgt.tokens
    grad = exact.kl_grad_analytic(quad.zx, quad.zy, x, y)
    before = flat(quad.zx)
    e_step_update(quad, "X=>Y", MixedBatch(_enumerated_pseudo(quad.zx, quad.zy, x, y), []), sgd(0.5))
    np.testing.assert_allclose(flat(quad.zx) - before, -0.5 * grad, atol=1e-12)


def test_equal_generator_and_scorer_gives_no_update():
    quad, pairs = tabular_quad(2)
    quad.zy.logits[...] = quad.zx.logits  # same alphabet sizes, same tables
    x, y = (0,), (0,)
    before = flat(quad.zx)
    e_step_update(quad, "X=>Y", MixedBatch(_enumerated_pseudo(quad.zx, quad.zy, x, y), []), sgd())
    np.testing.assert_array_equal(flat(quad.zx), before)


def test_single_deterministic_latent_is_an_mle_step():
    quad, _ = tabular_quad(3)
    z, y = seq((2,), "Z"), seq((1, 0), "Y")
    ref = quad.yz.clone()
    _, g = ref.weighted_grad([z], [y], [1.0])
    expect = flat(ref) + 0.3 * g[0].ravel()
    pp = PseudoPair(ParallelPair(seq((0,), "X"), z), y, 1.0, -0.4)
    m_step_update(quad, "X=>Y", MixedBatch([pp], []), sgd())
    np.testing.assert_allclose(flat(quad.yz), expect, atol=1e-14)


def test_only_the_direction_models_move():
    quad, pairs = tabular_quad(4)
    snap = {r: flat(m) for r, m in quad.models().items()}
    pseudo = generate_pseudo(quad.zy, quad.zx, None, pairs, EMConfig(), 0)
    e_step_update(quad, "Y=>X", MixedBatch(pseudo, []), sgd())
    m_step_update(quad, "Y=>X", MixedBatch(pseudo, []), sgd())
    moved = {r for r, m in quad.models().items() if not np.array_equal(flat(m), snap[r])}
    assert moved == {"z|y", "x|z"}


def test_empty_batches_are_counted_no_ops():
    quad, _ = tabular_quad()
    before = skipped_updates()
    stats = e_step_update(quad, "X=>Y", MixedBatch([], []), sgd())
    m_step_update(quad, "X=>Y", MixedBatch([], []), sgd())
    after = skipped_updates()
    assert not stats.applied
    assert after["e_step"] == before["e_step"] + 1 and after["m_step"] == before["m_step"] + 1


def test_token_rewards():
    quad, _ = tabular_quad(5)
    x, y, z = seq((1, 2), "X"), seq((0,), "Y"), seq((2, 0), "Z")
    r = token_rewards(quad.zx, quad.zy, x, y, z)
    assert len(r) == 3
    ratio = quad.zx.log_prob(x, z) - quad.zy.log_prob(y, z)
    assert r.sum() + ratio == pytest.approx(0.0, abs=1e-9)
    same = TabularModel("z|y", 3, 3, 2, logits=quad.zx.logits.copy())
    np.testing.assert_array_equal(token_rewards(quad.zx, same, x, x.tokens, z), 0.0)
    # uniform generator (over 3 tokens + end), deterministic scorer on z
    uniform = TabularModel("z|x", 3, 3, 3)
    sure = point_mass("z|y", 3, 3, 3, (2, 0))
    np.testing.assert_allclose(token_rewards(uniform, sure, x, y, z), math.log(4), atol=1e-12)
    with pytest.raises(ContractError):
        token_rewards(quad.zx, quad.zy, x, y, seq((), "Z"))


def test_lower_bound_estimate(small_quad, tiny_corpus):
    pseudo = generate_pseudo(small_quad.zx, small_quad.zy, None, tiny_corpus.rich_xy[:5], EMConfig(), 0)
    lb = lower_bound_estimate(small_quad, "X=>Y", pseudo)
    assert np.isfinite(lb) and lb < 0
    assert math.isnan(lower_bound_estimate(small_quad, "X=>Y", []))


def test_zero_budget_returns_the_input(small_quad, tiny_corpus):
    best, curve = ta_nmt_train(small_quad, tiny_corpus, config=EMConfig(max_steps=0))
    for role, m in small_quad.models().items():
        np.testing.assert_array_equal(best.get(role).get_flat_params(), m.get_flat_params())
    assert len(curve) == 0


def test_missing_pairs_are_a_config_error(small_quad, tiny_corpus):
    import dataclasses

    broken = dataclasses.replace(tiny_corpus, low_yz=[])
    with pytest.raises(ConfigError):
        ta_nmt_train(small_quad, broken, config=EMConfig(max_steps=1))


def _config(**kw):
    base = dict(max_steps=4, eval_every=2, batch_size=8, valid_limit=6, gen_width=2, valid_beam_width=2)
    base.update(kw)
    return EMConfig(**base)


def test_interrupted_run_resumes_identically(small_quad, tiny_corpus, tmp_path):
    straight = TATrainer(small_quad, tiny_corpus, config=_config(), seed=3, run_dir=tmp_path / "a")
    straight.run()
    first = TATrainer(small_quad, tiny_corpus, config=_config(), seed=3, run_dir=tmp_path / "b")
    first.run(until=2)
    second = TATrainer(small_quad, tiny_corpus, config=_config(), seed=3, run_dir=tmp_path / "b")
    assert second.resume() and second.step == 2
    second.run()
    for role in small_quad.models():
        np.testing.assert_array_equal(straight.quad.get(role).get_flat_params(),
                                      second.quad.get(role).get_flat_params())
    dump = lambda rows: [json.dumps(r, sort_keys=True) for r in rows]  # noqa: E731
    assert dump(straight.curve.rows) == dump(second.curve.rows)
    assert (tmp_path / "a" / "zx-4.ckpt").exists() and (tmp_path / "a" / "state.json").exists()


def test_curve_rows_and_best_selection(small_quad, tiny_corpus):
    best, curve = ta_nmt_train(small_quad, tiny_corpus, config=_config(), seed=0)
    assert isinstance(best, ModelQuad)
    steps = sorted({r["step"] for r in curve.rows})
    assert steps == [0, 2, 4]
    for r in curve.rows:
        assert {"step", "role", "valid_bleu", "lower_bound_estimate", "mean_weight"} <= set(r)
