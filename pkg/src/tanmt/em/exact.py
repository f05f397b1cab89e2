"""Exact (enumeration-based) quantities for tabular models.

These functions compute the log-likelihood of a rich pair with Z
marginalised out, its lower bound under Q(z) = p(z|x), the gap between the
two, and gradients of KL(p(z|x) || p(z|y)), all by summing over every latent
sentence.  They serve as oracles for the sampled training procedures.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from ..errors import ContractError, OracleOnlyError
from ..optim import step as optim_step
from ..seqmodel.tabular import TabularModel, all_sequences
from .quad import ModelQuad, get_direction


def _require_tabular(*models):
    for m in models:
        if not isinstance(m, TabularModel):
            raise OracleOnlyError("exact computations need enumerable tabular models")


def _check_chain(gen, dec):
    if (dec.src_vocab, dec.max_src_len) != (gen.tgt_vocab, gen.max_len):
        raise ContractError("decoder sources must enumerate exactly the generator's targets")


def _as_pairs(pairs):
    out = []
    for p in pairs:
        if hasattr(p, "src"):
            out.append((p.src, p.tgt))
        else:
            out.append((p[0], p[1]))
    return out


def _check_len(model, max_len):
    if max_len is not None and max_len != model.max_len:
        raise ContractError(f"latent sequences enumerate up to length {model.max_len}, not {max_len}")


def _xlogy_sum(p, logv):
    # sum p * logv with the convention 0 * log 0 = 0
    mask = p > 0
    return float(np.sum(p[mask] * logv[mask]))


def exact_log_likelihood(zx, yz, pairs, max_len=None) -> float:
    """sum over (x, y) of log sum_z p(z|x) p(y|z)."""
    _require_tabular(zx, yz)
    _check_chain(zx, yz)
    _check_len(zx, max_len)
    return float(sum(logsumexp(zx.log_distribution(x) + yz.log_prob_all_sources(y))
                     for x, y in _as_pairs(pairs)))


def exact_lower_bound(zx, yz, pairs, max_len=None) -> float:
    """sum over (x, y) of sum_z p(z|x) log p(y|z)."""
    _require_tabular(zx, yz)
    _check_chain(zx, yz)
    _check_len(zx, max_len)
    return float(sum(_xlogy_sum(zx.distribution(x), yz.log_prob_all_sources(y))
                     for x, y in _as_pairs(pairs)))


def kl_divergence(p_model, q_model, p_src, q_src) -> float:
    _require_tabular(p_model, q_model)
    lp, lq = p_model.log_distribution(p_src), q_model.log_distribution(q_src)
    with np.errstate(invalid="ignore"):
        diff = lp - lq  # nan only where p = 0, masked below
    return _xlogy_sum(np.exp(lp), diff)


def exact_gap(zx, zy, pairs, max_len=None) -> float:
    """sum over (x, y) of KL(p(z|x) || p(z|y))."""
    _require_tabular(zx, zy)
    _check_len(zx, max_len)
    return float(sum(kl_divergence(zx, zy, x, y) for x, y in _as_pairs(pairs)))


def kl_grad_enumeration(p_model, q_model, p_src, q_src) -> np.ndarray:
    """sum_z p(z) log(p(z)/q(z)) grad log p(z): the score-function integrand
    averaged exactly over all latent sequences."""
    _require_tabular(p_model, q_model)
    lp, lq = p_model.log_distribution(p_src), q_model.log_distribution(q_src)
    probs = np.exp(lp)
    seqs = all_sequences(p_model.tgt_vocab, p_model.max_len)
    keep = probs > 0
    weights = np.where(keep, probs * (lp - np.where(keep, lq, 0.0)), 0.0)
    _, (grad,) = p_model.weighted_grad([p_src] * len(seqs), seqs, weights)
    return grad.ravel()


def kl_grad_analytic(p_model, q_model, p_src, q_src) -> np.ndarray:
    """Gradient of KL(p || q) w.r.t. p's logits by backward recursion over
    prefixes, without sampling or the score-function identity.

    With A(h, t) = log p(t|h) - log q(t|h) + K(ht) and K(h) = sum_t p(t|h) A(h, t)
    (the KL of the continuation after prefix h), the derivative with respect to
    the logit of token k at context h is P(h) p(k|h) (A(h, k) - K(h)).
    """
    _require_tabular(p_model, q_model)
    if (p_model.tgt_vocab, p_model.max_len) != (q_model.tgt_vocab, q_model.max_len):
        raise ContractError("p and q must share the target space")
    v, n = p_model.tgt_vocab, p_model.max_len
    lp = p_model.log_softmax()[p_model.src_index(p_src)]
    lq = q_model.log_softmax()[q_model.src_index(q_src)]
    pp = np.exp(lp)
    with np.errstate(invalid="ignore"):
        local = np.where(pp > 0, lp - lq, 0.0)

    def level(length):
        off = sum(v ** k for k in range(length))
        return slice(off, off + v ** length)

    future = np.zeros(0)
    adv = np.zeros_like(lp)
    for length in range(n - 1, -1, -1):
        sl = level(length)
        a = local[sl].copy()
        if length + 1 < n:
            a[:, :v] += future.reshape(v ** length, v)
        k_h = np.sum(np.where(pp[sl] > 0, pp[sl] * a, 0.0), axis=1)
        adv[sl] = a - k_h[:, None]
        future = k_h
    grad = np.zeros_like(p_model.logits)
    prob = np.ones(1)
    for length in range(n):
        sl = level(length)
        grad[p_model.src_index(p_src), sl] = prob[:, None] * pp[sl] * adv[sl]
        prob = (prob[:, None] * pp[sl][:, :v]).reshape(-1)
    return grad.ravel()


def kl_grad_estimate(p_model, q_model, p_src, q_src, n_samples: int, seed: int,
                     baseline: float | None = None, return_samples: bool = False):
    """Monte-Carlo estimate of grad KL(p || q) from ``n_samples`` draws of p.

    Each draw contributes ``(log p(z) - log q(z) - baseline) * grad log p(z)``.
    With ``return_samples`` the per-draw vectors are returned as rows.
    """
    from ..seqmodel.decoding import sample_batch

    rng = np.random.default_rng(seed)
    zs, lps = sample_batch(p_model, [p_src] * n_samples, rng)
    ratios = lps - q_model.log_probs([q_src] * n_samples, zs)
    if baseline is not None:
        ratios = ratios - baseline
    if not return_samples:
        _, grads = p_model.weighted_grad([p_src] * n_samples, zs, ratios / n_samples)
        return np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in grads])
    return np.stack([r * p_model.grad_log_prob(p_src, z) for r, z in zip(ratios, zs)])


# --------------------------------------------------------------------------
# paper-structured instances and exact EM


def posterior_model(gen, dec, pairs, template):
    """Copy of ``template`` whose p(z | y) is the exact posterior
    p(z | x, y) proportional to gen(z|x) dec(y|z) for every (x, y) in ``pairs``.

    This makes the approximation p(z|x,y) = p(z|y) exact on those pairs.
    """
    _require_tabular(gen, dec, template)
    _check_chain(gen, dec)
    post = template.clone()
    seen = {}
    for x, y in _as_pairs(pairs):
        key = post.src_tokens(y)
        xk = gen.src_tokens(x)
        if seen.setdefault(key, xk) != xk:
            raise ContractError("each conditioning sentence may pair with one source only")
        logj = gen.log_distribution(x) + dec.log_prob_all_sources(y)
        post.set_distribution(y, np.exp(logj - logsumexp(logj)))
    return post


def _distinct_sequences(rng, vocab, max_len, n):
    pool = all_sequences(vocab, max_len)[1:]
    if n > len(pool):
        raise ContractError("not enough distinct sentences for the requested pairs")
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in idx]


def random_tabular_quad(rng, vocab=(3, 3, 3), max_len: int = 3, n_pairs: int = 4, scale: float = 1.0,
                        posterior: bool = True):
    """Random tabular quad and rich pairs ``[(x, y), ...]``.

    ``vocab`` gives the X, Y and Z alphabet sizes.  With ``posterior`` the
    z|y model equals the exact posterior on the returned pairs.
    """
    vx, vy, vz = vocab
    zx = TabularModel.random("z|x", vx, vz, max_len, max_len, rng, scale)
    yz = TabularModel.random("y|z", vz, vy, max_len, max_len, rng, scale)
    zy = TabularModel.random("z|y", vy, vz, max_len, max_len, rng, scale)
    xz = TabularModel.random("x|z", vz, vx, max_len, max_len, rng, scale)
    xs = _distinct_sequences(rng, vx, max_len, n_pairs)
    ys = _distinct_sequences(rng, vy, max_len, n_pairs)
    pairs = list(zip(xs, ys))
    if posterior:
        zy = posterior_model(zx, yz, pairs, zy)
    return ModelQuad(zx, yz, zy, xz), pairs


def _direction_pairs(direction, pairs):
    pairs = _as_pairs(pairs)
    return pairs if direction.gen_side == 0 else [(y, x) for x, y in pairs]


def direction_lower_bound(quad, direction, pairs) -> float:
    d = get_direction(direction)
    return exact_lower_bound(quad.get(d.generator), quad.get(d.decoder), _direction_pairs(d, pairs))


def exact_e_step(quad, direction, pairs, opt, use_posterior: bool = False) -> None:
    """One descent step of sum KL(p(z|src) || scorer(z|other)) on the generator,
    with the gradient computed by enumeration.

    With ``use_posterior`` the scorer is replaced by the exact posterior of the
    current generator and decoder.
    """
    d = get_direction(direction)
    gen, dec = quad.get(d.generator), quad.get(d.decoder)
    dpairs = _direction_pairs(d, pairs)
    scorer = posterior_model(gen, dec, dpairs, quad.get(d.scorer)) if use_posterior else quad.get(d.scorer)
    grad = sum(kl_grad_enumeration(gen, scorer, s, o) for s, o in dpairs)
    optim_step(gen.params(), [grad.reshape(gen.logits.shape)], opt, "descend")


def exact_m_step(quad, direction, pairs, opt) -> None:
    """One ascent step of sum_z p(z|src) log p(other|z) on the decoder."""
    d = get_direction(direction)
    gen, dec = quad.get(d.generator), quad.get(d.decoder)
    zs = all_sequences(gen.tgt_vocab, gen.max_len)
    grad = np.zeros_like(dec.logits)
    for s, o in _direction_pairs(d, pairs):
        _, (g,) = dec.weighted_grad(zs, [o] * len(zs), gen.distribution(s))
        grad += g
    optim_step(dec.params(), [grad], opt, "ascend")
