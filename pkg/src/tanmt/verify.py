"""Exact-math oracle suite, runnable from the command line.

Every check is deterministic and runs on small tabular instances, so the
whole suite finishes in a few seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ParallelPair, TokenSeq
from .em import exact
from .evaluation.bleu import corpus_bleu
from .ibm1 import train_ibm1
from .optim import OptimizerState, finite_diff_check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _gap_and_jensen(n: int = 100, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst_gap, worst_slack = 0.0, float("inf")
    for _ in range(n):
        quad, pairs = exact.random_tabular_quad(rng, tuple(rng.integers(2, 6, size=3)), int(rng.integers(2, 4)),
                                                n_pairs=3)
        for x, y in pairs:
            ll = exact.exact_log_likelihood(quad.zx, quad.yz, [(x, y)])
            lb = exact.exact_lower_bound(quad.zx, quad.yz, [(x, y)])
            gap = exact.exact_gap(quad.zx, quad.zy, [(x, y)])
            worst_gap = max(worst_gap, abs(ll - lb - gap))
            worst_slack = min(worst_slack, ll - lb)
    return worst_gap, worst_slack


def check_gap_identity() -> CheckResult:
    worst, _ = _gap_and_jensen()
    return CheckResult("gap identity", worst <= 1e-9, f"max |L - lower bound - KL| = {worst:.2e}")


def check_jensen() -> CheckResult:
    _, slack = _gap_and_jensen()
    return CheckResult("Jensen bound", slack >= -1e-12, f"min L - lower bound = {slack:.3e}")


def check_estimator() -> CheckResult:
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        quad, pairs = exact.random_tabular_quad(rng, (3, 3, 3), 3, n_pairs=2)
        x, y = pairs[0]
        a = exact.kl_grad_analytic(quad.zx, quad.zy, x, y)
        e = exact.kl_grad_enumeration(quad.zx, quad.zy, x, y)
        worst = max(worst, float(np.abs(a - e).max()))
    return CheckResult("score-function expectation", worst <= 1e-8, f"max |enumeration - analytic| = {worst:.2e}")


def check_fixed_point() -> CheckResult:
    rng = np.random.default_rng(2)
    quad, pairs = exact.random_tabular_quad(rng, (3, 3, 3), 3, n_pairs=2, posterior=False)
    x, y = pairs[0]
    zy = quad.zy.clone()
    zy.logits[zy.src_index(y)] = quad.zx.logits[quad.zx.src_index(x)]
    g = exact.kl_grad_enumeration(quad.zx, zy, x, y)
    return CheckResult("zero-gradient fixed point", float(np.abs(g).max()) == 0.0, f"max |grad| = {np.abs(g).max():.1e}")


def check_em_monotone(iterations: int = 20) -> CheckResult:
    rng = np.random.default_rng(3)
    quad, pairs = exact.random_tabular_quad(rng, (3, 3, 3), 3, n_pairs=4)
    worst = 0.0
    for _ in range(iterations):
        for d in ("X=>Y", "Y=>X"):
            before = exact.direction_lower_bound(quad, d, pairs)
            exact.exact_e_step(quad, d, pairs, OptimizerState(rule="sgd", learning_rate=0.1, clip_norm=None),
                               use_posterior=True)
            mid = exact.direction_lower_bound(quad, d, pairs)
            exact.exact_m_step(quad, d, pairs, OptimizerState(rule="sgd", learning_rate=0.1, clip_norm=None))
            after = exact.direction_lower_bound(quad, d, pairs)
            worst = min(worst, mid - before, after - mid)
    return CheckResult("exact EM monotonicity", worst >= -1e-9, f"largest decrease = {-worst:.2e}")


def check_tabular_gradient() -> CheckResult:
    rng = np.random.default_rng(4)
    quad, pairs = exact.random_tabular_quad(rng, (3, 3, 3), 3, n_pairs=2)
    x, y = pairs[0]
    zx = quad.zx

    def kl(v):
        m = zx.clone()
        m.set_flat_params(v)
        return exact.kl_divergence(m, quad.zy, x, y)

    err = finite_diff_check(kl, zx.get_flat_params(), 100, 1e-5,
                            grad=lambda v: exact.kl_grad_analytic(zx, quad.zy, x, y))
    return CheckResult("analytic KL gradient vs finite differences", err <= 1e-4, f"max rel. error = {err:.2e}")


def check_ibm1() -> CheckResult:
    rng = np.random.default_rng(5)
    key = rng.permutation(20)
    pairs = []
    for _ in range(100):
        s = rng.integers(0, 20, size=int(rng.integers(3, 8)))
        pairs.append(ParallelPair(TokenSeq(tuple(int(t) for t in s), "X"),
                                  TokenSeq(tuple(int(key[t]) for t in s), "Z")))
    table = train_ibm1(pairs, 20, 20, 20)
    steps = np.diff(table.history)
    acc = float(np.mean(table.t[:, :20].argmax(axis=0) == key))
    ok = steps.min() >= -1e-9 and acc >= 0.9
    return CheckResult("IBM Model 1", ok, f"min LL increase = {steps.min():.2e}, key recovery = {acc:.0%}")


def check_bleu() -> CheckResult:
    refs = [(1, 2, 3, 4, 5), (6, 7, 8, 9)]
    r = corpus_bleu(refs, refs)
    return CheckResult("BLEU identity", r.percent == 100.0, f"BLEU = {r.percent:.2f}")


CHECKS = (check_gap_identity, check_jensen, check_estimator, check_fixed_point, check_em_monotone,
          check_tabular_gradient, check_ibm1, check_bleu)


def run_all() -> list[CheckResult]:
    return [check() for check in CHECKS]
