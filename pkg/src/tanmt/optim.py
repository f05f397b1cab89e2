"""Update rules and a finite-difference gradient checker.

Updates work in place on any array type supporting ``*=``, ``+=``, ``-=`` and
``** 0.5`` (numpy arrays and torch tensors both qualify), so the same code
drives tabular and neural models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError


@dataclass
class OptimizerState:
    rule: str = "adadelta"
    learning_rate: float = 1.0
    rho: float = 0.95
    epsilon: float = 1e-6
    clip_norm: float | None = 5.0
    clip_mode: str = "clip"
    accumulators: dict = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.rule not in ("adadelta", "sgd"):
            raise ContractError(f"unknown update rule {self.rule!r}")
        if not 0.0 < self.rho < 1.0:
            raise ContractError("rho must lie in (0, 1)")
        if not self.epsilon > 0 or not self.learning_rate > 0:
            raise ContractError("epsilon and learning_rate must be > 0")
        if self.clip_mode not in ("clip", "rescale"):
            raise ContractError("clip_mode must be 'clip' or 'rescale'")

    def reset(self):
        self.accumulators = {}
        self.steps = 0


def global_norm(grads) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))


def normalize_gradients(grads, bound: float, mode: str = "clip") -> float:
    """Scale ``grads`` in place; returns the pre-scaling global norm.

    ``clip`` rescales only when the norm exceeds ``bound``; ``rescale`` always
    rescales to norm ``bound`` (a zero gradient is left alone).
    """
    norm = global_norm(grads)
    if norm > 0 and (mode == "rescale" or norm > bound):
        scale = bound / norm
        for g in grads:
            g *= scale
    return norm


def step(params, grads, state: OptimizerState, direction: str = "descend"):
    """Apply one update in place and return ``params``.

    ``direction="ascend"`` moves along the gradient (for log-likelihoods);
    ``descend`` moves against it.
    """
    if direction not in ("ascend", "descend"):
        raise ContractError("direction must be 'ascend' or 'descend'")
    if len(params) != len(grads):
        raise ContractError("params and grads are not aligned")
    for p, g in zip(params, grads):
        if tuple(p.shape) != tuple(g.shape):
            raise ContractError("gradient shape does not match its parameter")
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient; update skipped")
    grads = [g * 1.0 for g in grads]
    if state.clip_norm is not None:
        normalize_gradients(grads, state.clip_norm, state.clip_mode)
    sign = 1.0 if direction == "ascend" else -1.0
    lr = state.learning_rate
    if state.rule == "sgd":
        for p, g in zip(params, grads):
            p += (sign * lr) * g
    else:
        rho, eps = state.rho, state.epsilon
        acc = state.accumulators
        for i, (p, g) in enumerate(zip(params, grads)):
            if i not in acc:
                acc[i] = (g * 0.0, g * 0.0)
            sq_grad, sq_delta = acc[i]
            sq_grad *= rho
            sq_grad += (1.0 - rho) * g * g
            delta = ((sq_delta + eps) ** 0.5) / ((sq_grad + eps) ** 0.5) * g
            sq_delta *= rho
            sq_delta += (1.0 - rho) * delta * delta
            p += (sign * lr) * delta
    state.steps += 1
    return params


def finite_diff_check(loss, params, n_coords: int = 100, step_size: float = 1e-4, seed: int = 0,
                      grad=None, abs_floor: float = 1e-8) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``loss`` maps a flat float64 vector to a scalar.  ``grad`` maps the same
    vector to the analytic gradient; when omitted, ``loss`` must return a
    ``(value, gradient)`` tuple.  Coordinates where both gradients are below
    ``abs_floor`` in magnitude are compared by absolute error instead.
    """
    x = np.array(params, dtype=np.float64)
    if grad is None:
        value_fn = lambda v: loss(v)[0]  # noqa: E731
        analytic = np.asarray(loss(x)[1], dtype=np.float64)
    else:
        value_fn = loss
        analytic = np.asarray(grad(x), dtype=np.float64)
    rng = np.random.default_rng(seed)
    coords = rng.choice(x.size, size=min(n_coords, x.size), replace=False)
    worst = 0.0
    for i in coords:
        orig = x[i]
        x[i] = orig + step_size
        up = float(value_fn(x))
        x[i] = orig - step_size
        down = float(value_fn(x))
        x[i] = orig
        numeric = (up - down) / (2 * step_size)
        a = analytic[i]
        scale = max(abs(a), abs(numeric))
        err = abs(a - numeric) if scale < abs_floor else abs(a - numeric) / scale
        worst = max(worst, err)
    return worst
