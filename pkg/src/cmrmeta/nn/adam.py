"""Bias-corrected Adam over :class:`ParamSet` values."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .params import NumericError, ParamSet


@dataclass
class AdamState:
    first_moment: ParamSet
    second_moment: ParamSet
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: ParamSet, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, lr, beta1, beta2, epsilon)

    def clone(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(params: ParamSet, grads: ParamSet, state: AdamState) -> ParamSet:
    """Return updated parameters; advances ``state`` in place."""
    params.require_congruent(grads)
    params.require_congruent(state.first_moment)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    out = []
    m_new, v_new = [], []
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.first_moment[name] + (1.0 - b1) * g
        v = b2 * state.second_moment[name] + (1.0 - b2) * g * g
        m_new.append((name, m))
        v_new.append((name, v))
        out.append((name, p - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)))
    state.first_moment = ParamSet(m_new)
    state.second_moment = ParamSet(v_new)
    return ParamSet(out)
