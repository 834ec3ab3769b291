"""AdamW with decoupled weight decay and a linear-warmup cosine schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

ADAM_EPS = 1e-8


def lr_at(step, total_steps, warmup_steps, peak_lr):
    """Learning rate at ``step``: linear ramp from 0, then half-cosine decay to 0."""
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    decay_steps = total_steps - warmup_steps
    if decay_steps <= 0:
        return peak_lr
    progress = min(max((step - warmup_steps) / decay_steps, 0.0), 1.0)
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls(
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def adamw_step(params, grads, state, lr, beta1=0.9, beta2=0.95, weight_decay=0.0, eps=ADAM_EPS):
    """One AdamW update on dicts of arrays; returns ``(new_params, new_state)``.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``.
    Inputs are not modified.
    """
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ContractError("parameter, gradient and state keys differ")
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for k, theta in params.items():
        g = grads[k]
        if g.shape != theta.shape or state.m[k].shape != theta.shape:
            raise ContractError(f"shape mismatch for {k}: {theta.shape} vs {g.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[k] = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * theta)
        new_m[k] = m
        new_v[k] = v
    return new_params, OptimizerState(new_m, new_v, t)
