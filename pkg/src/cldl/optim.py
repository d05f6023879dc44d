"""Adam with decoupled weight decay, and the step learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr, weight_decay=0.0):
    """One in-place Adam update.

    Weight decay is decoupled: each parameter additionally shrinks by
    ``lr * weight_decay * param`` (using the pre-update value).
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data -= lr * update
    return params


def lr_schedule(epoch, base_lr, drop_epochs=(), factor=0.1):
    """``base_lr * factor**k`` where k counts drop epochs <= ``epoch`` (1-based)."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    k = sum(1 for e in drop_epochs if e <= epoch)
    return base_lr * factor ** k
