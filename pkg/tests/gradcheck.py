"""Finite-difference gradient comparison shared by the test modules."""

import numpy as np

from cldl import tensor as T


def relative_error(analytic, numeric):
    scale = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def worst_grad_error(loss_fn, tensors, h=1e-5):
    """Max relative error between backward() and central differences over ``tensors``."""
    analytic = T.grad(loss_fn(), tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        fd = T.finite_difference_grad(lambda _: loss_fn(), t, h)
        worst = max(worst, relative_error(g.data, fd.data))
    return worst


def sampled_grad_error(loss_fn, tensors, n_coords=30, seed=0, h=1e-5):
    """Like worst_grad_error, but central differences on at most ``n_coords`` entries per tensor."""
    rng = np.random.default_rng(seed)
    analytic = T.grad(loss_fn(), tensors)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = loss_fn().item()
            flat[i] = old - h
            down = loss_fn().item()
            flat[i] = old
            worst = max(worst, relative_error(g.data.reshape(-1)[i:i + 1], np.array([(up - down) / (2 * h)])))
    return worst
