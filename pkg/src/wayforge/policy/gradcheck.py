"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .networks import flatten_params, unflatten_params
from .training import loss_and_grads


def gradient_check(net, params, Q, Y, mask, n_samples=200, step=1e-5, seed=0, loss_scale=1.0):
    """Max relative error between analytic gradients and central differences
    over ``n_samples`` randomly chosen parameters."""
    layout = net.layout()
    _, grads = loss_and_grads(net, params, Q, Y, mask, loss_scale)
    flat = flatten_params(params, layout)
    gflat = flatten_params(grads, layout)
    rng = np.random.default_rng(seed)
    n = min(n_samples, flat.size)
    idx = rng.choice(flat.size, size=n, replace=False)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        lp, _ = _loss_only(net, flat, layout, Q, Y, mask, loss_scale)
        flat[i] = orig - step
        lm, _ = _loss_only(net, flat, layout, Q, Y, mask, loss_scale)
        flat[i] = orig
        fd = (lp - lm) / (2 * step)
        rel = abs(gflat[i] - fd) / max(abs(gflat[i]) + abs(fd), 1e-6)
        worst = max(worst, rel)
    return worst


def _loss_only(net, flat, layout, Q, Y, mask, loss_scale):
    params = unflatten_params(flat, layout)
    pred, _ = net.forward(params, Q)
    d = (pred - Y) * mask[..., None]
    denom = mask.sum() * pred.shape[-1]
    return loss_scale * float((d * d).sum() / denom), None
