"""Pure-numpy training-step backend.

Reference implementation of the fused batch step: forward pass, loss,
backward pass, SGD-with-momentum update, and identity-column renorm.
The compiled backend in ``_core.pyx`` reimplements the same sequence
with C loops; both must stay numerically interchangeable.
"""

from __future__ import annotations

import numpy as np

from .losses import MODE_PLAIN, loss_gradients_core

BACKEND_NAME = "python"


def batch_gradients(enc_ws, enc_bs, ident_w, x, y, groups, margins_by_group,
                    mode, scale):
    """Loss and analytic gradients for one batch, without updating anything.

    Returns ``(loss, grads_w, grads_b, d_ident)``.
    """
    # Forward, keeping pre-activations for the backward pass.
    acts = [x]
    pres = []
    a = x
    for w, b in zip(enc_ws[:-1], enc_bs[:-1]):
        z = a @ w + b
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    z_final = a @ enc_ws[-1] + enc_bs[-1]

    loss, d_z, d_ident = loss_gradients_core(
        z_final, ident_w, y, margins_by_group[groups], mode, scale
    )

    # Backprop through the encoder stack.
    n_layers = len(enc_ws)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    delta = d_z
    for layer in range(n_layers - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ enc_ws[layer].T) * (pres[layer - 1] > 0.0)
    return loss, grads_w, grads_b, d_ident


def sgd_batch_step(enc_ws, enc_bs, vel_ws, vel_bs, ident_w, vel_ident,
                   x, y, groups, margins_by_group, mode, scale,
                   lr, momentum, weight_decay):
    """One fused train step on a batch; mutates parameters in place."""
    loss, grads_w, grads_b, d_ident = batch_gradients(
        enc_ws, enc_bs, ident_w, x, y, groups, margins_by_group, mode, scale
    )
    n_layers = len(enc_ws)

    # SGD with momentum; weight decay on encoder weight matrices only.
    for layer in range(n_layers):
        vel_ws[layer] *= momentum
        vel_ws[layer] -= lr * (grads_w[layer] + weight_decay * enc_ws[layer])
        enc_ws[layer] += vel_ws[layer]
        vel_bs[layer] *= momentum
        vel_bs[layer] -= lr * grads_b[layer]
        enc_bs[layer] += vel_bs[layer]
    vel_ident *= momentum
    vel_ident -= lr * d_ident
    ident_w += vel_ident
    if mode != MODE_PLAIN:
        ident_w /= np.linalg.norm(ident_w, axis=0, keepdims=True)
    return float(loss)
