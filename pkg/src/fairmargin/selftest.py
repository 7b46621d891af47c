"""Built-in oracle checks, runnable without the test suite installed.

Each check recomputes an expected value through an independent route
(published fairness rows, brute-force loops, finite differences, exact
value iteration) and compares the implementation against it.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .data import DatasetSpec, generate_synthetic
from .losses import LogitBatch, LossConfig, LossKind, adaptive_loss, \
    cosine_loss_and_grad, cross_entropy_mean, loss_gradients
from .mdp import MarginAction, MarginState, StateSpace
from .metrics import intra_stats_from_arrays, inter_stats_from_arrays, std_ser
from .model import batch_loss_and_gradients, init_model
from .qlearning import Transition, tabular_value_iteration

PUBLISHED_FAIRNESS_ROWS = [
    ((0.8967, 0.8797, 0.8468, 0.8417), 2.64, 1.53),
    ((0.8988, 0.8852, 0.8513, 0.8342), 2.98, 1.64),
    ((0.9043, 0.8832, 0.8475, 0.8332), 3.26, 1.74),
    ((0.9067, 0.8777, 0.8437, 0.8297), 3.46, 1.83),
]


def check_fairness_rows():
    for accs, want_std, want_ser in PUBLISHED_FAIRNESS_ROWS:
        std, ser = std_ser(accs)
        if abs(std - want_std) > 0.01 or abs(ser - want_ser) > 0.01:
            return False, f"row {accs}: got std={std:.3f} ser={ser:.3f}"
    return True, "four published accuracy rows reproduce STD and SER"


def check_metric_brute_force():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((24, 6))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    idents = np.repeat(np.arange(6), 4)
    groups = np.asarray([i % 2 for i in idents])
    theta, dist = intra_stats_from_arrays(emb, idents, groups, 0)
    centers = {i: emb[idents == i].mean(axis=0) for i in range(6)}
    want_cos = []
    for ident in (0, 2, 4):
        rows = np.nonzero(idents == ident)[0]
        c = centers[ident]
        want_cos.append(np.mean([
            float(emb[r] @ c / (np.linalg.norm(emb[r]) * np.linalg.norm(c)))
            for r in rows]))
    if abs(dist - np.mean(want_cos)) > 1e-12:
        return False, f"intra cosine {dist} != brute force {np.mean(want_cos)}"
    _, d_inter = inter_stats_from_arrays(emb, idents, groups, 0)
    best = []
    for ident in (0, 2, 4):
        cands = [float(centers[ident] @ centers[o]
                       / (np.linalg.norm(centers[ident]) * np.linalg.norm(centers[o])))
                 for o in (0, 2, 4) if o != ident]
        best.append(max(cands))
    if abs(d_inter - np.mean(best)) > 1e-12:
        return False, f"inter cosine {d_inter} != brute force {np.mean(best)}"
    return True, "geometry statistics match naive loops"


def check_reduction_identities():
    rng = np.random.default_rng(1)
    for _ in range(25):
        cos = rng.uniform(-0.95, 0.95, size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        batch_groups = rng.integers(0, 3, size=5)
        batch = LogitBatch(cos, labels, batch_groups)
        uniform = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=30.0, base_margin=0.3,
                             group_margins=(0.3, 0.3, 0.3))
        plain = LossConfig(kind=LossKind.ARCFACE, scale=30.0, base_margin=0.3)
        a, _ = adaptive_loss(batch, uniform)
        b, _ = cosine_loss_and_grad(batch, plain)
        if abs(a - b) > 1e-12:
            return False, f"uniform adaptive {a} != fixed margin {b}"
        zero = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=30.0, base_margin=0.0,
                          group_margins=(0.0, 0.0, 0.0))
        c, _ = adaptive_loss(batch, zero)
        d = cross_entropy_mean(30.0 * batch.cosines.copy(), batch.labels)
        if abs(c - d) > 1e-12:
            return False, f"zero margin {c} != scaled-cosine softmax {d}"
    return True, "margin-loss reduction identities hold to 1e-12"


def check_gradients():
    rng = np.random.default_rng(2)
    model = init_model(4, [6], 3, 3, seed=1)
    x = rng.standard_normal((4, 4))
    y = rng.integers(0, 3, size=4)
    groups = rng.integers(0, 2, size=4)
    cfg = LossConfig(kind=LossKind.ADAPTIVE_ARC, scale=10.0, base_margin=0.2,
                     group_margins=(0.2, 0.4))
    _, gw, _, gi = batch_loss_and_gradients(model, x, y, groups, cfg)
    step = 1e-5
    w = model.enc_weights[0]
    for idx in ((0, 0), (2, 1), (3, 2)):
        orig = w[idx]
        w[idx] = orig + step
        hi = batch_loss_and_gradients(model, x, y, groups, cfg)[0]
        w[idx] = orig - step
        lo = batch_loss_and_gradients(model, x, y, groups, cfg)[0]
        w[idx] = orig
        fd = (hi - lo) / (2 * step)
        if abs(fd - gw[0][idx]) > 1e-4 * max(1.0, abs(fd)):
            return False, f"encoder gradient at {idx}: analytic {gw[0][idx]}, fd {fd}"
    return True, "analytic gradients match central differences"


def check_value_iteration():
    space = StateSpace(1, (0.0, 0.1), (), 0.1)
    a = MarginState(0, 0, 0)
    b = MarginState(0, 1, 0)
    transitions = [
        Transition(a, MarginAction.STAY, 1.0, a),
        Transition(b, MarginAction.STAY, 1.0, b),
        Transition(a, MarginAction.UP, 0.0, b),
        Transition(b, MarginAction.DOWN, 0.0, a),
    ]
    table = tabular_value_iteration(transitions, space, 0.9)
    want = 1.0 / (1.0 - 0.9)
    if abs(table.q[space.state_index(a), 0] - want) > 1e-9:
        return False, f"loop Q {table.q[space.state_index(a), 0]} != {want}"
    table0 = tabular_value_iteration(transitions, space, 0.0)
    if table0.q[space.state_index(a), 0] != 1.0:
        return False, "discount-0 table is not the mean reward"
    return True, "tabular value iteration matches closed forms"


def check_data_determinism():
    spec = DatasetSpec(n_groups=2, identities_per_group=(3, 3), samples_per_identity=4,
                       d_in=6, group_concentration=(30.0, 30.0),
                       group_center_spread=(1.0, 1.0), seed=7)
    a = generate_synthetic(spec)
    b = generate_synthetic(spec)
    if not np.array_equal(a.features, b.features):
        return False, "same-seed generation differs"
    return True, "dataset generation is bit-reproducible"


def check_kernel_backends():
    if len(kernels.available_backends()) < 2:
        return True, "single backend present (compiled core not built); skipped"
    model_a = init_model(6, [8], 4, 5, seed=3)
    model_b = model_a.copy()
    rng = np.random.default_rng(4)
    x = rng.standard_normal((7, 6))
    y = rng.integers(0, 5, size=7)
    groups = rng.integers(0, 3, size=7)
    margins = np.asarray([0.0, 0.3, 0.5])
    for mode in (0, 1, 2):
        la = kernels.sgd_batch_step(model_a, x, y, groups, margins, mode, 20.0,
                                    0.05, 0.9, 5e-4, backend="python")
        lb = kernels.sgd_batch_step(model_b, x, y, groups, margins, mode, 20.0,
                                    0.05, 0.9, 5e-4, backend="compiled")
        if abs(la - lb) > 1e-9:
            return False, f"backend losses differ: {la} vs {lb}"
    for wa, wb in zip(model_a.enc_weights, model_b.enc_weights):
        if not np.allclose(wa, wb, rtol=1e-9, atol=1e-12):
            return False, "backend parameter updates diverged"
    return True, "python and compiled kernels agree"


CHECKS = [
    ("fairness-rows", check_fairness_rows),
    ("metric-brute-force", check_metric_brute_force),
    ("loss-reductions", check_reduction_identities),
    ("gradient-check", check_gradients),
    ("value-iteration", check_value_iteration),
    ("data-determinism", check_data_determinism),
    ("kernel-backends", check_kernel_backends),
]


def run_selftest(emit=print) -> bool:
    """Run every check; returns True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, message = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, message = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        emit(f"[{'PASS' if ok else 'FAIL'}] {name}: {message}")
    return all_ok
