"""Throughput benchmark comparing the training-step backends."""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .data import DatasetSpec, generate_synthetic
from .losses import MODE_ANGLE
from .model import init_model


def bench_backend(backend, batch_size=64, n_identities=70, d_in=16, hidden=(32,),
                  d=8, steps=400, seed=0):
    """Steps/second of the fused train step on a representative workload."""
    rng = np.random.default_rng(seed)
    model = init_model(d_in, hidden, d, n_identities, seed=seed)
    x = rng.standard_normal((batch_size, d_in))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = rng.integers(0, n_identities, size=batch_size)
    groups = rng.integers(0, 4, size=batch_size)
    margins = np.asarray([0.0, 0.2, 0.4, 0.6])
    # one warm call outside the clock (imports, cache warmup)
    kernels.sgd_batch_step(model, x, y, groups, margins, MODE_ANGLE, 22.0,
                           0.05, 0.9, 5e-4, backend=backend)
    start = time.perf_counter()
    for _ in range(steps):
        kernels.sgd_batch_step(model, x, y, groups, margins, MODE_ANGLE, 22.0,
                               0.05, 0.9, 5e-4, backend=backend)
    elapsed = time.perf_counter() - start
    return steps / elapsed


def run_benchmark(emit=print, steps=400):
    """Compare all available backends; returns {backend: steps_per_second}."""
    results = {}
    for backend in kernels.available_backends():
        results[backend] = bench_backend(backend, steps=steps)
        emit(f"{backend:>9}: {results[backend]:10.0f} steps/s")
    if "compiled" in results and "python" in results:
        speedup = results["compiled"] / results["python"]
        emit(f"{'speedup':>9}: {speedup:10.2f}x (compiled over python)")
    return results
