"""Backend selection for the fused training step.

Two interchangeable backends exist: a compiled Cython kernel
(``fairmargin._core``) and a pure-numpy fallback (``_kernels_py``).
The compiled one is picked when importable; set ``FAIRMARGIN_BACKEND``
to ``python`` or ``compiled`` to force a choice.  ``fairmargin bench``
compares their throughput.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .errors import ConfigurationError

try:
    from . import _core as _compiled
except ImportError:  # extension not built; numpy fallback only
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def _initial_backend():
    requested = os.environ.get("FAIRMARGIN_BACKEND", "auto").lower()
    if requested == "auto":
        return "compiled" if _compiled is not None else "python"
    if requested not in _BACKENDS:
        raise ConfigurationError(
            f"FAIRMARGIN_BACKEND={requested!r} unavailable; "
            f"choose from {sorted(_BACKENDS)} or 'auto'"
        )
    return requested


_active = _initial_backend()


def available_backends():
    return sorted(_BACKENDS)


def active_backend() -> str:
    return _active


def set_backend(name: str):
    """Switch the step backend (mainly for tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ConfigurationError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    _active = name


def sgd_batch_step(model, x, y, groups, margins_by_group, mode, scale,
                   lr, momentum, weight_decay, backend=None):
    """Run one fused train step on ``model`` through the selected backend."""
    step = _BACKENDS[backend or _active].sgd_batch_step
    return step(
        model.enc_weights, model.enc_biases, model.vel_weights, model.vel_biases,
        model.identity_weights, model.vel_identity,
        x, y, groups, margins_by_group, mode, scale, lr, momentum, weight_decay,
    )
