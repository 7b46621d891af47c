"""Micro feedforward encoder with an identity weight matrix.

The encoder maps input vectors through ReLU hidden layers to a feature
space; features are L2-normalized before use.  A ``[d, n_identities]``
weight matrix holds one unit-norm column per identity; cosines between
features and columns are the classification logits.  Training is plain
SGD with momentum, driven batch-by-batch through a swappable kernel
backend (see :mod:`fairmargin.kernels`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import GroupedDataset, Sample
from .errors import ConfigurationError, NumericDomainError, TrainingDivergedError
from .losses import MODE_PLAIN, LossConfig

CHECKPOINT_FORMAT = "fairmargin-model v1"

DEFAULT_HIDDEN = (32,)
DEFAULT_FEATURE_DIM = 8


@dataclass(frozen=True)
class OptimizerConfig:
    """SGD hyperparameters for the micro trainer."""

    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    epochs_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.epochs_per_step < 1:
            raise ConfigurationError("epochs_per_step must be >= 1")


class ModelParams:
    """Mutable parameter bundle: encoder layers, identity weights, momentum.

    ``epochs_done`` counts completed training epochs and seeds the per-epoch
    shuffle, so a restored snapshot replays the exact same batch order.
    """

    def __init__(self, enc_weights, enc_biases, identity_weights, epochs_done=0):
        self.enc_weights = [np.ascontiguousarray(w, dtype=np.float64) for w in enc_weights]
        self.enc_biases = [np.ascontiguousarray(b, dtype=np.float64) for b in enc_biases]
        self.identity_weights = np.ascontiguousarray(identity_weights, dtype=np.float64)
        self.vel_weights = [np.zeros_like(w) for w in self.enc_weights]
        self.vel_biases = [np.zeros_like(b) for b in self.enc_biases]
        self.vel_identity = np.zeros_like(self.identity_weights)
        self.epochs_done = int(epochs_done)

    @property
    def d_in(self):
        return self.enc_weights[0].shape[0]

    @property
    def d(self):
        return self.enc_weights[-1].shape[1]

    @property
    def n_identities(self):
        return self.identity_weights.shape[1]

    @property
    def hidden(self):
        return tuple(w.shape[1] for w in self.enc_weights[:-1])

    def copy(self) -> "ModelParams":
        clone = ModelParams(
            [w.copy() for w in self.enc_weights],
            [b.copy() for b in self.enc_biases],
            self.identity_weights.copy(),
            self.epochs_done,
        )
        clone.vel_weights = [v.copy() for v in self.vel_weights]
        clone.vel_biases = [v.copy() for v in self.vel_biases]
        clone.vel_identity = self.vel_identity.copy()
        return clone

    def forward_raw(self, x):
        """Encoder output before normalization, ``[batch, d]``."""
        a = np.asarray(x, dtype=np.float64)
        squeeze = a.ndim == 1
        if squeeze:
            a = a[None, :]
        for w, b in zip(self.enc_weights[:-1], self.enc_biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        a = a @ self.enc_weights[-1] + self.enc_biases[-1]
        return a[0] if squeeze else a

    def embed_batch(self, x):
        """Unit-norm features for a ``[batch, d_in]`` input matrix."""
        raw = self.forward_raw(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise NumericDomainError("encoder produced a zero-norm feature")
        return raw / norms


def init_model(d_in, hidden, d, n_identities, seed) -> ModelParams:
    """Seeded init: scaled-normal encoder weights, unit-norm identity columns."""
    dims = [int(d_in), *[int(h) for h in hidden], int(d)]
    if any(v < 1 for v in dims) or n_identities < 1:
        raise ConfigurationError("all model dimensions must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    enc_w, enc_b = [], []
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        # He scaling for the ReLU layers, unit-variance-preserving for the last.
        std = np.sqrt((2.0 if i < len(dims) - 2 else 1.0) / fan_in)
        enc_w.append(rng.standard_normal((fan_in, fan_out)) * std)
        enc_b.append(np.zeros(fan_out))
    ident = rng.standard_normal((int(d), int(n_identities)))
    ident /= np.linalg.norm(ident, axis=0, keepdims=True)
    return ModelParams(enc_w, enc_b, ident)


def embed(model: ModelParams, sample: Sample):
    """Unit-norm feature vector for one sample."""
    return model.embed_batch(sample.features[None, :])[0]


class ModelSnapshot:
    """Opaque, immutable copy of a model (parameters + momentum + epoch count)."""

    def __init__(self, model: ModelParams):
        self._model = model.copy()


def snapshot(model: ModelParams) -> ModelSnapshot:
    return ModelSnapshot(model)


def restore(snap: ModelSnapshot) -> ModelParams:
    return snap._model.copy()


def _epoch_permutation(seed, epoch_index, n):
    seq = np.random.SeedSequence(entropy=(int(seed) & 0xFFFFFFFF, int(epoch_index)))
    return np.random.Generator(np.random.PCG64(seq)).permutation(n)


def train_epochs(model: ModelParams, ds: GroupedDataset, loss_cfg: LossConfig,
                 opt: OptimizerConfig, n_epochs=None):
    """Train in place for ``n_epochs`` epochs; returns ``(model, epoch_losses)``.

    Mini-batches follow a per-epoch seeded permutation, so runs are
    reproducible while epochs still differ.  For every kind except plain
    softmax, identity-weight columns are renormalized after each step.
    """
    if n_epochs is None:
        n_epochs = opt.epochs_per_step
    if ds.n_identities != model.n_identities:
        raise ConfigurationError(
            f"dataset has {ds.n_identities} identities, model expects {model.n_identities}"
        )
    margins_by_group = loss_cfg.margins_for(range(ds.n_groups))
    mode = loss_cfg.mode
    n = len(ds)
    epoch_losses = []
    for _ in range(n_epochs):
        order = _epoch_permutation(opt.seed, model.epochs_done, n)
        total = 0.0
        for start in range(0, n, opt.batch_size):
            idx = order[start:start + opt.batch_size]
            loss = kernels.sgd_batch_step(
                model,
                ds.features[idx],
                ds.identity_ids[idx],
                ds.group_ids[idx],
                margins_by_group,
                mode,
                loss_cfg.scale,
                opt.learning_rate,
                opt.momentum,
                opt.weight_decay,
            )
            total += loss * len(idx)
        mean_loss = total / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(model.epochs_done)
        model.epochs_done += 1
        epoch_losses.append(mean_loss)
    return model, epoch_losses


def batch_loss_and_gradients(model: ModelParams, x, y, groups, loss_cfg: LossConfig):
    """Loss plus analytic gradients of every parameter, with no update.

    Returns ``(loss, grads_w, grads_b, d_identity)`` via the reference
    (numpy) backend; used for gradient verification.
    """
    from . import _kernels_py

    margins = loss_cfg.margins_for(range(int(np.max(groups)) + 1 if len(groups) else 1))
    return _kernels_py.batch_gradients(
        model.enc_weights, model.enc_biases, model.identity_weights,
        np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64),
        np.asarray(groups, dtype=np.int64), margins, loss_cfg.mode, loss_cfg.scale,
    )


def nearest_identity(model: ModelParams, x):
    """Classify rows of ``x`` by the highest-cosine identity column."""
    feats = model.embed_batch(x)
    w = model.identity_weights
    cos = feats @ (w / np.linalg.norm(w, axis=0, keepdims=True))
    return np.argmax(cos, axis=1)


def save_checkpoint(model: ModelParams, path):
    """Exact-round-trip text checkpoint (hex floats, momentum included)."""
    lines = [f"#{CHECKPOINT_FORMAT}",
             f"layers={len(model.enc_weights)} d_in={model.d_in} d={model.d} "
             f"n_identities={model.n_identities} epochs_done={model.epochs_done}"]

    def emit(tag, arr):
        arr = np.atleast_2d(arr)
        lines.append(f"{tag} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(float(v).hex() for v in row))

    for i, (w, b) in enumerate(zip(model.enc_weights, model.enc_biases)):
        emit(f"enc_w{i}", w)
        emit(f"enc_b{i}", b)
        emit(f"vel_w{i}", model.vel_weights[i])
        emit(f"vel_b{i}", model.vel_biases[i])
    emit("ident", model.identity_weights)
    emit("vel_ident", model.vel_identity)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{CHECKPOINT_FORMAT}":
        raise ConfigurationError(f"unrecognized checkpoint header: {lines[0]!r}")
    meta = dict(kv.split("=") for kv in lines[1].split())
    n_layers = int(meta["layers"])
    pos = 2
    arrays = {}
    while pos < len(lines):
        tag, rows, cols = lines[pos].split()
        rows, cols = int(rows), int(cols)
        block = [[float.fromhex(v) for v in lines[pos + 1 + r].split()] for r in range(rows)]
        arrays[tag] = np.asarray(block, dtype=np.float64).reshape(rows, cols)
        pos += 1 + rows
    model = ModelParams(
        [arrays[f"enc_w{i}"] for i in range(n_layers)],
        [arrays[f"enc_b{i}"][0] for i in range(n_layers)],
        arrays["ident"],
        int(meta["epochs_done"]),
    )
    model.vel_weights = [np.ascontiguousarray(arrays[f"vel_w{i}"]) for i in range(n_layers)]
    model.vel_biases = [np.ascontiguousarray(arrays[f"vel_b{i}"][0]) for i in range(n_layers)]
    model.vel_identity = np.ascontiguousarray(arrays["vel_ident"])
    return model
