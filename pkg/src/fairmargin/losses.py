"""Angular-margin softmax losses with per-group margins and analytic gradients.

The family: plain softmax, normalized softmax (scaled cosine logits), an
additive angle-space margin, an additive cosine-space margin, and the
adaptive variants where the margin applied to a sample's target logit
depends on the sample's group.  The anchor group always receives the base
margin; other groups receive their current entry of ``group_margins``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericDomainError

# Floor for sin(theta) in the angle-margin slope; keeps the gradient finite
# when a cosine sits exactly at +-1 (the transform value itself stays exact).
_SIN_FLOOR = 1e-8

DEFAULT_SCALE = 60.0
DEFAULT_ARC_MARGIN = 0.3
DEFAULT_COS_MARGIN = 0.2

# Margin modes shared with the training kernels.
MODE_PLAIN = 0
MODE_ANGLE = 1
MODE_COSINE = 2


class LossKind(enum.Enum):
    SOFTMAX = "softmax"
    NORM_SOFTMAX = "norm_softmax"
    COSFACE = "cosface"
    ARCFACE = "arcface"
    ADAPTIVE_ARC = "adaptive_arc"
    ADAPTIVE_COS = "adaptive_cos"


_ADAPTIVE = {LossKind.ADAPTIVE_ARC, LossKind.ADAPTIVE_COS}

_MODE_OF_KIND = {
    LossKind.NORM_SOFTMAX: MODE_ANGLE,  # margin 0 makes the transform a no-op
    LossKind.ARCFACE: MODE_ANGLE,
    LossKind.ADAPTIVE_ARC: MODE_ANGLE,
    LossKind.COSFACE: MODE_COSINE,
    LossKind.ADAPTIVE_COS: MODE_COSINE,
}


@dataclass(frozen=True)
class LossConfig:
    """Loss selection plus margins.

    ``group_margins`` is indexed by group id; the anchor group's entry is
    ignored (the anchor always uses ``base_margin``).  Non-adaptive kinds
    ignore ``group_margins`` entirely.
    """

    kind: LossKind
    scale: float = DEFAULT_SCALE
    base_margin: float = 0.0
    group_margins: tuple[float, ...] | None = None
    anchor_group: int = 0

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigurationError("scale must be positive")
        if self.base_margin < 0:
            raise ConfigurationError("base_margin must be >= 0")
        if self.group_margins is not None:
            object.__setattr__(self, "group_margins", tuple(self.group_margins))
            if any(m < 0 for m in self.group_margins):
                raise ConfigurationError("group margins must be >= 0")

    @property
    def mode(self) -> int:
        return _MODE_OF_KIND.get(self.kind, MODE_PLAIN)

    def margin_for_group(self, group: int) -> float:
        if self.kind in (LossKind.SOFTMAX, LossKind.NORM_SOFTMAX):
            return 0.0
        if self.kind in _ADAPTIVE and group != self.anchor_group:
            if self.group_margins is None or group >= len(self.group_margins):
                raise ConfigurationError(f"no margin configured for group {group}")
            return self.group_margins[group]
        return self.base_margin

    def margins_for(self, groups) -> np.ndarray:
        return np.asarray([self.margin_for_group(int(g)) for g in groups], dtype=np.float64)


@dataclass(frozen=True)
class LogitBatch:
    """Cosine matrix ``[batch, n_identities]`` plus labels and groups."""

    cosines: np.ndarray
    labels: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "cosines", np.asarray(self.cosines, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "groups", np.asarray(self.groups, dtype=np.int64))
        if np.any(np.abs(self.cosines) > 1.0 + 1e-6):
            raise NumericDomainError("cosines must lie in [-1, 1] up to 1e-6 slack")


def margin_values_and_slopes(cosines, margins, mode):
    """Apply the target-logit margin transform element-wise.

    Returns ``(values, slopes)`` where ``slopes`` is d(value)/d(cosine).
    Angle mode uses cos(theta + m) while theta + m <= pi, then continues
    with a linear tail of slope -sin(m) in theta, so the transformed logit
    stays monotone in theta for every margin.
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    if np.any(np.abs(cosines) > 1.0 + 1e-6):
        raise NumericDomainError("cosine outside [-1, 1]")
    c = np.clip(cosines, -1.0, 1.0)
    margins = np.asarray(margins, dtype=np.float64)
    if mode == MODE_COSINE:
        return c - margins, np.ones_like(c)
    if mode != MODE_ANGLE:
        raise ConfigurationError(f"unknown margin mode {mode}")
    theta = np.arccos(c)
    sin_theta = np.maximum(np.sqrt(1.0 - c * c), _SIN_FLOOR)
    sin_m = np.sin(margins)
    main = theta <= np.pi - margins
    values = np.where(main, np.cos(theta + margins), -1.0 - (theta - (np.pi - margins)) * sin_m)
    slopes = np.where(main, np.sin(theta + margins), sin_m) / sin_theta
    return values, slopes


def arcface_logit(cosine: float, margin: float, scale: float) -> float:
    """Scaled angle-space margin logit for a target identity."""
    if margin < 0:
        raise ConfigurationError("margin must be >= 0")
    value, _ = margin_values_and_slopes(np.asarray([cosine]), np.asarray([margin]), MODE_ANGLE)
    return float(scale * value[0])


def cosface_logit(cosine: float, margin: float, scale: float) -> float:
    """Scaled cosine-space margin logit for a target identity."""
    if margin < 0:
        raise ConfigurationError("margin must be >= 0")
    value, _ = margin_values_and_slopes(np.asarray([cosine]), np.asarray([margin]), MODE_COSINE)
    return float(scale * value[0])


def softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def cross_entropy_mean(logits, labels):
    """Mean negative log softmax probability of the labels."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(labels))
    return float(np.mean(lse - shifted[rows, labels]))


def scaled_margin_loss(cosines, labels, per_sample_margins, mode, scale):
    """Cross-entropy over scaled cosine logits with per-sample target margins.

    The heart of every normalized loss kind.  Returns ``(loss, dcosines)``.
    """
    cosines = np.asarray(cosines, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = cosines.shape[0]
    rows = np.arange(n)
    values, slopes = margin_values_and_slopes(
        cosines[rows, labels], per_sample_margins, mode
    )
    logits = scale * cosines
    logits[rows, labels] = scale * values
    loss = cross_entropy_mean(logits, labels)
    dlogits = softmax_rows(logits)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    dcos = scale * dlogits
    dcos[rows, labels] *= slopes
    return loss, dcos


def modified_logits(batch: LogitBatch, cfg: LossConfig):
    """Scaled logits with each sample's group margin applied to its target."""
    if cfg.kind is LossKind.SOFTMAX:
        raise ConfigurationError("plain softmax does not use cosine logits")
    rows = np.arange(batch.cosines.shape[0])
    values, _ = margin_values_and_slopes(
        batch.cosines[rows, batch.labels], cfg.margins_for(batch.groups), cfg.mode
    )
    logits = cfg.scale * batch.cosines
    logits[rows, batch.labels] = cfg.scale * values
    return logits


def adaptive_loss(batch: LogitBatch, cfg: LossConfig):
    """Mean cross-entropy of the margin-modified logits.

    Returns ``(loss, dloss_dcosines)`` with the gradient taken w.r.t. the
    raw cosine matrix.
    """
    if cfg.kind not in _ADAPTIVE:
        raise ConfigurationError("adaptive_loss requires an adaptive loss kind")
    return cosine_loss_and_grad(batch, cfg)


def cosine_loss_and_grad(batch: LogitBatch, cfg: LossConfig):
    """Loss and cosine-matrix gradient for any cosine-logit loss kind."""
    if cfg.kind is LossKind.SOFTMAX:
        raise ConfigurationError("plain softmax does not use cosine logits")
    return scaled_margin_loss(
        batch.cosines.copy(), batch.labels, cfg.margins_for(batch.groups), cfg.mode, cfg.scale
    )


def loss_gradients_core(features, weights, labels, per_sample_margins, mode, scale):
    """Primitive-argument form of :func:`loss_gradients` (kernel backends use it)."""
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = features.shape[0]

    if mode == MODE_PLAIN:
        logits = features @ weights
        loss = cross_entropy_mean(logits, labels)
        dlogits = softmax_rows(logits)
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        return loss, dlogits @ weights.T, features.T @ dlogits

    feat_norms = np.linalg.norm(features, axis=1)
    w_norms = np.linalg.norm(weights, axis=0)
    if np.any(feat_norms == 0.0) or np.any(w_norms == 0.0):
        raise NumericDomainError("zero-norm feature or weight column")
    fhat = features / feat_norms[:, None]
    what = weights / w_norms[None, :]
    loss, dcos = scaled_margin_loss(fhat @ what, labels, per_sample_margins, mode, scale)

    # Chain through both unit-normalizations: for u = v/|v|,
    # d<u, a>/dv = (a - u<u, a>) / |v|.
    dfhat = dcos @ what.T
    dfeat = (dfhat - fhat * np.sum(dfhat * fhat, axis=1, keepdims=True)) / feat_norms[:, None]
    dwhat = fhat.T @ dcos
    dweights = (dwhat - what * np.sum(dwhat * what, axis=0, keepdims=True)) / w_norms[None, :]
    return loss, dfeat, dweights


def loss_gradients(features, weights, batch_labels, batch_groups, cfg: LossConfig):
    """Gradients of the batch loss w.r.t. raw features and identity weights.

    ``features`` is the raw (pre-normalization) ``[batch, d]`` encoder
    output and ``weights`` the raw ``[d, n_identities]`` identity matrix.
    For all kinds except plain softmax, rows and columns are normalized
    inside the cosine computation and that Jacobian is part of the chain.

    Returns ``(loss, dfeatures, dweights)``.
    """
    margins = cfg.margins_for(batch_groups)
    return loss_gradients_core(features, weights, batch_labels, margins, cfg.mode, cfg.scale)
