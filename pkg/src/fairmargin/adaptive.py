"""Recognition training under the margin controller, plus baselines.

The anchor group's margin never moves.  Every ``decision_interval``
epochs the current inter-class skew of each non-anchor group is measured
on the validation set, discretized, and fed to the greedy policy; the
returned action shifts that group's margin one grid step.  Baselines
train with a uniform fixed margin, or with static per-group margins
scaled inversely to group sample counts.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import GroupedDataset
from .errors import ConfigurationError
from .losses import LossConfig
from .mdp import (
    MarginState,
    StateSpace,
    apply_action,
    discretize_bias,
    margin_grid_for,
    nonanchor_index,
)
from .metrics import (
    BiasReport,
    build_report,
    group_geometry,
    skew_pairs_all_groups,
    verification_accuracy,
)
from .model import DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN, ModelParams, OptimizerConfig, \
    init_model, train_epochs
from .sampler import _loss_config, base_loss_config

log = logging.getLogger(__name__)

MARGIN_HISTORY_FORMAT = "fairmargin-margin-history v1"


class BaselineMode(enum.Enum):
    NONE = "none"
    FIXED_MARGIN = "fixed"
    MANUAL_MARGIN = "manual"


@dataclass(frozen=True)
class AdaptiveTrainConfig:
    loss_flavor: str = "soft"
    decision_interval: int = 1
    total_epochs: int = 30
    anchor_group: int = 0
    scale: float = 60.0
    baseline_mode: BaselineMode = BaselineMode.NONE

    def __post_init__(self):
        if self.decision_interval < 1:
            raise ConfigurationError("decision_interval must be >= 1")
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be >= 1")
        margin_grid_for(self.loss_flavor)


@dataclass(frozen=True)
class MarginDecision:
    """One controller query: margin chosen for a group at an epoch."""

    epoch: int
    group: int
    margin: float
    b_inter: float
    action: int


def _fresh_model(train_ds, opt, hidden=DEFAULT_HIDDEN, d=DEFAULT_FEATURE_DIM):
    return init_model(train_ds.d_in, hidden, d, train_ds.n_identities, seed=opt.seed)


def train_adaptive(train_ds: GroupedDataset, val_ds: GroupedDataset,
                   space: StateSpace, policy, cfg: AdaptiveTrainConfig,
                   opt: OptimizerConfig, model: ModelParams | None = None):
    """Train with policy-driven per-group margins.

    Returns ``(model, history)`` where history is the full list of
    :class:`MarginDecision` rows.  Skew values above the top bin edge are
    clamped into the top bin (logged, not fatal).
    """
    n_groups = train_ds.n_groups
    grid, base = margin_grid_for(cfg.loss_flavor)
    grid = space.margin_grid or grid
    if model is None:
        model = _fresh_model(train_ds, opt)
    margin_idx = {g: 0 for g in range(n_groups) if g != cfg.anchor_group}
    history = []
    for epoch in range(cfg.total_epochs):
        if epoch % cfg.decision_interval == 0:
            skews = skew_pairs_all_groups(model, val_ds, cfg.anchor_group)
            for group in sorted(margin_idx):
                b_inter = skews[group][0]
                bias_index = discretize_bias(b_inter, space)
                if space.bias_edges and b_inter >= space.bias_edges[-1]:
                    log.debug("group %d skew %.4f clamped to top bin", group, b_inter)
                state = MarginState(nonanchor_index(group, cfg.anchor_group),
                                    margin_idx[group], bias_index)
                action = policy(state)
                margin_idx[group] = apply_action(state, action, space)
                history.append(MarginDecision(epoch, group, grid[margin_idx[group]],
                                              b_inter, int(action)))
        margins = [base] * n_groups
        for group, idx in margin_idx.items():
            margins[group] = grid[idx]
        loss_cfg = _loss_config(cfg.loss_flavor, margins, cfg.anchor_group, cfg.scale)
        train_epochs(model, train_ds, loss_cfg, opt, 1)
    return model, history


def manual_margins(train_ds: GroupedDataset, flavor: str, anchor_group=0):
    """Static per-group margins inversely scaled to group sample counts.

    The largest group keeps the base margin; smaller groups climb toward
    the top of the grid proportionally to their sample deficit, snapped to
    the nearest grid value.  The anchor group always keeps the base.
    """
    grid, base = margin_grid_for(flavor)
    counts = np.bincount(train_ds.group_ids, minlength=train_ds.n_groups)
    top = counts.max()
    margins = []
    for g in range(train_ds.n_groups):
        if g == anchor_group:
            margins.append(base)
            continue
        raw = base + (grid[-1] - base) * (1.0 - counts[g] / top)
        snapped = min(grid, key=lambda m: (abs(m - raw), m))
        margins.append(snapped)
    return margins


def train_baseline(train_ds: GroupedDataset, cfg: AdaptiveTrainConfig,
                   opt: OptimizerConfig, model: ModelParams | None = None):
    """Fixed-margin or manual-margin training (no controller)."""
    n_groups = train_ds.n_groups
    if cfg.baseline_mode is BaselineMode.MANUAL_MARGIN:
        margins = manual_margins(train_ds, cfg.loss_flavor, cfg.anchor_group)
        loss_cfg = _loss_config(cfg.loss_flavor, margins, cfg.anchor_group, cfg.scale)
    else:
        loss_cfg = base_loss_config(cfg.loss_flavor, n_groups, cfg.anchor_group, cfg.scale)
    if model is None:
        model = _fresh_model(train_ds, opt)
    train_epochs(model, train_ds, loss_cfg, opt, cfg.total_epochs)
    return model


def evaluate(model: ModelParams, pairs, geometry_ds: GroupedDataset | None = None) -> BiasReport:
    """Score verification pairs per group and assemble the fairness report."""
    accs = verification_accuracy(model, pairs, per_group=True)
    ordered = [accs[g] for g in sorted(accs)]
    geometries = []
    if geometry_ds is not None:
        for g in sorted(accs):
            geometries.append(group_geometry(model, geometry_ds, g))
    return build_report(ordered, geometries)


def save_margin_history(history, path):
    """Line records: epoch, group, margin, raw inter-class skew, action."""
    lines = [f"#{MARGIN_HISTORY_FORMAT}", "# epoch group margin b_inter action"]
    for h in history:
        lines.append(f"{h.epoch} {h.group} {repr(float(h.margin))} "
                     f"{repr(float(h.b_inter))} {h.action}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_margin_history(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{MARGIN_HISTORY_FORMAT}":
        raise ConfigurationError(f"unrecognized margin history header: {lines[0]!r}")
    out = []
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        epoch, group, margin, b_inter, action = line.split()
        out.append(MarginDecision(int(epoch), int(group), float(margin),
                                  float(b_inter), int(action)))
    return out
