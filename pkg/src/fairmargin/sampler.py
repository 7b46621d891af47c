"""Offline transition collection for the margin controller.

Per non-anchor group, a FIFO frontier of unvisited (margin, skew-bin)
states is traversed.  For each frontier state the model is snapshotted;
each of the three actions is then tried from a fresh restore, training
one (configurable) epoch with the action's margin while every other
group stays at the base margin.  The resulting skew change yields the
reward, and newly reached states join the frontier.  Forking from the
snapshot means the three transitions out of a state differ only by the
action taken.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

import numpy as np

from .data import GroupedDataset
from .errors import ConfigurationError
from .losses import LossConfig, LossKind
from .mdp import (
    FLAVOR_GRIDS,
    MarginAction,
    MarginState,
    StateSpace,
    apply_action,
    discretize_bias,
    fit_bias_edges,
    margin_grid_for,
    nonanchor_index,
    nonanchor_to_group,
)
from .metrics import skew_pair
from .model import ModelParams, OptimizerConfig, restore, snapshot, train_epochs
from .qlearning import Transition, TransitionRecord


@dataclass(frozen=True)
class SamplerConfig:
    loss_flavor: str = "soft"
    epochs_per_action: int = 1
    max_states_per_group: int = 64
    anchor_group: int = 0
    scale: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_action < 1:
            raise ConfigurationError("epochs_per_action must be >= 1")
        if self.max_states_per_group < 1:
            raise ConfigurationError("max_states_per_group must be >= 1")
        margin_grid_for(self.loss_flavor)


@dataclass
class SampleRun:
    """Everything a sampling sweep produced."""

    records: list
    space: StateSpace
    truncated: bool

    @property
    def transitions(self):
        return [rec.transition for rec in self.records]


def _loss_config(flavor, margins_by_group, anchor_group, scale) -> LossConfig:
    kind = LossKind.ADAPTIVE_COS if flavor == "cos" else LossKind.ADAPTIVE_ARC
    _, base = margin_grid_for(flavor)
    return LossConfig(kind=kind, scale=scale, base_margin=base,
                      group_margins=tuple(margins_by_group), anchor_group=anchor_group)


def base_loss_config(flavor: str, n_groups: int, anchor_group=0, scale=60.0) -> LossConfig:
    """Adaptive loss with every group at the flavor's base margin."""
    _, base = margin_grid_for(flavor)
    return _loss_config(flavor, [base] * n_groups, anchor_group, scale)


def collect_transitions(train_ds: GroupedDataset, val_ds: GroupedDataset,
                        base_model: ModelParams, space: StateSpace,
                        cfg: SamplerConfig, opt: OptimizerConfig) -> SampleRun:
    """Traverse the margin state space per group and log the transitions.

    ``base_model`` must already be warmed up enough that embeddings are
    non-degenerate.  Groups run sequentially in group-id order; each group
    restarts from ``base_model``.  Bit-reproducible for fixed seeds.
    """
    if train_ds.n_groups != val_ds.n_groups:
        raise ConfigurationError("train and validation group counts differ")
    n_groups = train_ds.n_groups
    if space.n_groups_nonanchor != n_groups - 1:
        raise ConfigurationError("state space group count does not match the dataset")
    _, base = margin_grid_for(cfg.loss_flavor)
    grid = space.margin_grid
    records = []
    truncated = False

    for group in range(n_groups):
        if group == cfg.anchor_group:
            continue
        g_idx = nonanchor_index(group, cfg.anchor_group)
        start = snapshot(base_model)
        b_inter0, b_intra0 = skew_pair(base_model, val_ds, group, cfg.anchor_group)
        first = MarginState(g_idx, 0, discretize_bias(b_inter0, space))
        frontier = collections.deque([(first, start, b_inter0, b_intra0)])
        visited = {(first.margin_index, first.bias_index)}
        while frontier:
            if len(visited) > cfg.max_states_per_group:
                truncated = True
                break
            state, snap, b_inter, b_intra = frontier.popleft()
            for action in (MarginAction.STAY, MarginAction.UP, MarginAction.DOWN):
                model = restore(snap)
                new_margin_index = apply_action(state, action, space)
                margins = [base] * n_groups
                margins[group] = grid[new_margin_index]
                loss_cfg = _loss_config(cfg.loss_flavor, margins, cfg.anchor_group, cfg.scale)
                train_epochs(model, train_ds, loss_cfg, opt, cfg.epochs_per_action)
                b_inter_new, b_intra_new = skew_pair(model, val_ds, group, cfg.anchor_group)
                next_state = MarginState(g_idx, new_margin_index,
                                         discretize_bias(b_inter_new, space))
                reward = (-(b_inter_new + b_intra_new)) - (-(b_inter + b_intra))
                records.append(TransitionRecord(
                    Transition(state, action, reward, next_state),
                    b_inter, b_inter_new, b_intra, b_intra_new,
                ))
                key = (next_state.margin_index, next_state.bias_index)
                if key not in visited:
                    visited.add(key)
                    frontier.append((next_state, snapshot(model), b_inter_new, b_intra_new))
    return SampleRun(records, space, truncated)


def calibrate_and_collect(train_ds: GroupedDataset, val_ds: GroupedDataset,
                          base_model: ModelParams, cfg: SamplerConfig,
                          opt: OptimizerConfig, n_bias_bins=4,
                          provisional_edges=(0.05, 0.10, 0.15),
                          margin_grid_override=None):
    """Two-pass sweep: fit skew-bin edges on a first pass, then re-collect.

    The first pass runs with provisional edges purely to observe the raw
    inter-class skew values this setup produces; quantile edges are fitted
    to those and frozen into the state space of the second, definitive
    pass, so the logged states are stable.  Returns the final
    :class:`SampleRun` (whose ``space`` carries the fitted edges).
    """
    grid, _ = margin_grid_for(cfg.loss_flavor)
    if margin_grid_override is not None:
        grid = tuple(margin_grid_override)
    step = grid[1] - grid[0] if len(grid) > 1 else 1.0
    n_nonanchor = train_ds.n_groups - 1
    provisional = StateSpace(n_nonanchor, grid, tuple(provisional_edges), step)
    first_pass = collect_transitions(train_ds, val_ds, base_model, provisional, cfg, opt)
    raw = [rec.b_inter_before for rec in first_pass.records]
    raw += [rec.b_inter_after for rec in first_pass.records]
    edges = fit_bias_edges(raw, n_bias_bins)
    space = StateSpace(n_nonanchor, grid, edges, step)
    return collect_transitions(train_ds, val_ds, base_model, space, cfg, opt)
