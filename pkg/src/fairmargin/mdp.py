"""Discrete decision-process vocabulary for the margin controller.

A state is (non-anchor group index, margin grid index, skew bin index);
the three actions keep, raise, or lower the group's margin by one grid
step, saturating at the grid ends.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericDomainError


class MarginAction(enum.IntEnum):
    STAY = 0
    UP = 1
    DOWN = 2


# Margin grids per loss flavor: (grid values, anchor/base margin).
# The grid starts at the base margin and climbs in equal steps.
FLAVOR_GRIDS = {
    "soft": ((0.0, 0.2, 0.4, 0.6), 0.0),
    "cos": ((0.15, 0.25, 0.35, 0.45), 0.15),
    "arc": ((0.3, 0.4, 0.5, 0.6), 0.3),
}


def margin_grid_for(flavor: str):
    """(grid, base margin) for one of the flavors soft / cos / arc."""
    try:
        return FLAVOR_GRIDS[flavor]
    except KeyError:
        raise ConfigurationError(
            f"unknown loss flavor {flavor!r}; choose from {sorted(FLAVOR_GRIDS)}"
        ) from None


@dataclass(frozen=True)
class StateSpace:
    """Finite state space: groups x margin grid x skew bins.

    ``bias_edges`` are the interior bin boundaries, so the bin count is
    ``len(bias_edges) + 1``; values at or above the last edge land in the
    top bin.
    """

    n_groups_nonanchor: int
    margin_grid: tuple[float, ...]
    bias_edges: tuple[float, ...]
    step: float

    def __post_init__(self):
        object.__setattr__(self, "margin_grid", tuple(float(m) for m in self.margin_grid))
        object.__setattr__(self, "bias_edges", tuple(float(e) for e in self.bias_edges))
        if self.n_groups_nonanchor < 1:
            raise ConfigurationError("need at least one non-anchor group")
        if self.step <= 0:
            raise ConfigurationError("grid step must be positive")
        grid = self.margin_grid
        if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("margin_grid must be strictly increasing")
        for a, b in zip(grid, grid[1:]):
            if abs((b - a) - self.step) > 1e-9:
                raise ConfigurationError("margin_grid gaps must equal step")
        edges = self.bias_edges
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigurationError("bias_edges must be strictly increasing")

    @property
    def n_margins(self):
        return len(self.margin_grid)

    @property
    def n_bias_bins(self):
        return len(self.bias_edges) + 1

    @property
    def n_states(self):
        return self.n_groups_nonanchor * self.n_margins * self.n_bias_bins

    @property
    def encoding_length(self):
        return self.n_groups_nonanchor + 2

    def states(self):
        """All states in canonical (group, margin, bias) order."""
        for g in range(self.n_groups_nonanchor):
            for m in range(self.n_margins):
                for b in range(self.n_bias_bins):
                    yield MarginState(g, m, b)

    def state_index(self, state: "MarginState") -> int:
        return (state.group * self.n_margins + state.margin_index) * self.n_bias_bins \
            + state.bias_index


@dataclass(frozen=True)
class MarginState:
    group: int
    margin_index: int
    bias_index: int


def validate_state(state: MarginState, space: StateSpace):
    if not (0 <= state.group < space.n_groups_nonanchor):
        raise ConfigurationError(f"group index {state.group} out of range")
    if not (0 <= state.margin_index < space.n_margins):
        raise ConfigurationError(f"margin index {state.margin_index} out of range")
    if not (0 <= state.bias_index < space.n_bias_bins):
        raise ConfigurationError(f"bias index {state.bias_index} out of range")


def discretize_bias(b: float, space: StateSpace) -> int:
    """Bin index of a skew value under half-open edges, clamped at the top."""
    if b < 0:
        raise NumericDomainError(f"skew value must be >= 0, got {b}")
    return int(np.searchsorted(space.bias_edges, b, side="right"))


def apply_action(state: MarginState, action: MarginAction, space: StateSpace) -> int:
    """New margin index after the action, saturating at the grid ends."""
    validate_state(state, space)
    if action == MarginAction.UP:
        return min(state.margin_index + 1, space.n_margins - 1)
    if action == MarginAction.DOWN:
        return max(state.margin_index - 1, 0)
    return state.margin_index


def encode_state(state: MarginState, space: StateSpace) -> np.ndarray:
    """Network input: one-hot group ++ normalized margin ++ normalized bias."""
    validate_state(state, space)
    vec = np.zeros(space.encoding_length)
    vec[state.group] = 1.0
    if space.n_margins > 1:
        vec[-2] = state.margin_index / (space.n_margins - 1)
    if space.n_bias_bins > 1:
        vec[-1] = state.bias_index / (space.n_bias_bins - 1)
    return vec


def nonanchor_index(group_id: int, anchor_group: int) -> int:
    """Position of a global group id among the non-anchor groups."""
    if group_id == anchor_group:
        raise ConfigurationError("the anchor group has no controller state")
    return group_id if group_id < anchor_group else group_id - 1


def nonanchor_to_group(index: int, anchor_group: int) -> int:
    """Inverse of :func:`nonanchor_index`."""
    return index if index < anchor_group else index + 1


def fit_bias_edges(raw_values, n_bins=4):
    """Interior quantile edges that spread observed skew values over the bins."""
    values = np.sort(np.asarray(list(raw_values), dtype=np.float64))
    if len(values) < n_bins:
        raise ConfigurationError(f"need at least {n_bins} observations to fit edges")
    qs = [k / n_bins for k in range(1, n_bins)]
    edges = np.quantile(values, qs)
    # quantiles can collide on near-constant data; nudge to keep them strict
    for i in range(1, len(edges)):
        if edges[i] <= edges[i - 1]:
            edges[i] = np.nextafter(edges[i - 1], np.inf)
    return tuple(float(e) for e in edges)
