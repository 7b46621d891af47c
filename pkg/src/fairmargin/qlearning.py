"""Q-value learning from offline transitions, plus an exact tabular oracle.

A tiny fully connected network regresses Q-values on bootstrapped
temporal-difference targets computed from the live network (the sample
set is fixed; there is no environment interaction and no separate target
network).  ``tabular_value_iteration`` solves the empirical MDP exactly
for verification, and the greedy policy over the finite state space can
be dumped as a table and shipped as a versioned artifact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError
from .mdp import MarginAction, MarginState, StateSpace, encode_state, validate_state

N_ACTIONS = 3

TRANSITION_LOG_FORMAT = "fairmargin-transitions v1"
POLICY_FORMAT = "fairmargin-policy v1"


@dataclass(frozen=True)
class Transition:
    """One (state, action, reward, next state) sample."""

    state: MarginState
    action: MarginAction
    reward: float
    next_state: MarginState


@dataclass(frozen=True)
class TransitionRecord:
    """A transition plus the raw skew values behind its reward."""

    transition: Transition
    b_inter_before: float
    b_inter_after: float
    b_intra_before: float
    b_intra_after: float


@dataclass(frozen=True)
class AgentConfig:
    discount: float = 0.99
    learning_rate: float = 1e-4
    training_iterations: int = 4000
    batch_size: int = 64
    hidden: tuple[int, ...] = (10, 10)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.discount < 1.0):
            raise ConfigurationError("discount must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        object.__setattr__(self, "hidden", tuple(self.hidden))


class QNetwork:
    """ReLU MLP from state encodings to one Q-value per action."""

    def __init__(self, input_dim, hidden=(10, 10), seed=0):
        dims = [int(input_dim), *[int(h) for h in hidden], N_ACTIONS]
        rng = np.random.Generator(np.random.PCG64(seed))
        self.weights, self.biases = [], []
        for i in range(len(dims) - 1):
            std = np.sqrt((2.0 if i < len(dims) - 2 else 1.0) / dims[i])
            self.weights.append(rng.standard_normal((dims[i], dims[i + 1])) * std)
            self.biases.append(np.zeros(dims[i + 1]))

    def forward(self, x):
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(a @ w + b, 0.0)
        return a @ self.weights[-1] + self.biases[-1]

    def loss_and_grads(self, x, actions, targets):
        """Mean squared TD error on the chosen actions, with param grads."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        actions = np.asarray(actions, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.float64)
        n = x.shape[0]
        acts, pres = [x], []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            pres.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        rows = np.arange(n)
        diff = out[rows, actions] - targets
        loss = float(np.mean(diff ** 2))
        dout = np.zeros_like(out)
        dout[rows, actions] = 2.0 * diff / n
        grads_w, grads_b = [], []
        delta = dout
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w.append(acts[layer].T @ delta)
            grads_b.append(delta.sum(axis=0))
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (pres[layer - 1] > 0.0)
        grads_w.reverse()
        grads_b.reverse()
        return loss, grads_w, grads_b


class _Adam:
    """Adaptive moment estimation with the standard bias corrections."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _encode_many(states, space):
    return np.stack([encode_state(s, space) for s in states])


def td_loss(net: QNetwork, transitions, space: StateSpace, discount: float) -> float:
    """Mean squared TD error of the network over a transition set."""
    enc_s = _encode_many([t.state for t in transitions], space)
    enc_next = _encode_many([t.next_state for t in transitions], space)
    rewards = np.asarray([t.reward for t in transitions])
    actions = np.asarray([int(t.action) for t in transitions])
    targets = rewards + discount * net.forward(enc_next).max(axis=1)
    q = net.forward(enc_s)[np.arange(len(transitions)), actions]
    return float(np.mean((q - targets) ** 2))


def train_dqn(transitions, space: StateSpace, cfg: AgentConfig) -> QNetwork:
    """Fit Q-values by minimizing squared TD error on offline samples.

    Mini-batches are drawn uniformly with replacement; targets
    ``r + discount * max_a Q(s', a)`` are recomputed from the live network
    every iteration.  Deterministic for a fixed ``cfg.seed``.
    """
    transitions = list(transitions)
    if not transitions:
        raise ConfigurationError("no transitions to train on")
    for t in transitions:
        validate_state(t.state, space)
        validate_state(t.next_state, space)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    net = QNetwork(space.encoding_length, cfg.hidden, seed=cfg.seed)
    opt = _Adam(net.weights + net.biases, cfg.learning_rate)

    enc_s = _encode_many([t.state for t in transitions], space)
    enc_next = _encode_many([t.next_state for t in transitions], space)
    rewards = np.asarray([t.reward for t in transitions])
    actions = np.asarray([int(t.action) for t in transitions])
    n = len(transitions)

    for iteration in range(cfg.training_iterations):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        targets = rewards[idx] + cfg.discount * net.forward(enc_next[idx]).max(axis=1)
        loss, gw, gb = net.loss_and_grads(enc_s[idx], actions[idx], targets)
        if not np.isfinite(loss):
            raise TrainingDivergedError(iteration, f"TD loss diverged at iteration {iteration}")
        opt.step(gw + gb)
    return net


@dataclass
class QTable:
    """Exact Q-values of the empirical MDP; unobserved pairs are masked out."""

    space: StateSpace
    q: np.ndarray          # [n_states, N_ACTIONS]
    observed: np.ndarray   # bool [n_states, N_ACTIONS]

    def greedy_action(self, state: MarginState) -> MarginAction:
        i = self.space.state_index(state)
        if not self.observed[i].any():
            raise ConfigurationError(f"state {state} was never observed")
        masked = np.where(self.observed[i], self.q[i], -np.inf)
        return MarginAction(int(np.argmax(masked)))

    def state_value(self, index: int) -> float:
        if not self.observed[index].any():
            return 0.0
        return float(np.max(np.where(self.observed[index], self.q[index], -np.inf)))


def tabular_value_iteration(transitions, space: StateSpace, discount: float,
                            tol=1e-10, max_sweeps=1_000_000) -> QTable:
    """Solve the empirical MDP built from the transitions exactly.

    Duplicate (state, action) observations are averaged into empirical
    reward and next-state frequencies; the Bellman optimality backup is
    iterated to a fixed point.  Unobserved pairs stay masked and never
    enter an argmax; fully unobserved states contribute value 0.
    """
    transitions = list(transitions)
    if not transitions:
        raise ConfigurationError("no transitions to solve")
    n_states = space.n_states
    counts = np.zeros((n_states, N_ACTIONS))
    reward_sums = np.zeros((n_states, N_ACTIONS))
    next_counts = {}
    for t in transitions:
        validate_state(t.state, space)
        validate_state(t.next_state, space)
        s = space.state_index(t.state)
        a = int(t.action)
        counts[s, a] += 1
        reward_sums[s, a] += t.reward
        key = (s, a)
        next_counts.setdefault(key, {})
        ns = space.state_index(t.next_state)
        next_counts[key][ns] = next_counts[key].get(ns, 0) + 1

    observed = counts > 0
    mean_reward = np.divide(reward_sums, counts, out=np.zeros_like(reward_sums),
                            where=observed)
    q = np.zeros((n_states, N_ACTIONS))
    table = QTable(space, q, observed)
    for _ in range(max_sweeps):
        values = np.asarray([table.state_value(i) for i in range(n_states)])
        new_q = np.zeros_like(q)
        for (s, a), nexts in next_counts.items():
            total = counts[s, a]
            expected = sum(c * values[ns] for ns, c in sorted(nexts.items())) / total
            new_q[s, a] = mean_reward[s, a] + discount * expected
        delta = np.max(np.abs(new_q[observed] - q[observed])) if observed.any() else 0.0
        table.q = new_q
        q = new_q
        if delta < tol:
            break
    return table


def greedy_action(net: QNetwork, state: MarginState, space: StateSpace) -> MarginAction:
    """Argmax action; ties break toward the lowest action index."""
    validate_state(state, space)
    q = net.forward(encode_state(state, space))[0]
    return MarginAction(int(np.argmax(q)))


def dump_policy(net: QNetwork, space: StateSpace):
    """(state, greedy action) rows over the whole finite state space."""
    return [(s, greedy_action(net, s, space)) for s in space.states()]


class PolicyTable:
    """Finite greedy policy over a state space, usable as a margin controller."""

    def __init__(self, space: StateSpace, actions):
        self.space = space
        self.actions = dict(actions)
        for state in space.states():
            if state not in self.actions:
                raise ConfigurationError(f"policy table misses state {state}")

    def __call__(self, state: MarginState) -> MarginAction:
        return self.actions[state]

    @classmethod
    def from_network(cls, net: QNetwork, space: StateSpace):
        return cls(space, dump_policy(net, space))


# ---------------------------------------------------------------------------
# artifact and log formats
# ---------------------------------------------------------------------------

def _floats_csv(values):
    return ",".join(repr(float(v)) for v in values)


def _parse_floats_csv(text):
    text = text.strip()
    return tuple(float(v) for v in text.split(",")) if text else ()


def save_policy(policy: PolicyTable, path):
    """Persist the policy with its state space, so deployment matches exactly."""
    space = policy.space
    lines = [
        f"#{POLICY_FORMAT}",
        f"n_groups_nonanchor={space.n_groups_nonanchor}",
        f"step={repr(space.step)}",
        f"margin_grid={_floats_csv(space.margin_grid)}",
        f"bias_edges={_floats_csv(space.bias_edges)}",
    ]
    for state in space.states():
        lines.append(f"{state.group} {state.margin_index} {state.bias_index} "
                     f"{int(policy.actions[state])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path) -> PolicyTable:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{POLICY_FORMAT}":
        raise ConfigurationError(f"unrecognized policy header: {lines[0]!r}")
    meta = dict(line.split("=", 1) for line in lines[1:5])
    space = StateSpace(
        n_groups_nonanchor=int(meta["n_groups_nonanchor"]),
        margin_grid=_parse_floats_csv(meta["margin_grid"]),
        bias_edges=_parse_floats_csv(meta["bias_edges"]),
        step=float(meta["step"]),
    )
    actions = {}
    for line in lines[5:]:
        if not line.strip():
            continue
        g, m, b, a = line.split()
        actions[MarginState(int(g), int(m), int(b))] = MarginAction(int(a))
    return PolicyTable(space, actions)


def save_transition_log(records, path):
    """Line-delimited transition records including the raw skew values."""
    lines = [
        f"#{TRANSITION_LOG_FORMAT}",
        "# group margin_index bias_index action reward next_margin_index "
        "next_bias_index b_inter_before b_inter_after b_intra_before b_intra_after",
    ]
    for rec in records:
        t = rec.transition
        lines.append(" ".join([
            str(t.state.group), str(t.state.margin_index), str(t.state.bias_index),
            str(int(t.action)), repr(float(t.reward)),
            str(t.next_state.margin_index), str(t.next_state.bias_index),
            repr(float(rec.b_inter_before)), repr(float(rec.b_inter_after)),
            repr(float(rec.b_intra_before)), repr(float(rec.b_intra_after)),
        ]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_transition_log(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{TRANSITION_LOG_FORMAT}":
        raise ConfigurationError(f"unrecognized transition log header: {lines[0]!r}")
    records = []
    for line in lines[1:]:
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        g, m, b = int(parts[0]), int(parts[1]), int(parts[2])
        action = MarginAction(int(parts[3]))
        reward = float(parts[4])
        nm, nb = int(parts[5]), int(parts[6])
        records.append(TransitionRecord(
            Transition(MarginState(g, m, b), action, reward, MarginState(g, nm, nb)),
            *[float(v) for v in parts[7:11]],
        ))
    return records


def transitions_of(records):
    return [rec.transition for rec in records]


QNET_FORMAT = "fairmargin-qnet v1"


def save_qnetwork(net: QNetwork, path):
    """Exact-round-trip text checkpoint for a Q-network."""
    lines = [f"#{QNET_FORMAT}", f"layers={len(net.weights)}"]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"w{i} {w.shape[0]} {w.shape[1]}")
        for row in w:
            lines.append(" ".join(float(v).hex() for v in row))
        lines.append(f"b{i} {b.shape[0]}")
        lines.append(" ".join(float(v).hex() for v in b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_qnetwork(path) -> QNetwork:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if lines[0] != f"#{QNET_FORMAT}":
        raise ConfigurationError(f"unrecognized q-network header: {lines[0]!r}")
    n_layers = int(lines[1].split("=")[1])
    weights, biases = [], []
    pos = 2
    for _ in range(n_layers):
        _, rows, cols = lines[pos].split()
        rows, cols = int(rows), int(cols)
        block = [[float.fromhex(v) for v in lines[pos + 1 + r].split()] for r in range(rows)]
        weights.append(np.asarray(block).reshape(rows, cols))
        pos += 1 + rows
        _, nb = lines[pos].split()
        biases.append(np.asarray([float.fromhex(v) for v in lines[pos + 1].split()]))
        pos += 2
    net = QNetwork.__new__(QNetwork)
    net.weights = weights
    net.biases = biases
    return net
