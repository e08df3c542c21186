"""DQN engine: state-action encoding, the Q-value MLP, combined experience replay, epsilon schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from zec.domain import DAYS_PER_WEEK, SLOTS_PER_DAY, Action, EnergyLevel, InvalidInput

# input layout: 48 half-hours | 7 weekdays | 4 balance levels | 4 action bits
TIME_OFFSET = 0
DAY_OFFSET = TIME_OFFSET + SLOTS_PER_DAY
LEVEL_OFFSET = DAY_OFFSET + DAYS_PER_WEEK
ACTION_OFFSET = LEVEL_OFFSET + len(EnergyLevel)
N_INPUTS = ACTION_OFFSET + 4
LAYER_SIZES = (N_INPUTS, 100, 100, 1)
CHECKPOINT_VERSION = 1

PAPER_LEARNING_RATE = 0.125e-3
PAPER_GAMMA = 0.99


def encode(slot: int, day: int, level: EnergyLevel | int, action: Action | int) -> np.ndarray:
    """One-hot input vector for a (time, weekday, balance level, action) tuple.

    DenyRequest has no bit of its own and leaves the action block empty.
    """
    if not 0 <= slot < SLOTS_PER_DAY:
        raise InvalidInput(f"slot must be in 0..{SLOTS_PER_DAY - 1}, got {slot}")
    if not 0 <= day < DAYS_PER_WEEK:
        raise InvalidInput(f"day must be in 0..{DAYS_PER_WEEK - 1}, got {day}")
    level, action = EnergyLevel(level), Action(action)
    x = np.zeros(N_INPUTS)
    x[TIME_OFFSET + slot] = 1.0
    x[DAY_OFFSET + day] = 1.0
    x[LEVEL_OFFSET + level] = 1.0
    if action != Action.DENY_REQUEST:
        x[ACTION_OFFSET + action] = 1.0
    return x


def _encoding_table() -> np.ndarray:
    table = np.zeros((SLOTS_PER_DAY, DAYS_PER_WEEK, len(EnergyLevel), len(Action), N_INPUTS))
    for s in range(SLOTS_PER_DAY):
        for d in range(DAYS_PER_WEEK):
            for lv in EnergyLevel:
                for a in Action:
                    table[s, d, lv, a] = encode(s, d, lv, a)
    table.setflags(write=False)
    return table


ENCODINGS = _encoding_table()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and faster than 1 / (1 + exp(-z))
    return 0.5 * np.tanh(0.5 * z) + 0.5


class QNetwork(BaseEstimator, RegressorMixin):
    """Fully connected Q-value regressor: sigmoid hidden layers, one linear output.

    Trained one mini-batch at a time with plain SGD on half the mean squared
    error via :meth:`partial_fit`.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(100, 100)
    learning_rate : float, default=0.125e-3
    random_state : int or None
        Seed for the uniform Glorot initialisation.
    """

    def __init__(self, hidden_layer_sizes=(100, 100), learning_rate=PAPER_LEARNING_RATE, random_state=None):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.random_state = random_state

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_features_in_, *self.hidden_layer_sizes, 1)

    def initialize(self, n_features: int = N_INPUTS) -> "QNetwork":
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = n_features
        sizes = self.layer_sizes
        self.coefs_, self.intercepts_ = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.coefs_.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.intercepts_.append(np.zeros(fan_out))
        self.n_updates_ = 0
        return self

    def _forward(self, X: np.ndarray) -> list[np.ndarray]:
        activations = [X]
        last = len(self.coefs_) - 1
        for i, (W, b) in enumerate(zip(self.coefs_, self.intercepts_)):
            z = activations[-1] @ W + b
            activations.append(z if i == last else _sigmoid(z))
        return activations

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coefs_")
        X = check_array(X, ensure_2d=False)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise InvalidInput(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._forward(X)[-1][:, 0]

    def _predict_trusted(self, X: np.ndarray) -> np.ndarray:
        return self._forward(X)[-1][:, 0]

    def loss(self, X, y) -> float:
        residual = self.predict(X) - np.asarray(y, dtype=float)
        return float(0.5 * np.mean(residual**2))

    def gradients(self, X, y) -> tuple[list[np.ndarray], list[np.ndarray], float]:
        """Backpropagated gradients of the loss w.r.t. every weight matrix and bias vector."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        acts = self._forward(X)
        residual = acts[-1][:, 0] - y
        loss = float(0.5 * np.mean(residual**2))
        delta = residual[:, None] / len(y)
        grad_W = [None] * len(self.coefs_)
        grad_b = [None] * len(self.coefs_)
        for i in range(len(self.coefs_) - 1, -1, -1):
            grad_W[i] = acts[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i:
                a = acts[i]
                delta = (delta @ self.coefs_[i].T) * a * (1.0 - a)
        return grad_W, grad_b, loss

    def partial_fit(self, X, y, learning_rate: float | None = None) -> "QNetwork":
        """One SGD step on the batch. Stores the pre-update loss in ``loss_``."""
        if not hasattr(self, "coefs_"):
            self.initialize(np.atleast_2d(X).shape[1])
        lr = self.learning_rate if learning_rate is None else learning_rate
        grad_W, grad_b, self.loss_ = self.gradients(X, y)
        for W, b, gW, gb in zip(self.coefs_, self.intercepts_, grad_W, grad_b):
            W -= lr * gW
            b -= lr * gb
        self.n_updates_ += 1
        return self

    def fit(self, X, y, epochs: int = 1) -> "QNetwork":
        self.initialize(np.atleast_2d(X).shape[1])
        for _ in range(epochs):
            self.partial_fit(X, y)
        return self

    def save(self, path) -> None:
        check_is_fitted(self, "coefs_")
        arrays = {f"W{i}": W for i, W in enumerate(self.coefs_)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.intercepts_)})
        with open(path, "wb") as fh:
            np.savez(
                fh,
                format_version=np.array(CHECKPOINT_VERSION),
                layer_sizes=np.array(self.layer_sizes),
                learning_rate=np.array(self.learning_rate),
                **arrays,
            )

    @classmethod
    def load(cls, path, expected_sizes: Sequence[int] | None = LAYER_SIZES) -> "QNetwork":
        with np.load(Path(path)) as data:
            if int(data["format_version"]) != CHECKPOINT_VERSION:
                raise InvalidInput(f"unsupported checkpoint version {int(data['format_version'])}")
            sizes = tuple(int(s) for s in data["layer_sizes"])
            if expected_sizes is not None and sizes != tuple(expected_sizes):
                raise InvalidInput(f"checkpoint layer sizes {sizes} != expected {tuple(expected_sizes)}")
            net = cls(hidden_layer_sizes=sizes[1:-1], learning_rate=float(data["learning_rate"]))
            net.n_features_in_ = sizes[0]
            net.coefs_, net.intercepts_ = [], []
            for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                W, b = data[f"W{i}"], data[f"b{i}"]
                if W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                    raise InvalidInput(f"layer {i} has shape {W.shape}/{b.shape}, expected ({fan_in}, {fan_out})")
                net.coefs_.append(W.astype(float))
                net.intercepts_.append(b.astype(float))
            net.n_updates_ = 0
        return net


def q_value(net: QNetwork, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_features_in_,):
        raise InvalidInput(f"input must have shape ({net.n_features_in_},), got {x.shape}")
    return float(net.predict(x[None, :])[0])


@dataclass(frozen=True)
class State:
    slot: int
    day: int
    level: EnergyLevel


@dataclass(frozen=True)
class Transition:
    state: State
    action: Action
    reward: float
    next_state: State | None
    next_legal: tuple[Action, ...]
    terminal: bool

    def __post_init__(self):
        if not self.terminal and (self.next_state is None or not self.next_legal):
            raise InvalidInput("non-terminal transitions need a next state and legal actions")


class ReplayBuffer:
    """Bounded FIFO of transitions; oldest records are evicted first.

    Records are also kept in flat arrays so a mini-batch can be encoded
    without touching Python objects.
    """

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise InvalidInput("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0
        self._state = np.zeros((capacity, 3), dtype=np.intp)
        self._action = np.zeros(capacity, dtype=np.intp)
        self._reward = np.zeros(capacity)
        self._next_state = np.zeros((capacity, 3), dtype=np.intp)
        self._next_legal = np.zeros((capacity, len(Action)), dtype=bool)
        self._terminal = np.zeros(capacity, dtype=bool)

    def __len__(self):
        return len(self._items)

    def append(self, transition: Transition) -> None:
        i = self._next
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[i] = transition
        st = transition.state
        self._state[i] = (st.slot, st.day, st.level)
        self._action[i] = transition.action
        self._reward[i] = transition.reward
        self._terminal[i] = transition.terminal
        self._next_legal[i] = False
        if transition.terminal:
            self._next_state[i] = 0
        else:
            nxt = transition.next_state
            self._next_state[i] = (nxt.slot, nxt.day, nxt.level)
            self._next_legal[i, [int(a) for a in transition.next_legal]] = True
        self._next = (i + 1) % self.capacity

    @property
    def latest(self) -> Transition:
        if not self._items:
            raise IndexError("replay buffer is empty")
        return self._items[self._next - 1]

    def __iter__(self):
        """Oldest to newest."""
        if len(self._items) < self.capacity:
            return iter(self._items)
        return iter(self._items[self._next:] + self._items[: self._next])

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Combined experience replay: a uniform draw of older records plus the newest one (last)."""
        if not self._items:
            raise IndexError("cannot sample from an empty replay buffer")
        if batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        newest = (self._next - 1) % len(self._items)
        k = min(batch_size - 1, len(self._items) - 1)
        picks = rng.choice(len(self._items) - 1, size=k, replace=False) if k > 0 else np.empty(0, dtype=np.intp)
        # shift indices at or past the newest slot so it is never drawn twice
        picks = picks + (picks >= newest)
        return np.append(picks, newest)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return [self._items[i] for i in self.sample_indices(batch_size, rng)]


def action_values(net: QNetwork, state: State, legal: Sequence[Action]) -> np.ndarray:
    X = ENCODINGS[state.slot, state.day, state.level, [int(a) for a in legal]]
    return net._predict_trusted(X)


def select_action(net: QNetwork, state: State, legal: Sequence[Action], epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy choice among ``legal``; greedy ties go to the lowest Action."""
    legal = sorted(Action(a) for a in set(legal))
    if not legal:
        raise InvalidInput("no legal actions to choose from")
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidInput(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return legal[int(rng.integers(len(legal)))]
    if len(legal) == 1:
        return legal[0]
    return legal[int(np.argmax(action_values(net, state, legal)))]


def td_targets(net: QNetwork, buffer: ReplayBuffer, idx: np.ndarray, gamma: float) -> np.ndarray:
    """reward + gamma * max over the next legal actions, or just reward at a terminal."""
    targets = buffer._reward[idx].copy()
    live = ~buffer._terminal[idx]
    if gamma == 0.0 or not live.any():
        return targets
    rows = idx[live]
    owner, action = np.nonzero(buffer._next_legal[rows])
    ns = buffer._next_state[rows[owner]]
    q = net._predict_trusted(ENCODINGS[ns[:, 0], ns[:, 1], ns[:, 2], action])
    best = np.full(len(rows), -np.inf)
    np.maximum.at(best, owner, q)
    targets[live] += gamma * best
    return targets


def batch_inputs(buffer: ReplayBuffer, idx: np.ndarray) -> np.ndarray:
    st = buffer._state[idx]
    return ENCODINGS[st[:, 0], st[:, 1], st[:, 2], buffer._action[idx]]


def train_step(
    net: QNetwork,
    buffer: ReplayBuffer,
    batch_size: int = 32,
    alpha: float | None = None,
    gamma: float = PAPER_GAMMA,
    rng: np.random.Generator | None = None,
) -> tuple[QNetwork, float]:
    """One combined-replay SGD update. Returns the network and the loss before the update."""
    rng = np.random.default_rng() if rng is None else rng
    idx = buffer.sample_indices(batch_size, rng)
    y = td_targets(net, buffer, idx, gamma)
    net.partial_fit(batch_inputs(buffer, idx), y, learning_rate=alpha)
    return net, net.loss_


@dataclass(frozen=True)
class EpsilonSchedule:
    """Start at ``initial`` and multiply by ``decay_factor`` every tenth of training."""

    total_episodes: int
    initial: float = 1.0
    decay_factor: float = 0.8
    steps: int = 10

    @property
    def decay_interval(self) -> int:
        return max(1, self.total_episodes // self.steps)

    def __call__(self, episode: int, exploit: bool = False) -> float:
        if episode < 0:
            raise InvalidInput("episode index must be >= 0")
        if exploit or episode >= self.total_episodes:
            return 0.0
        return self.initial * self.decay_factor ** (episode // self.decay_interval)


def epsilon(schedule: EpsilonSchedule, episode: int, exploit: bool = False) -> float:
    return schedule(episode, exploit)
