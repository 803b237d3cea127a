"""The deep Q-learner: value network, experience replay, target network,
epsilon-greedy control over filtered action sets, and the composite reward.

One experience per agent act. The bootstrap term maxes only over the acts
that are actually available in the successor state, and terminal
experiences regress on the bare reward.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import dialogue, game, numerics, persist
from .dialogue import ACTS, N_ACTS, N_FEATURES, Vocabulary
from .game import Board

BONUS_WEIGHT = 0.5        # w in the composite reward
STEP_PENALTY = 0.1        # DL, the per-act efficiency charge
TERMINAL_BONUS = 5.0      # end-of-dialogue bonus unless the game was lost

Q_INPUT_SHAPE = (N_FEATURES,)
Q_ARCH = (
    {"kind": "affine", "out": 60},
    {"kind": "rectifier"},
    {"kind": "affine", "out": 60},
    {"kind": "rectifier"},
    {"kind": "affine", "out": N_ACTS},
)


def reward(board_after_agent_action: Board, act: str, dr: float,
           terminal_outcome: str | None = None) -> float:
    """Per-step reward BR*w + DR*(1-w) - DL, plus the end-of-dialogue bonus.

    `board_after_agent_action` is the board right after the agent's own act
    took effect (before any user response); `dr` is the data-likeness
    probability of the act in the state it was taken.
    """
    br = game.bonus_reward(board_after_agent_action) if dialogue.is_game_move(act) else 0.0
    value = br * BONUS_WEIGHT + dr * (1.0 - BONUS_WEIGHT) - STEP_PENALTY
    if terminal_outcome is not None:
        value += 0.0 if terminal_outcome == game.USER_WIN else TERMINAL_BONUS
    return value


class QNetwork:
    """Fully connected 57-60-60-18 value network."""

    def __init__(self, network: numerics.Network):
        self.network = network

    @classmethod
    def new(cls, rng: np.random.Generator | None = None) -> "QNetwork":
        return cls(numerics.build_network(Q_ARCH, Q_INPUT_SHAPE, rng))

    def q_values(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.ndim == 1:
            return self.network.forward(states[None])[-1][0]
        return self.network.forward(states)[-1]

    def clone(self) -> "QNetwork":
        other = QNetwork.new()
        other.network.copy_from(self.network)
        return other

    def save(self, path, vocab: Vocabulary, metadata: dict | None = None) -> None:
        meta = dict(metadata or {})
        meta["vocab_sha256"] = vocab.fingerprint()
        meta["vocab_file"] = str(path) + ".vocab.txt"
        vocab.save(meta["vocab_file"])
        params = [p for _, p in self.network.parameters()]
        persist.save_model(path, "qnetwork", self.network.spec(), params, meta)

    @classmethod
    def load(cls, path):
        """Returns (QNetwork, Vocabulary, sidecar); verifies the vocab hash."""
        kind, arch, params, sidecar = persist.load_model(path)
        if kind != "qnetwork":
            raise persist.ModelFormatError(f"{path}: expected a qnetwork model, got {kind!r}")
        if not sidecar or "vocab_file" not in sidecar:
            raise persist.ModelFormatError(f"{path}: missing sidecar with vocabulary reference")
        vocab = Vocabulary.load(sidecar["vocab_file"])
        if vocab.fingerprint() != sidecar.get("vocab_sha256"):
            raise persist.ModelFormatError(f"{path}: vocabulary file does not match model")
        network = numerics.build_network(arch["layers"], arch["input_shape"])
        for (_, dst), src in zip(network.parameters(), params):
            dst[...] = src
        return cls(network), vocab, sidecar


@dataclass
class Experience:
    state: np.ndarray
    act: int
    reward: float
    next_state: np.ndarray
    terminal: bool
    legal_next: tuple


class ReplayMemory:
    """Bounded FIFO of experiences with uniform-with-replacement sampling."""

    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self._items = []
        self._pos = 0

    def __len__(self):
        return len(self._items)

    def push(self, experience: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(experience)
        else:
            self._items[self._pos] = experience
            self._pos = (self._pos + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int):
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


def select_action(net: QNetwork, state: np.ndarray, allowed, epsilon: float,
                  rng: np.random.Generator, explore_probs=None) -> int:
    """Epsilon-greedy over the allowed act indices; ties go to the lowest index.

    `explore_probs`, when given, replaces the uniform exploratory draw with a
    draw proportional to those probabilities (restricted to `allowed`).
    """
    allowed = tuple(allowed)
    if not allowed:
        raise ValueError("allowed action set is empty")
    if epsilon > 0 and rng.random() < epsilon:
        if explore_probs is None:
            return int(allowed[rng.integers(len(allowed))])
        weights = np.asarray([explore_probs[a] for a in allowed], dtype=float)
        total = weights.sum()
        if total <= 0:
            return int(allowed[rng.integers(len(allowed))])
        return int(allowed[rng.choice(len(allowed), p=weights / total)])
    q = net.q_values(state)
    return int(allowed[int(np.argmax(q[list(allowed)]))])


def greedy_policy(net: QNetwork):
    def policy(state, allowed):
        allowed = tuple(allowed)
        q = net.q_values(state)
        return int(allowed[int(np.argmax(q[list(allowed)]))])
    return policy


def sync_target(net: QNetwork, target: QNetwork) -> None:
    target.network.copy_from(net.network)


def q_update(net: QNetwork, target: QNetwork, batch, gamma: float, lr: float) -> float:
    """One SGD step on the mean squared TD error of a minibatch."""
    n = len(batch)
    states = np.stack([e.state for e in batch])
    acts = np.asarray([e.act for e in batch], dtype=int)
    rewards = np.asarray([e.reward for e in batch])
    next_states = np.stack([e.next_state for e in batch])
    terminal = np.asarray([e.terminal for e in batch], dtype=bool)

    next_q = target.q_values(next_states)
    legal_mask = np.zeros((n, N_ACTS), dtype=bool)
    for i, e in enumerate(batch):
        if not e.terminal:
            legal_mask[i, list(e.legal_next)] = True
    masked = np.where(legal_mask, next_q, -np.inf)
    best_next = masked.max(axis=1)
    best_next[terminal] = 0.0

    targets = rewards + gamma * best_next
    q = net.network.forward(states)[-1]
    selected = q[np.arange(n), acts]
    err = selected - targets
    loss = float((err ** 2).mean())
    if not math.isfinite(loss):
        raise numerics.NumericsError(f"TD loss is not finite ({loss}); training aborted")
    d_q = np.zeros_like(q)
    d_q[np.arange(n), acts] = 2.0 * err / n
    net.network.backward(d_q)
    net.network.sgd_step(lr)
    return loss


@dataclass
class TrainingConfig:
    total_steps: int = 1_500_000
    gamma: float = 0.7
    lr: float = 0.001
    batch_size: int = 32
    epsilon_start: float = 1.0
    epsilon_min: float = 0.01
    epsilon_decay_fraction: float = 0.25
    target_sync_period: int = 150
    replay_capacity: int = 100_000
    warmup: int | None = None
    rng_seed: int = 0
    exploration: str = "epsilon"      # "epsilon" or "nb-posterior"
    bonus_lookahead: bool = False
    max_turns: int = 50

    def effective_warmup(self) -> int:
        if self.warmup is not None:
            return self.warmup
        return min(1000, max(self.batch_size, self.total_steps // 5))

    def epsilon_at(self, step: int) -> float:
        decay_steps = max(1, int(self.total_steps * self.epsilon_decay_fraction))
        done = min(1.0, step / decay_steps)
        return self.epsilon_start + (self.epsilon_min - self.epsilon_start) * done


@dataclass
class TrainingTrace:
    steps: list = field(default_factory=list)      # (step, episode, epsilon, loss, reward)
    episodes: list = field(default_factory=list)   # (episode, outcome, n_steps, total_reward)
    sync_steps: list = field(default_factory=list)  # gradient-step numbers of target syncs

    def step_rewards(self) -> np.ndarray:
        return np.asarray([row[4] for row in self.steps])

    def to_csv(self, path, metadata: str = "") -> None:
        final_steps = {}
        for episode, outcome, n_steps, _ in self.episodes:
            final_steps[episode] = (outcome, n_steps)
        seen = {}
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if metadata:
                fh.write(f"# {metadata}\n")
            writer = csv.writer(fh)
            writer.writerow(["step", "episode", "epsilon", "loss", "reward", "outcome"])
            for step, episode, eps, loss, rew in self.steps:
                seen[episode] = seen.get(episode, 0) + 1
                outcome = ""
                if episode in final_steps and seen[episode] == final_steps[episode][1]:
                    outcome = final_steps[episode][0]
                writer.writerow([step, episode, f"{eps:.6f}",
                                 "" if loss is None else f"{loss:.8f}",
                                 f"{rew:.6f}", outcome])


def train(config: TrainingConfig, env):
    """Deep Q-learning with experience replay against a dialogue environment.

    The environment contract: reset() -> (state, allowed); step(act) ->
    ((state, allowed), reward, terminal, done, info) with info["outcome"].
    """
    seq = np.random.SeedSequence(config.rng_seed)
    init_seed, explore_seed, replay_seed = seq.spawn(3)
    rng_init = np.random.default_rng(init_seed)
    rng_explore = np.random.default_rng(explore_seed)
    rng_replay = np.random.default_rng(replay_seed)

    net = QNetwork.new(rng_init)
    target = net.clone()
    replay = ReplayMemory(config.replay_capacity)
    trace = TrainingTrace()
    warmup = config.effective_warmup()
    action_model = getattr(env, "action_model", None)

    state, allowed = env.reset()
    episode = 0
    episode_reward = 0.0
    episode_steps = 0
    grad_steps = 0
    for step in range(config.total_steps):
        eps = config.epsilon_at(step)
        explore_probs = None
        if config.exploration == "nb-posterior" and action_model is not None:
            explore_probs = action_model.posterior(dialogue.binarize(state))
        act = select_action(net, state, allowed, eps, rng_explore, explore_probs)
        (next_state, next_allowed), r, terminal, done, info = env.step(act)
        replay.push(Experience(state, act, r, next_state, terminal, tuple(next_allowed)))
        episode_reward += r
        episode_steps += 1

        loss = None
        if len(replay) >= max(warmup, config.batch_size):
            batch = replay.sample(rng_replay, config.batch_size)
            loss = q_update(net, target, batch, config.gamma, config.lr)
            grad_steps += 1
            if grad_steps % config.target_sync_period == 0:
                sync_target(net, target)
                trace.sync_steps.append(grad_steps)
        trace.steps.append((step, episode, eps, loss, r))

        if done:
            trace.episodes.append((episode, info["outcome"], episode_steps, episode_reward))
            episode += 1
            episode_reward = 0.0
            episode_steps = 0
            state, allowed = env.reset()
        else:
            state, allowed = next_state, next_allowed
    return net, trace


def evaluate(net: QNetwork, env, n_games: int):
    """Greedy-policy evaluation; unfinished dialogues count as losses."""
    policy = greedy_policy(net)
    return evaluate_policy(policy, env, n_games)


def evaluate_policy(policy, env, n_games: int):
    outcomes = {game.AGENT_WIN: 0, game.DRAW: 0, game.USER_WIN: 0}
    total_reward = 0.0
    total_turns = 0
    for _ in range(n_games):
        state, allowed = env.reset()
        done = False
        while not done:
            act = policy(state, allowed)
            (state, allowed), r, _, done, info = env.step(act)
            total_reward += r
            total_turns += 1
        result = info["outcome"]
        if result not in outcomes:
            result = game.USER_WIN       # aborted dialogue: scored as a loss
        outcomes[result] += 1
    return {
        "games": n_games,
        "win_rate": outcomes[game.AGENT_WIN] / n_games,
        "draw_rate": outcomes[game.DRAW] / n_games,
        "loss_rate": outcomes[game.USER_WIN] / n_games,
        "avg_reward": total_reward / n_games,
        "avg_turns": total_turns / n_games,
    }
