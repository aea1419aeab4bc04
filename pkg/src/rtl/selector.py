"""Reinforced data selector over source batches.

Each source pair gets a state vector ``[z, loss_src, loss_tgt, p_src, p_tgt]``;
a two-layer tanh policy samples keep (1) or drop (0) for every pair. After
an episode the policy is moved along the score-function gradient weighted by
either the discounted return (REINFORCE) or the return minus a learned value
estimate (actor-critic), and the value net is regressed onto the returns.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import SOURCE, TARGET, PairBatch, SentencePair
from .numerics import (
    FeedForwardSpec,
    ParamStore,
    adam_step,
    feed_forward,
    feed_forward_backward,
    init_feed_forward,
)
from .transfer import TransferModel, per_pair_loss

MODES = ("reinforce", "actor_critic")
KEEP, DROP = 1, 0
POLICY_HIDDEN_CHOICES = (32, 64, 128, 256, 512)
GAMMA_CHOICES = (0.0, 0.2, 0.4, 0.6, 0.8, 0.95, 1.0)


def state_width(z_dim: int) -> int:
    return z_dim + 1 + 1 + 2 + 2


def build_states(batch: PairBatch, model: TransferModel) -> np.ndarray:
    """``[n, 4h + 6]`` state matrix; reads params, writes nothing."""
    if batch.domain != SOURCE:
        raise ValueError("states are built for source batches")
    fwd = model.forward(batch, SOURCE)
    p_src = fwd.probs
    p_tgt = model.head_probs(fwd.enc.z, TARGET)
    loss_src = per_pair_loss(p_src, batch.labels)
    loss_tgt = per_pair_loss(p_tgt, batch.labels)
    return np.concatenate(
        [fwd.enc.z, loss_src[:, None], loss_tgt[:, None], p_src, p_tgt], axis=1
    )


class SelectorNets:
    """Policy net ``l -> hidden (tanh) -> 2 (softmax)`` and value net
    ``l -> hidden (tanh) -> 1``, sharing one :class:`ParamStore`."""

    def __init__(self, state_dim: int, hidden: int, rng: np.random.Generator, clip_norm: float | None = 5.0) -> None:
        self.state_dim = state_dim
        self.hidden = hidden
        self.clip_norm = clip_norm
        self.policy_spec = FeedForwardSpec((state_dim, hidden, 2), "tanh", "softmax", activate_output=False)
        self.value_spec = FeedForwardSpec((state_dim, hidden, 1), "tanh", "none", activate_output=False)
        self.params = ParamStore()
        init_feed_forward(self.params, self.policy_spec, "policy", rng)
        init_feed_forward(self.params, self.value_spec, "value", rng)

    @property
    def policy_names(self) -> list[str]:
        return self.params.names("policy.")

    @property
    def value_names(self) -> list[str]:
        return self.params.names("value.")

    def value(self, states: np.ndarray) -> np.ndarray:
        out, _ = feed_forward(states, self.value_spec, self.params, "value")
        return out[:, 0]


def policy_forward(states: np.ndarray, nets: SelectorNets) -> np.ndarray:
    """Rows are ``[P(drop), P(keep)]``."""
    probs, _ = feed_forward(states, nets.policy_spec, nets.params, "policy")
    return probs


@dataclass
class ActionBatch:
    actions: np.ndarray
    probs: np.ndarray


def sample_actions(probs: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> ActionBatch:
    if greedy:
        actions = np.argmax(probs, axis=1).astype(np.int64)
    else:
        actions = (rng.random(len(probs)) < probs[:, KEEP]).astype(np.int64)
    return ActionBatch(actions, probs)


def filter_batch(batch: PairBatch, actions: np.ndarray) -> PairBatch | None:
    """Rows with action 1, in order; ``None`` when nothing was kept."""
    actions = np.asarray(actions)
    if len(actions) != len(batch):
        raise ValueError("one action per pair required")
    rows = np.flatnonzero(actions == KEEP)
    if len(rows) == 0:
        return None
    if len(rows) == len(batch):
        return batch
    return batch.select(rows)


def compute_reward(model: TransferModel, val_pairs: Sequence[SentencePair]) -> float:
    """Target-model accuracy on the validation pairs."""
    if not val_pairs:
        raise ValueError("reward needs a non-empty validation set")
    acc, _ = model.evaluate(val_pairs, TARGET)
    return acc


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    if len(rewards) == 0:
        raise ValueError("no rewards")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    out = np.empty(len(rewards))
    running = 0.0
    for b in range(len(rewards) - 1, -1, -1):
        running = rewards[b] + gamma * running
        out[b] = running
    return out


@dataclass
class Step:
    states: np.ndarray
    actions: np.ndarray
    reward: float
    index: np.ndarray  # source-pair indices of the batch rows


@dataclass
class EpisodeRecord:
    gamma: float
    steps: list[Step] = field(default_factory=list)

    def add(self, states, actions, reward, index) -> None:
        self.steps.append(Step(states, np.asarray(actions), float(reward), np.asarray(index)))

    def returns(self) -> np.ndarray:
        return discounted_returns([s.reward for s in self.steps], self.gamma)

    def __len__(self) -> int:
        return len(self.steps)


def policy_objective_grad(states: np.ndarray, actions: np.ndarray, targets: np.ndarray, nets: SelectorNets) -> float:
    """Accumulate grads of ``-(1/n) sum_i v_i log pi(a_i | S_i)``; returns the
    objective ``(1/n) sum_i v_i log pi(a_i | S_i)``."""
    probs, cache = feed_forward(states, nets.policy_spec, nets.params, "policy")
    n = len(actions)
    rows = np.arange(n)
    logp = np.log(np.maximum(probs[rows, actions], 1e-12))
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_logits = -(targets[:, None] / n) * (onehot - probs)
    feed_forward_backward(d_logits, cache, nets.policy_spec, nets.params, "policy", wrt_logits=True)
    return float(np.mean(targets * logp))


def advantages(step_states: np.ndarray, ret: float, nets: SelectorNets, mode: str) -> np.ndarray:
    if mode == "reinforce":
        return np.full(len(step_states), ret)
    if mode == "actor_critic":
        return ret - nets.value(step_states)
    raise ValueError(f"unknown policy optimization mode {mode!r}")


def policy_update(record: EpisodeRecord, nets: SelectorNets, mode: str, lr: float) -> None:
    """One Adam step per stored batch, in order. The value net is only read."""
    if mode not in MODES:
        raise ValueError(f"unknown policy optimization mode {mode!r}")
    for step, ret in zip(record.steps, record.returns()):
        v = advantages(step.states, ret, nets, mode)
        policy_objective_grad(step.states, step.actions, v, nets)
        adam_step(nets.params, nets.policy_names, lr, clip_norm=nets.clip_norm)


def value_loss_grad(states: np.ndarray, ret: float, nets: SelectorNets) -> float:
    pred, cache = feed_forward(states, nets.value_spec, nets.params, "value")
    diff = pred[:, 0] - ret
    feed_forward_backward((2.0 / len(diff)) * diff[:, None], cache, nets.value_spec, nets.params, "value")
    return float(np.mean(diff * diff))


def value_update(record: EpisodeRecord, nets: SelectorNets, lr: float) -> None:
    for step, ret in zip(record.steps, record.returns()):
        value_loss_grad(step.states, ret, nets)
        adam_step(nets.params, nets.value_names, lr, clip_norm=nets.clip_norm)


# --- selection log -----------------------------------------------------------

BATCH_HEADER = "episode,batch,kept,total,reward"
ACTION_HEADER = "pair,action"


@dataclass
class SelectionLog:
    rows: list[tuple[int, int, int, int, float]] = field(default_factory=list)
    final_actions: dict[int, int] = field(default_factory=dict)


def write_selection_log(path: str | Path, log: SelectionLog, header: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        fh.write(BATCH_HEADER + "\n")
        for ep, b, kept, total, reward in log.rows:
            fh.write(f"{ep},{b},{kept},{total},{reward!r}\n")
        fh.write(ACTION_HEADER + "\n")
        for idx in sorted(log.final_actions):
            fh.write(f"{idx},{log.final_actions[idx]}\n")


def read_selection_log(path: str | Path) -> SelectionLog:
    out = SelectionLog()
    section = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in (BATCH_HEADER, ACTION_HEADER):
                section = line
                continue
            cols = line.split(",")
            try:
                if section == BATCH_HEADER and len(cols) == 5:
                    out.rows.append((int(cols[0]), int(cols[1]), int(cols[2]), int(cols[3]), float(cols[4])))
                elif section == ACTION_HEADER and len(cols) == 2:
                    out.final_actions[int(cols[0])] = int(cols[1])
                else:
                    raise ValueError("unexpected column count")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed selection log line ({exc})") from exc
    return out
