"""Supervised language learning and paired reinforcement-learned interaction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agents import Agent, meanings_to_array, pad_utterances
from .language import Meaning
from .nn import adam_step, clip_grad_norm


@dataclass(frozen=True)
class SlConfig:
    epochs: int = 60
    learning_rate: float = 0.01
    batch_size: int = 32
    subset_fraction: float = 0.667

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError(f"invalid SL config {self}")
        if not 0 < self.subset_fraction <= 1:
            raise ValueError("subset_fraction must be in (0, 1]")


REWARDS = ("slots", "exact")
LISTENER_UPDATES = ("supervised", "reward_weighted")


@dataclass(frozen=True)
class RlConfig:
    inter_turns: int = 200
    learning_rate: float = 0.005
    meanings_per_turn: int = 320
    batch_size: int = 32
    self_play_interval: int = 5
    reward: str = "slots"
    listener_update: str = "supervised"
    entropy_coef: float = 0.0
    grad_clip: float = 0.0
    reset_optimizer: bool = True

    def __post_init__(self):
        if self.inter_turns < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError(f"invalid RL config {self}")
        if self.meanings_per_turn < 1 or self.self_play_interval < 0:
            raise ValueError(f"invalid RL config {self}")
        if self.reward not in REWARDS:
            raise ValueError(f"reward must be one of {REWARDS}")
        if self.listener_update not in LISTENER_UPDATES:
            raise ValueError(f"listener_update must be one of {LISTENER_UPDATES}")


@dataclass
class TurnLog:
    turn: int
    mean_reward: float
    mean_acc: float
    speaker_agent: int  # -1 on self-communication turns
    self_play: bool


def apply_update(params, lr: float, grad_clip: float = 0.0) -> None:
    if grad_clip > 0:
        clip_grad_norm(params, grad_clip)
    for p in params:
        adam_step(p, lr)


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# --------------------------------------------------------------------------
# Supervised learning


def train_supervised(agent: Agent, corpus: Sequence[tuple[Meaning, Sequence[int]]],
                     cfg: SlConfig = SlConfig(), rng: np.random.Generator | None = None) -> list[dict]:
    """Teacher-forced speaker and listener training on reference pairs.

    Returns one record per epoch with the mean per-batch speaker and
    listener losses.
    """
    if not corpus:
        raise ValueError("empty corpus")
    rng = agent.rng if rng is None else rng
    M = meanings_to_array([m for m, _ in corpus])
    tokens, lengths = pad_utterances([u for _, u in corpus])
    params = agent.params()
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(M))
        s_loss = l_loss = 0.0
        n_batches = 0
        for sl in _batches(len(M), cfg.batch_size):
            idx = perm[sl]
            s_loss += agent.speaker_loss(M[idx], tokens[idx], lengths[idx])
            l_loss += agent.listener_loss(tokens[idx], lengths[idx], M[idx])
            apply_update(params, cfg.learning_rate)
            n_batches += 1
        curve.append({"epoch": epoch, "speaker_loss": s_loss / n_batches,
                      "listener_loss": l_loss / n_batches})
    return curve


# --------------------------------------------------------------------------
# Reinforcement learning


def reward(m: Meaning, m_hat: Meaning, kind: str = "slots") -> float:
    hits = sum(int(a == b) for a, b in zip(m, m_hat))
    if kind == "exact":
        return float(hits == 3)
    return hits / 3.0


def reward_batch(M: np.ndarray, M_hat: np.ndarray, kind: str = "slots") -> np.ndarray:
    hits = (M == M_hat).sum(axis=1)
    if kind == "exact":
        return (hits == 3).astype(float)
    return hits / 3.0


def play_batch(speaker: Agent, listener: Agent, M: np.ndarray, cfg: RlConfig) -> tuple[np.ndarray, np.ndarray]:
    """One game step on a minibatch; accumulates gradients for both roles.

    Returns per-row rewards and exact-match flags.
    """
    tokens, lengths, ended, _ = speaker.decode(M, greedy=False, rng=speaker.rng)
    M_hat = listener.predict_batch(tokens, lengths)
    r = reward_batch(M, M_hat, cfg.reward)
    advantage = r - r.mean()
    speaker.speaker_loss(M, tokens, lengths, ended, weights=advantage,
                         entropy_coef=cfg.entropy_coef)
    weights = r if cfg.listener_update == "reward_weighted" else None
    listener.listener_loss(tokens, lengths, M, weights=weights)
    return r, np.all(M == M_hat, axis=1)


def assign_roles(n_agents: int, rng: np.random.Generator) -> tuple[int, int]:
    """Fair draw of (speaker, listener) among ``n_agents`` for one turn."""
    order = rng.permutation(n_agents)
    return int(order[0]), int(order[1])


def interaction_turn(pair: Sequence[Agent], meanings: np.ndarray, cfg: RlConfig,
                     rng: np.random.Generator, self_play: bool, turn: int = 0) -> TurnLog:
    if self_play:
        roles = [(i, i) for i in range(len(pair))]
        speaker_id = -1
    else:
        speaker_id, listener_id = assign_roles(len(pair), rng)
        roles = [(speaker_id, listener_id)]
    rewards, accs = [], []
    for s_id, l_id in roles:
        spk, lst = pair[s_id], pair[l_id]
        for sl in _batches(len(meanings), cfg.batch_size):
            r, acc = play_batch(spk, lst, meanings[sl], cfg)
            rewards.append(r)
            accs.append(acc)
            if spk is lst:
                apply_update(spk.role_params(True, True), cfg.learning_rate, cfg.grad_clip)
            else:
                apply_update(spk.role_params(True, False), cfg.learning_rate, cfg.grad_clip)
                apply_update(lst.role_params(False, True), cfg.learning_rate, cfg.grad_clip)
    return TurnLog(turn, float(np.concatenate(rewards).mean()), float(np.concatenate(accs).mean()),
                   speaker_id, self_play)


def is_self_play_turn(turn: int, interval: int) -> bool:
    return interval > 0 and turn % interval == 0


def run_rl(pair: Sequence[Agent], train: Sequence[Meaning], cfg: RlConfig, rng: np.random.Generator,
           on_turn: Callable[[int, TurnLog], None] | None = None) -> list[TurnLog]:
    """Run ``cfg.inter_turns`` turns (numbered from 1) on meanings drawn from ``train``."""
    if cfg.reset_optimizer:
        for agent in pair:
            agent.reset_optimizer()
    M_train = meanings_to_array(train)
    n = min(cfg.meanings_per_turn, len(M_train))
    logs = []
    for turn in range(1, cfg.inter_turns + 1):
        idx = rng.choice(len(M_train), size=n, replace=False)
        log = interaction_turn(pair, M_train[idx], cfg, rng,
                               is_self_play_turn(turn, cfg.self_play_interval), turn)
        logs.append(log)
        if on_turn is not None:
            on_turn(turn, log)
    return logs
