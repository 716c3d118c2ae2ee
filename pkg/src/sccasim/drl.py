"""Iterative composition driven by a learned update policy.

The policy network maps the full joint state (one-hot blocks, one block per
player chain position over the VMs hosting that position's type) to a
distribution over update actions, where an action is "set player i's
strategy to w". The reward of an action is the potential drop it causes,
computable from the acting player's own cost change alone. Training is
plain REINFORCE over short episodes from random starts, with a scalar
moving-average baseline; all network math is numpy, no learning framework.

The network shape is tied to one instance: any change in players, servers,
or types requires rebuilding and retraining.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import game
from .model import (
    GameParams,
    PlayerSpec,
    Strategy,
    StrategyProfile,
    SystemTopology,
    strategy_spaces,
)

_MAGIC = b"SCCANET1"


class StateCodec:
    """Fixed encoding between profiles/actions and flat vectors/indices."""

    def __init__(self, topology: SystemTopology, players: Sequence[PlayerSpec]):
        self.players = tuple(players)
        self.spaces = strategy_spaces(players, topology)
        self.blocks: list[tuple[int, int, tuple[int, ...]]] = []  # (player, pos, hosts)
        offset = 0
        self.block_offsets: dict[tuple[int, int], int] = {}
        for p in players:
            for j, t in enumerate(p.chain):
                hosts = topology.hosts(t)
                self.blocks.append((p.id, j, hosts))
                self.block_offsets[(p.id, j)] = offset
                offset += len(hosts)
        self.n_inputs = offset
        self.action_offsets = np.zeros(len(players) + 1, dtype=np.int64)
        np.cumsum([len(s) for s in self.spaces], out=self.action_offsets[1:])
        self.n_actions = int(self.action_offsets[-1])

    def encode(self, profile: StrategyProfile) -> np.ndarray:
        """One 1 per (player, position) block, at the chosen VM's slot."""
        x = np.zeros(self.n_inputs)
        for pid, j, hosts in self.blocks:
            v = profile[pid].vms[j]
            x[self.block_offsets[(pid, j)] + hosts.index(v)] = 1.0
        return x

    def decode(self, x: np.ndarray) -> StrategyProfile:
        chosen: dict[int, list[int]] = {p.id: [None] * p.chain_length for p in self.players}
        for pid, j, hosts in self.blocks:
            off = self.block_offsets[(pid, j)]
            block = x[off : off + len(hosts)]
            if block.sum() != 1.0:
                raise ValueError("encoding block is not one-hot")
            chosen[pid][j] = hosts[int(np.argmax(block))]
        return StrategyProfile(
            tuple(Strategy(tuple(chosen[p.id])) for p in self.players)
        )

    def action_decode(self, a: int) -> tuple[int, Strategy]:
        i = int(np.searchsorted(self.action_offsets, a, side="right")) - 1
        return i, self.spaces[i][a - int(self.action_offsets[i])]

    def action_index(self, i: int, strategy: Strategy) -> int:
        return int(self.action_offsets[i]) + self.spaces[i].index(strategy)


@dataclass
class PolicyNet:
    """One hidden rectified-linear layer, exponential-normalized output."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @staticmethod
    def create(n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> "PolicyNet":
        # zero final layer: the initial policy is exactly uniform
        return PolicyNet(
            w1=rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, hidden)),
            b1=np.zeros(hidden),
            w2=np.zeros((hidden, n_out)),
            b2=np.zeros(n_out),
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "PolicyNet":
        return PolicyNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


def _forward_parts(net: PolicyNet, x: np.ndarray):
    z1 = x @ net.w1 + net.b1
    h = np.maximum(z1, 0.0)
    z2 = h @ net.w2 + net.b2
    z2 = z2 - z2.max()
    e = np.exp(z2)
    return z1, h, e / e.sum()


def policy_forward(net: PolicyNet, x: np.ndarray) -> np.ndarray:
    """Action distribution for one encoded state."""
    if x.shape[0] != net.w1.shape[0]:
        raise ValueError(
            f"input dimension {x.shape[0]} does not match network ({net.w1.shape[0]})"
        )
    return _forward_parts(net, x)[2]


def log_policy_grads(net: PolicyNet, x: np.ndarray, a: int) -> list[np.ndarray]:
    """Gradients of log pi(a|x) in the order (w1, b1, w2, b2)."""
    z1, h, probs = _forward_parts(net, x)
    dz2 = -probs
    dz2[a] += 1.0
    dw2 = np.outer(h, dz2)
    db2 = dz2
    dh = net.w2 @ dz2
    dz1 = dh * (z1 > 0.0)
    dw1 = np.outer(x, dz1)
    db1 = dz1
    return [dw1, db1, dw2, db2]


def reward(
    w: StrategyProfile,
    w_after: StrategyProfile,
    i: int,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
) -> float:
    """Potential drop caused by updating player i, evaluated locally as
    2 * rate_i * gamma_vm^(-F_i) times the player's own cost decrease."""
    if game.hamming(w, w_after) > 1:
        raise ValueError("profiles differ in more than one player")
    if w[i] == w_after[i]:
        if w != w_after:
            raise ValueError(f"profiles differ at a player other than {i}")
        return 0.0
    c_before = game.expected_cost(i, w, players, topology, params).expected_cost
    c_after = game.expected_cost(i, w_after, players, topology, params).expected_cost
    diff = c_before - c_after
    if diff == 0.0:
        return 0.0
    return game.game_weight(players[i], params) * diff


def _sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(probs), u, side="right")), len(probs) - 1)


@dataclass
class TrainResult:
    net: PolicyNet
    mean_potential_per_episode: np.ndarray
    baseline: float = field(default=0.0)


def train(
    net: PolicyNet,
    codec: StateCodec,
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    *,
    episodes: int,
    horizon: int,
    lr: float,
    discount: float = 0.99,
    rng: np.random.Generator,
    baseline_decay: float = 0.9,
) -> TrainResult:
    """REINFORCE: episodes start from uniform random profiles; each step
    samples an action, applies it, and earns the potential drop. Updates
    ascend sum_t log pi(a_t|s_t) * (G_t - baseline) with discounted returns
    and a moving-average baseline. Training is in place; the per-episode
    mean potential is returned as the learning curve.
    """
    if episodes <= 0 or horizon <= 0 or lr < 0 or not 0 <= discount <= 1:
        raise ValueError("bad training hyperparameters")
    spaces = codec.spaces
    curve = np.empty(episodes)
    baseline = 0.0
    for ep in range(episodes):
        profile = StrategyProfile(
            tuple(spaces[i][rng.integers(len(spaces[i]))] for i in range(len(players)))
        )
        xs = np.empty((horizon, codec.n_inputs))
        z1s = np.empty((horizon, net.b1.shape[0]))
        probs_all = np.empty((horizon, codec.n_actions))
        actions = np.empty(horizon, dtype=np.int64)
        rewards = np.empty(horizon)
        phis = np.empty(horizon)
        for t in range(horizon):
            x = codec.encode(profile)
            z1, h, probs = _forward_parts(net, x)
            a = _sample_action(probs, rng)
            i, strat = codec.action_decode(a)
            nxt = profile.replaced(i, strat)
            rewards[t] = reward(profile, nxt, i, players, topology, params)
            xs[t] = x
            z1s[t] = z1
            probs_all[t] = probs
            actions[t] = a
            profile = nxt
            phis[t] = game.potential(profile, players, topology, params)
        returns = np.empty(horizon)
        acc = 0.0
        for t in range(horizon - 1, -1, -1):
            acc = rewards[t] + discount * acc
            returns[t] = acc
        advantage = returns - baseline
        baseline = baseline_decay * baseline + (1.0 - baseline_decay) * returns.mean()

        dz2 = -probs_all
        dz2[np.arange(horizon), actions] += 1.0
        dz2 *= advantage[:, None]
        hs = np.maximum(z1s, 0.0)
        dw2 = hs.T @ dz2
        db2 = dz2.sum(axis=0)
        dh = dz2 @ net.w2.T
        dz1 = dh * (z1s > 0.0)
        dw1 = xs.T @ dz1
        db1 = dz1.sum(axis=0)
        for p, g in zip(net.params(), (dw1, db1, dw2, db2)):
            p += lr * g
        if not all(np.isfinite(p).all() for p in net.params()):
            raise FloatingPointError(f"training diverged at episode {ep}")
        curve[ep] = phis.mean()
    return TrainResult(net=net, mean_potential_per_episode=curve, baseline=baseline)


def drl_compose(
    net: PolicyNet,
    codec: StateCodec,
    start: StrategyProfile,
    iterations: int,
) -> StrategyProfile:
    """Apply the highest-probability action repeatedly; deterministic."""
    profile = start
    for _ in range(iterations):
        probs = policy_forward(net, codec.encode(profile))
        i, strat = codec.action_decode(int(np.argmax(probs)))
        profile = profile.replaced(i, strat)
    return profile


def save_net(net: PolicyNet, path, seed: int = 0) -> None:
    """Flat binary: magic, dims and seed header, then w1,b1,w2,b2 raw."""
    n_in, hidden, n_out = net.dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qqqq", n_in, hidden, n_out, seed))
        for p in net.params():
            fh.write(np.ascontiguousarray(p, dtype=np.float64).tobytes())


def load_net(path) -> tuple[PolicyNet, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a policy net file")
        n_in, hidden, n_out, seed = struct.unpack("<qqqq", fh.read(32))
        def arr(shape):
            count = int(np.prod(shape))
            return np.frombuffer(fh.read(count * 8), dtype=np.float64).reshape(shape).copy()
        net = PolicyNet(
            w1=arr((n_in, hidden)),
            b1=arr((hidden,)),
            w2=arr((hidden, n_out)),
            b2=arr((n_out,)),
        )
    return net, {"n_in": n_in, "hidden": hidden, "n_out": n_out, "seed": seed}
