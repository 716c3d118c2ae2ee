"""One-shot composition by UCB-guided tree search.

Players are assigned in id order down a decision tree: a node at depth d
fixes the strategies of players 0..d-1, its outgoing edges are player d's
strategies, and leaves are complete profiles. Each selection round walks
the tree by UCB among fully expanded nodes, expands a random untried child
otherwise, scores the reached node by the potential of a uniform random
completion (or the exact potential at a leaf), and backs the reward up the
path. After the sampling budget for one player is spent, the best child by
mean reward becomes the new root and the search continues for the next
player, keeping the subtree.

Rewards are negated potentials, backed up the path unchanged by default.
An optional mode rescales them to [-1, 0] by the running min/max of all
potentials seen, which keeps the reward term comparable to the O(1)
exploration bonus; at small sampling budgets the unscaled (greedier)
behavior measures better end to end, so it stays the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .model import (
    GameParams,
    PlayerSpec,
    Strategy,
    StrategyProfile,
    SystemTopology,
)

_SCALE_EPS = 1e-9
_EXPLORE_OMEGA = math.sqrt(2.0)


@dataclass(frozen=True)
class AssignmentState:
    """Prefix of a profile: (player id, strategy) pairs for players 0..d-1."""

    entries: tuple[tuple[int, Strategy], ...]

    def __post_init__(self) -> None:
        for d, (pid, _) in enumerate(self.entries):
            if pid != d:
                raise ValueError("players must be assigned in id order")

    @property
    def depth(self) -> int:
        return len(self.entries)


class TreeNode:
    """Search node: visit count n, cumulative reward q, child statistics."""

    __slots__ = ("parent", "edge", "depth", "n", "q", "untried", "children",
                 "child_n", "child_q")

    def __init__(self, parent, edge: int | None, depth: int, branching: int):
        self.parent = parent
        self.edge = edge
        self.depth = depth
        self.n = 0
        self.q = 0.0
        self.untried = list(range(branching))
        self.children: dict[int, TreeNode] = {}
        self.child_n = np.zeros(branching)
        self.child_q = np.zeros(branching)

    @property
    def is_leaf(self) -> bool:
        return len(self.child_n) == 0


def best_child(node: TreeNode, omega: float) -> TreeNode:
    """Child maximizing mean reward plus omega * sqrt(2 ln n_parent / n_child).

    Requires every child to have been visited; ties resolve to the lowest
    child index.
    """
    if node.untried or (node.child_n == 0).any():
        raise ValueError("best_child requires all children visited")
    scores = node.child_q / node.child_n
    if omega > 0.0:
        scores = scores + omega * np.sqrt(2.0 * math.log(node.n) / node.child_n)
    return node.children[int(np.argmax(scores))]


def _best_visited_edge(node: TreeNode) -> int:
    # final pick: mean reward over visited children only (budget may be
    # smaller than the branching factor)
    visited = node.child_n > 0
    if not visited.any():
        raise ValueError("node has no visited children")
    means = np.where(visited, node.child_q / np.where(visited, node.child_n, 1.0), -np.inf)
    return int(np.argmax(means))


class MctsSearch:
    """Incremental search over one instance; promotes the chosen child to
    root between players so statistics carry over."""

    def __init__(
        self,
        topology: SystemTopology,
        players: Sequence[PlayerSpec],
        params: GameParams,
        normalized_reward: bool = False,
        backend: str | None = None,
        prefix: Sequence[int] = (),
    ):
        self.inst = engine.compile_instance(topology, players, params)
        self.backend = backend
        self.normalized_reward = normalized_reward
        self.n_players = self.inst.n_players
        self.prefix = list(prefix)
        self.root = self._new_node(None, None, len(self.prefix))
        self.phi_min = math.inf
        self.phi_max = -math.inf
        self._kernels = engine.load_kernels(backend)
        self._loads_buf = np.zeros(self.inst.n_vm_slots)
        self._state_buf = np.zeros(self.n_players, dtype=np.int64)

    def _new_node(self, parent, edge, depth) -> TreeNode:
        branching = int(self.inst.n_strats[depth]) if depth < self.n_players else 0
        return TreeNode(parent, edge, depth, branching)

    def _phi_of(self, state: np.ndarray) -> float:
        self._kernels.fill_loads(
            state, self._loads_buf, self.inst.gl, self.inst.s_off,
            self.inst.dv_off, self.inst.dv_flat,
        )
        return float(
            self._kernels.phi_of(
                state, self._loads_buf, self.inst.lam, self.inst.alpha,
                self.inst.gamma_user, self.inst.s_off, self.inst.strat_lat,
            )
        )

    def _rollout(self, partial: list[int], rng: np.random.Generator) -> float:
        state = self._state_buf
        for d, s in enumerate(partial):
            state[d] = s
        for d in range(len(partial), self.n_players):
            state[d] = rng.integers(int(self.inst.n_strats[d]))
        return self._phi_of(state)

    def _reward(self, phi: float) -> float:
        # leaf evaluations update the running scale too
        if phi < self.phi_min:
            self.phi_min = phi
        if phi > self.phi_max:
            self.phi_max = phi
        if self.normalized_reward:
            return -(phi - self.phi_min) / (self.phi_max - self.phi_min + _SCALE_EPS)
        return -phi

    def _round(self, rng: np.random.Generator) -> None:
        node = self.root
        partial = list(self.prefix)
        while not node.is_leaf:
            if node.untried:
                pick = node.untried.pop(int(rng.integers(len(node.untried))))
                child = self._new_node(node, pick, node.depth + 1)
                node.children[pick] = child
                node = child
                partial.append(pick)
                break
            node = best_child(node, _EXPLORE_OMEGA)
            partial.append(node.edge)
        if node.depth == self.n_players:
            phi = self._phi_of(np.array(partial, dtype=np.int64))
        else:
            phi = self._rollout(partial, rng)
        r = self._reward(phi)
        walk = node
        while walk is not None:
            walk.n += 1
            walk.q += r
            if walk.parent is not None:
                walk.parent.child_n[walk.edge] += 1
                walk.parent.child_q[walk.edge] += r
            walk = walk.parent

    def select_strategy_index(self, i: int, budget: int, rng: np.random.Generator) -> int:
        if i != self.root.depth:
            raise ValueError(f"root assigns player {self.root.depth}, not {i}")
        if budget <= 0:
            raise ValueError("sampling budget must be positive")
        for _ in range(budget):
            self._round(rng)
        return _best_visited_edge(self.root)

    def advance(self, edge: int) -> None:
        child = self.root.children.get(edge)
        if child is None:
            child = self._new_node(self.root, edge, self.root.depth + 1)
        child.parent = None
        self.root = child
        self.prefix.append(edge)


def simulate(
    z: AssignmentState,
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    rng: np.random.Generator,
    search: MctsSearch | None = None,
) -> float:
    """Potential of a uniform random completion of the assignment prefix."""
    if search is None:
        search = MctsSearch(topology, players, params)
    prefix = [search.inst.strategy_index(d, s) for d, (_, s) in enumerate(z.entries)]
    return search._rollout(prefix, rng)


def select_strategy(
    z: AssignmentState,
    i: int,
    budget: int,
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    rng: np.random.Generator,
    normalized_reward: bool = False,
) -> Strategy:
    """Run `budget` sampling rounds below the prefix `z` and return the best
    strategy for player i (the next unassigned player)."""
    if i != z.depth:
        raise ValueError(f"prefix assigns players up to {z.depth}, cannot select for {i}")
    search = MctsSearch(topology, players, params, normalized_reward=normalized_reward)
    search.prefix = [search.inst.strategy_index(d, s) for d, (_, s) in enumerate(z.entries)]
    search.root = search._new_node(None, None, len(search.prefix))
    edge = search.select_strategy_index(i, budget, rng)
    return search.inst.spaces[i][edge]


def mcts_compose(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    budget: int,
    rng: np.random.Generator,
    normalized_reward: bool = False,
    backend: str | None = None,
) -> StrategyProfile:
    """Assign every player in id order, spending `budget` sampling rounds
    per player and promoting the chosen subtree between players."""
    search = MctsSearch(topology, players, params,
                        normalized_reward=normalized_reward, backend=backend)
    for i in range(search.n_players):
        edge = search.select_strategy_index(i, budget, rng)
        search.advance(edge)
    state = np.array(search.prefix, dtype=np.int64)
    return engine.profile_from_state(search.inst, state)
