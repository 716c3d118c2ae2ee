"""Cost and potential mathematics of the composition game.

Each player's expected cost combines a failure penalty (its own failure, or
any of its chosen VMs failing) with the survival-weighted sum of chain
latency and per-VM congestion. The game admits a potential: twice the
survival-weighted traffic-latency product plus the squared expected load of
every VM. Any unilateral strategy change moves the potential by exactly
2 * rate_i * gamma_vm^(-F_i) times the player's own cost change, which is
what makes fully local decision rules globally meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .model import (
    GameParams,
    PlayerSpec,
    Strategy,
    StrategyProfile,
    SystemTopology,
    strategy_spaces,
)


@dataclass(frozen=True)
class CostBreakdown:
    """Latency, congestion, and the combined expected cost of one player."""

    latency_cost: float
    congestion_cost: float
    expected_cost: float


@dataclass(frozen=True)
class Deviation:
    """A strictly improving unilateral move, used as a non-equilibrium witness."""

    player: int
    strategy: Strategy
    cost_before: float
    cost_after: float


def game_weight(player: PlayerSpec, params: GameParams) -> float:
    """Player-specific potential weight 2 * rate * gamma_vm^(-chain length).

    Infinite when gamma_vm == 0; callers treat a zero cost difference times
    this weight as zero, which is the only combination that can occur.
    """
    if params.gamma_vm == 0.0:
        return math.inf
    return 2.0 * player.rate * params.gamma_vm ** (-player.chain_length)


def latency_cost(player: PlayerSpec, strategy: Strategy, topology: SystemTopology) -> float:
    """Total chain latency: ingress -> first VM -> ... -> last VM -> egress."""
    lat = topology.latency
    nodes = [player.ingress] + [topology.vm_node(v) for v in strategy.vms] + [player.egress]
    return float(sum(lat[a, b] for a, b in zip(nodes, nodes[1:])))


def sharers(vm_id: int, profile: StrategyProfile) -> frozenset:
    """Ids of the players whose current strategy uses the given VM."""
    return frozenset(
        k for k, strat in enumerate(profile.strategies) if vm_id in strat.vms
    )


def workload(
    i: int,
    vm_id: int,
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    params: GameParams,
) -> float:
    """Expected load on one of player i's VMs: own rate plus the
    survival-discounted rates of the sharing players.

    Only defined for VMs the player actually selected.
    """
    if vm_id not in profile[i].vms:
        raise ValueError(f"VM {vm_id} is not part of player {i}'s strategy")
    total = players[i].rate
    for k in sorted(sharers(vm_id, profile)):
        if k != i:
            total += params.gamma_user * players[k].rate
    return total


def congestion_cost(
    i: int,
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    params: GameParams,
) -> float:
    """Sum of the expected workloads over the distinct VMs player i uses."""
    return sum(
        workload(i, v, profile, players, params) for v in profile[i].distinct_vms()
    )


def expected_cost(
    i: int,
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
) -> CostBreakdown:
    """Expected cost of player i: failure penalty terms plus the
    survival-weighted latency/congestion cost."""
    p = players[i]
    c_lat = latency_cost(p, profile[i], topology)
    c_cong = congestion_cost(i, profile, players, params)
    survive_all = params.gamma_user * params.gamma_vm ** p.chain_length
    fail_term = (
        params.gamma_user_bar * p.failure_cost
        + params.gamma_user * (1.0 - params.gamma_vm ** p.chain_length) * p.failure_cost
    )
    total = fail_term + survive_all * (params.alpha * c_lat + c_cong)
    return CostBreakdown(latency_cost=c_lat, congestion_cost=c_cong, expected_cost=total)


def potential(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
) -> float:
    """System potential: 2*alpha*gamma_user * sum_k rate_k * latency_k plus
    the sum over VMs of the squared expected load."""
    traffic_latency = sum(
        p.rate * latency_cost(p, profile[p.id], topology) for p in players
    )
    loads: dict[int, float] = {}
    for k, p in enumerate(players):
        for v in profile[k].distinct_vms():
            loads[v] = loads.get(v, 0.0) + params.gamma_user * p.rate
    load_square = sum(x * x for x in loads.values())
    return 2.0 * params.alpha * params.gamma_user * traffic_latency + load_square


def hamming(w: StrategyProfile, w_other: StrategyProfile) -> int:
    """Number of players whose strategies differ between two profiles."""
    if len(w) != len(w_other):
        raise ValueError("profiles cover different player sets")
    return sum(1 for a, b in zip(w.strategies, w_other.strategies) if a != b)


def weighted_average_cost(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
) -> float:
    """Mean over players of rate_i times expected cost_i."""
    total = sum(
        p.rate * expected_cost(p.id, profile, players, topology, params).expected_cost
        for p in players
    )
    return total / len(players)


def is_nash_equilibrium(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    spaces: Sequence[Sequence[Strategy]] | None = None,
):
    """Check that no player has a strictly improving unilateral deviation.

    Scans players in id order and each strategy space in canonical order,
    returning (False, Deviation) for the first improving move found, so the
    witness is deterministic. Returns (True, None) at an equilibrium.
    """
    if spaces is None:
        spaces = strategy_spaces(players, topology)
    for i in range(len(players)):
        current_cost = expected_cost(i, profile, players, topology, params).expected_cost
        for candidate in spaces[i]:
            if candidate == profile[i]:
                continue
            trial = profile.replaced(i, candidate)
            c = expected_cost(i, trial, players, topology, params).expected_cost
            if c < current_cost:
                return False, Deviation(
                    player=i,
                    strategy=candidate,
                    cost_before=current_cost,
                    cost_after=c,
                )
    return True, None
