"""Single-step kernels of the iterative schemes, in object form.

These are the readable reference implementations used by the tests and by
anything operating on `StrategyProfile` objects directly; long runs go
through `sccasim.engine`, which executes the same update rules over flat
arrays. Draw discipline is fixed so the two paths can be replayed against
each other: an mh step consumes exactly three uniforms (selection,
proposal, acceptance -- the acceptance draw is consumed even when the move
is downhill), an ma step exactly two (selection, strategy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

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


@dataclass(frozen=True)
class UniformDraw:
    """Pick the updating player uniformly; selection takes no simulated time."""


@dataclass(frozen=True)
class ExponentialRace:
    """Every player runs an exponential countdown of the given rate; the
    earliest clock wins. Selection is still uniform, but the elapsed time
    (the minimum of the clocks) is reported."""

    rate: float

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError("race rate must be positive")


SelectionMode = Union[UniformDraw, ExponentialRace]


@dataclass(frozen=True)
class StepOutcome:
    chosen_player: int
    old_strategy: Strategy
    new_strategy: Strategy
    accepted: bool | None
    potential_after: float


def select_player(
    players: Sequence[int], mode: SelectionMode, rng: np.random.Generator
) -> tuple[int, float]:
    """Select one active player id; returns (player, elapsed selection time).

    Every active player is selected with probability 1/N under either mode.
    """
    n = len(players)
    if n == 0:
        raise ValueError("no active players to select from")
    if isinstance(mode, ExponentialRace):
        times = rng.exponential(scale=1.0 / mode.rate, size=n)
        k = int(np.argmin(times))
        return players[k], float(times[k])
    u = rng.random()
    k = min(int(u * n), n - 1)
    return players[k], 0.0


def ma_transition_distribution(
    i: int,
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    space: Sequence[Strategy] | None = None,
) -> np.ndarray:
    """Full-resample distribution over player i's strategy space:
    softmax of -beta * weight_i * cost, shifted by the minimum cost so the
    exponentials cannot overflow or all underflow.
    """
    if space is None:
        space = strategy_spaces(players, topology)[i]
    betaw = 0.0 if params.beta == 0.0 else params.beta * game.game_weight(players[i], params)
    costs = [
        game.expected_cost(i, profile.replaced(i, s), players, topology, params).expected_cost
        for s in space
    ]
    cmin = min(costs)
    weights = np.empty(len(costs))
    total = 0.0  # left-to-right, matching the array kernels bit for bit
    for k, c in enumerate(costs):
        d = c - cmin
        e = 1.0 if d == 0.0 else math.exp(-betaw * d)
        weights[k] = e
        total += e
    return weights / total


def _sample_cdf(probs: np.ndarray, u: float) -> int:
    # explicit left-to-right walk; mirrors the array kernels exactly
    cum = 0.0
    for k in range(len(probs)):
        cum += probs[k]
        if u < cum:
            return k
    return len(probs) - 1


def ma_step(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    mode: SelectionMode,
    rng: np.random.Generator,
    spaces: Sequence[Sequence[Strategy]] | None = None,
) -> tuple[StrategyProfile, StepOutcome]:
    """One full-resample iteration; self-transitions are legal outcomes."""
    if spaces is None:
        spaces = strategy_spaces(players, topology)
    i, _ = select_player(range(len(players)), mode, rng)
    probs = ma_transition_distribution(i, profile, players, topology, params, spaces[i])
    chosen = _sample_cdf(probs, rng.random())
    new = spaces[i][chosen]
    out = profile.replaced(i, new)
    return out, StepOutcome(
        chosen_player=i,
        old_strategy=profile[i],
        new_strategy=new,
        accepted=None,
        potential_after=game.potential(out, players, topology, params),
    )


def mh_acceptance(
    i: int,
    profile: StrategyProfile,
    candidate: Strategy,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
) -> float:
    """Acceptance probability for player i proposing `candidate`:
    min(exp(-beta * weight_i * cost increase), 1), from local costs only."""
    c_cur = game.expected_cost(i, profile, players, topology, params).expected_cost
    c_new = game.expected_cost(
        i, profile.replaced(i, candidate), players, topology, params
    ).expected_cost
    d = c_new - c_cur
    if d <= 0.0:
        return 1.0
    betaw = 0.0 if params.beta == 0.0 else params.beta * game.game_weight(players[i], params)
    return math.exp(-betaw * d)


def mh_step(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    mode: SelectionMode,
    rng: np.random.Generator,
    spaces: Sequence[Sequence[Strategy]] | None = None,
) -> tuple[StrategyProfile, StepOutcome]:
    """One propose/accept iteration: uniform proposal over the chosen
    player's space (self-proposals allowed), kept on acceptance."""
    if spaces is None:
        spaces = strategy_spaces(players, topology)
    i, _ = select_player(range(len(players)), mode, rng)
    space = spaces[i]
    u_prop = rng.random()
    prop = min(int(u_prop * len(space)), len(space) - 1)
    candidate = space[prop]
    u_acc = rng.random()
    if candidate == profile[i]:
        accepted = True
    else:
        accepted = u_acc < mh_acceptance(i, profile, candidate, players, topology, params)
    out = profile.replaced(i, candidate) if accepted else profile
    return out, StepOutcome(
        chosen_player=i,
        old_strategy=profile[i],
        new_strategy=out[i],
        accepted=accepted,
        potential_after=game.potential(out, players, topology, params),
    )


def uscs_best_response(
    i: int,
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    space: Sequence[Strategy] | None = None,
) -> Strategy:
    """Exact cost minimizer for player i; ties go to the lowest index."""
    if space is None:
        space = strategy_spaces(players, topology)[i]
    best = None
    cbest = math.inf
    for s in space:
        c = game.expected_cost(i, profile.replaced(i, s), players, topology, params).expected_cost
        if c < cbest:
            cbest = c
            best = s
    return best


def uscs_step(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    cursor: int,
    spaces: Sequence[Sequence[Strategy]] | None = None,
) -> tuple[StrategyProfile, StepOutcome]:
    """One round-robin best-response move; `cursor` is the global iteration
    counter, so player (cursor mod N) acts."""
    if spaces is None:
        spaces = strategy_spaces(players, topology)
    i = cursor % len(players)
    new = uscs_best_response(i, profile, players, topology, params, spaces[i])
    changed = new != profile[i]
    out = profile.replaced(i, new) if changed else profile
    return out, StepOutcome(
        chosen_player=i,
        old_strategy=profile[i],
        new_strategy=new,
        accepted=changed,
        potential_after=game.potential(out, players, topology, params),
    )


def uscs_run(
    profile: StrategyProfile,
    players: Sequence[PlayerSpec],
    topology: SystemTopology,
    params: GameParams,
    spaces: Sequence[Sequence[Strategy]] | None = None,
    max_sweeps: int = 1000,
) -> tuple[StrategyProfile, int]:
    """Best-response sweeps until a full pass changes nothing.

    Terminates on every finite instance (the potential strictly decreases
    with every actual change); raises if max_sweeps is exhausted.
    """
    if spaces is None:
        spaces = strategy_spaces(players, topology)
    n = len(players)
    cursor = 0
    for sweep in range(max_sweeps):
        changed_any = False
        for _ in range(n):
            profile, out = uscs_step(profile, players, topology, params, cursor, spaces)
            cursor += 1
            if out.accepted:
                changed_any = True
        if not changed_any:
            return profile, sweep + 1
    raise RuntimeError(f"best response did not settle within {max_sweeps} sweeps")
