"""Experiment runner: scheme dispatch, simulated time, runtime events,
multi-seed aggregation, and CSV trace persistence.

Schemes advance one iteration per time slot (1 s for uscs/ma/drl, 10 ms for
mh); mcts composes once and records a single constant trace. A run is fully
determined by (config, scheme, seed): the seed spawns fixed substreams for
latency sampling, initialization, player selection, proposals, and events.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import drl as drl_mod
from . import engine, game
from . import mcts as mcts_mod
from .model import (
    GameParams,
    PlayerSpec,
    RawEvent,
    ScenarioConfig,
    Strategy,
    StrategyProfile,
    SystemTopology,
    build_players,
    build_topology,
    strategy_space,
)

SLOT_SECONDS = {"ma": 1.0, "mh": 0.01, "uscs": 1.0, "drl": 1.0, "mcts": 1.0}
SCHEMES = ("ma", "mh", "uscs", "mcts", "drl")


class UnrecoverableScenarioError(RuntimeError):
    """A failure removed the last live instance of a needed VNF type."""


@dataclass(frozen=True)
class PlayerJoin:
    time: float
    rate: float
    chain: tuple[int, ...]
    ingress: int
    egress: int
    failure_cost: float


@dataclass(frozen=True)
class VmFailure:
    time: float
    vm_id: int


Event = PlayerJoin | VmFailure


@dataclass(frozen=True)
class TraceRecord:
    run_id: int
    scheme: str
    iteration: int
    sim_time_s: float
    potential: float
    weighted_avg_cost: float
    event: str = ""


@dataclass
class ExperimentTrace:
    run_id: int
    scheme: str
    slot: float
    records: list[TraceRecord]

    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records], dtype=np.int64)

    def potentials(self) -> np.ndarray:
        return np.array([r.potential for r in self.records])

    def costs(self) -> np.ndarray:
        return np.array([r.weighted_avg_cost for r in self.records])


@dataclass
class SimulationState:
    """Object-level live state between engine segments; events act on this."""

    topology: SystemTopology
    players: tuple[PlayerSpec, ...]
    params: GameParams
    profile: StrategyProfile


def parse_events(raw_events: Sequence[RawEvent], topology: SystemTopology) -> list[Event]:
    events: list[Event] = []
    for ev in raw_events:
        if ev.kind == "player_join":
            events.append(
                PlayerJoin(
                    time=ev.time,
                    rate=float(ev.data["rate"]),
                    chain=tuple(topology.type_id(t) for t in ev.data["chain"]),
                    ingress=topology.router_id(ev.data["ingress"]),
                    egress=topology.router_id(ev.data["egress"]),
                    failure_cost=float(ev.data["failure_cost"]),
                )
            )
        elif ev.kind == "vm_failure":
            events.append(VmFailure(time=ev.time, vm_id=int(ev.data["vm"])))
        else:
            raise ValueError(f"unknown event kind {ev.kind!r}")
    return events


def apply_event(
    event: Event,
    sim: SimulationState,
    rng: np.random.Generator,
    migrate_common: bool = False,
) -> SimulationState:
    """Apply one due event and return the updated live state.

    PlayerJoin: the newcomer takes the next dense id and a uniformly random
    strategy. VmFailure: the VM leaves the live set; every occurrence of it
    in any player's strategy is replaced by a random surviving VM of the
    same type, independently per player unless migrate_common is set (then
    all displaced traffic lands on one common survivor).
    """
    if isinstance(event, PlayerJoin):
        spec = PlayerSpec(
            id=len(sim.players),
            rate=event.rate,
            chain=event.chain,
            ingress=event.ingress,
            egress=event.egress,
            failure_cost=event.failure_cost,
        )
        space = strategy_space(spec, sim.topology)
        strat = space[int(rng.integers(len(space)))]
        return SimulationState(
            topology=sim.topology,
            players=sim.players + (spec,),
            params=sim.params,
            profile=StrategyProfile(sim.profile.strategies + (strat,)),
        )

    vm = sim.topology.vm_by_id(event.vm_id)
    new_topo = sim.topology.drop_vms([event.vm_id])
    survivors = new_topo.hosts(vm.vnf_type)
    common_target: int | None = None
    if migrate_common and survivors:
        common_target = survivors[int(rng.integers(len(survivors)))]
    new_strats: list[Strategy] = []
    for p in sim.players:
        vms = list(sim.profile[p.id].vms)
        changed = False
        for j, v in enumerate(vms):
            if v == event.vm_id:
                if not survivors:
                    raise UnrecoverableScenarioError(
                        f"no surviving VM hosts type id {vm.vnf_type}"
                    )
                if common_target is not None:
                    vms[j] = common_target
                else:
                    vms[j] = survivors[int(rng.integers(len(survivors)))]
                changed = True
        new_strats.append(Strategy(tuple(vms)) if changed else sim.profile[p.id])
    for p in sim.players:
        for t in p.chain:
            if not new_topo.hosts(t):
                raise UnrecoverableScenarioError(
                    f"no surviving VM hosts type id {t} needed by player {p.id}"
                )
    return SimulationState(
        topology=new_topo,
        players=sim.players,
        params=sim.params,
        profile=StrategyProfile(tuple(new_strats)),
    )


def _event_iteration(time_s: float, slot: float) -> int:
    # due before the first iteration whose slot starts at or after the
    # event time; round() guards against slot-division noise
    return int(math.ceil(round(time_s / slot, 9))) + 1


def run_experiment(
    config: ScenarioConfig,
    scheme: str,
    seed,
    duration_s: float | None = None,
    n_iters: int | None = None,
    *,
    run_id: int = 0,
    beta: float | None = None,
    params: GameParams | None = None,
    trace_every: int = 1,
    mcts_budget: int = 500,
    mcts_normalized_reward: bool = False,
    net: drl_mod.PolicyNet | None = None,
    events: Sequence[Event] | None = None,
    migrate_common: bool = False,
    backend: str | None = None,
) -> ExperimentTrace:
    """Run one seeded experiment and return its trace.

    Exactly one of duration_s / n_iters selects the length; the initial
    uniformly random profile is always recorded as iteration 0. Events are
    applied before the iteration whose slot they fall into, and the first
    record after an event carries its tag.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choices: {SCHEMES}")
    slot = SLOT_SECONDS[scheme]
    if (duration_s is None) == (n_iters is None):
        raise ValueError("pass exactly one of duration_s or n_iters")
    if n_iters is None:
        n_iters = int(round(duration_s / slot))
    if n_iters < 0:
        raise ValueError("run length must be non-negative")

    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    lat_ss, init_ss, sel_ss, prop_ss, ev_ss = root.spawn(5)
    topology = build_topology(config, lat_ss)
    players = build_players(config, topology)
    run_params = params if params is not None else config.game
    if beta is not None:
        run_params = replace(run_params, beta=beta)

    if events is None:
        events = parse_events(config.events, topology)
    events = sorted(events, key=lambda e: e.time)
    if events and scheme in ("mcts", "drl"):
        raise ValueError(f"scheme {scheme!r} cannot adapt to runtime events")

    if scheme == "mcts":
        rng = np.random.default_rng(prop_ss)
        profile = mcts_mod.mcts_compose(
            topology, players, run_params, mcts_budget, rng,
            normalized_reward=mcts_normalized_reward, backend=backend,
        )
        phi = game.potential(profile, players, topology, run_params)
        cbar = game.weighted_average_cost(profile, players, topology, run_params)
        rec = TraceRecord(run_id, scheme, 0, 0.0, phi, cbar)
        return ExperimentTrace(run_id, scheme, slot, [rec])

    if scheme == "drl":
        if net is None:
            raise ValueError("drl runs need a trained policy net")
        return _run_drl(
            config, net, topology, players, run_params, n_iters, slot,
            init_ss, run_id, trace_every,
        )

    return _run_sampling(
        scheme, topology, players, run_params, n_iters, slot,
        init_ss, sel_ss, prop_ss, ev_ss, events, run_id, trace_every,
        migrate_common, backend,
    )


def _run_drl(config, net, topology, players, params, n_iters, slot,
             init_ss, run_id, trace_every) -> ExperimentTrace:
    codec = drl_mod.StateCodec(topology, players)
    init_rng = np.random.default_rng(init_ss)
    profile = StrategyProfile(
        tuple(
            codec.spaces[i][int(init_rng.integers(len(codec.spaces[i])))]
            for i in range(len(players))
        )
    )
    records = [_record(run_id, "drl", 0, slot, profile, players, topology, params)]
    for it in range(1, n_iters + 1):
        probs = drl_mod.policy_forward(net, codec.encode(profile))
        i, strat = codec.action_decode(int(np.argmax(probs)))
        profile = profile.replaced(i, strat)
        if it % trace_every == 0 or it == n_iters:
            records.append(_record(run_id, "drl", it, slot, profile, players, topology, params))
    return ExperimentTrace(run_id, "drl", slot, records)


def _record(run_id, scheme, iteration, slot, profile, players, topology, params, tag="") -> TraceRecord:
    return TraceRecord(
        run_id=run_id,
        scheme=scheme,
        iteration=iteration,
        sim_time_s=iteration * slot,
        potential=game.potential(profile, players, topology, params),
        weighted_avg_cost=game.weighted_average_cost(profile, players, topology, params),
        event=tag,
    )


def _run_sampling(scheme, topology, players, params, n_iters, slot,
                  init_ss, sel_ss, prop_ss, ev_ss, events, run_id,
                  trace_every, migrate_common, backend) -> ExperimentTrace:
    init_rng = np.random.default_rng(init_ss)
    sel_rng = np.random.default_rng(sel_ss)
    prop_rng = np.random.default_rng(prop_ss)
    ev_rng = np.random.default_rng(ev_ss)

    inst = engine.compile_instance(topology, players, params)
    state = engine.random_state(inst, init_rng)
    loads = engine.loads_for(inst, state, backend)

    records: list[TraceRecord] = []
    phi, cbar = engine.metrics_of_state(inst, state, backend)
    records.append(TraceRecord(run_id, scheme, 0, 0.0, phi, cbar))

    due = [(e, _event_iteration(e.time, slot)) for e in events]
    due = [(e, k) for e, k in due if k <= n_iters]
    due.sort(key=lambda ek: ek[1])

    def emit(seg: engine.SegmentResult, tag_first: str = ""):
        for j in range(len(seg.iterations)):
            records.append(
                TraceRecord(
                    run_id, scheme, int(seg.iterations[j]),
                    float(seg.iterations[j]) * slot,
                    float(seg.potential[j]), float(seg.cost[j]),
                    tag_first if j == 0 else "",
                )
            )

    cur = 0
    pending = list(due)
    while cur < n_iters:
        next_k = pending[0][1] if pending else None
        end = n_iters if next_k is None else min(next_k - 1, n_iters)
        if end > cur:
            seg = engine.run_segment(
                inst, state, loads, scheme, params.beta, end - cur,
                step0=cur, rec_every=trace_every,
                rng_sel=sel_rng, rng_prop=prop_rng, backend=backend,
            )
            emit(seg)
            cur = end
        if pending and pending[0][1] == cur + 1:
            tags = []
            sim = SimulationState(topology, players, params, engine.profile_from_state(inst, state))
            while pending and pending[0][1] == cur + 1:
                ev, _ = pending.pop(0)
                sim = apply_event(ev, sim, ev_rng, migrate_common)
                if isinstance(ev, PlayerJoin):
                    tags.append(f"player_join:{len(sim.players) - 1}")
                else:
                    tags.append(f"vm_failure:{ev.vm_id}")
            topology, players = sim.topology, sim.players
            inst = engine.compile_instance(topology, players, params)
            state = engine.state_from_profile(inst, sim.profile)
            loads = engine.loads_for(inst, state, backend)
            # the first post-event iteration is always recorded, tag attached
            seg = engine.run_segment(
                inst, state, loads, scheme, params.beta, 1,
                step0=cur, rec_every=1,
                rng_sel=sel_rng, rng_prop=prop_rng, backend=backend,
            )
            emit(seg, tag_first="+".join(tags))
            cur += 1
    return ExperimentTrace(run_id, scheme, slot, records)


def run_many(
    config: ScenarioConfig,
    scheme: str,
    base_seed,
    n_runs: int,
    **kwargs,
) -> list[ExperimentTrace]:
    """Independent runs with per-run substreams spawned from one base seed."""
    root = base_seed if isinstance(base_seed, np.random.SeedSequence) else np.random.SeedSequence(base_seed)
    children = root.spawn(n_runs)
    return [
        run_experiment(config, scheme, children[k], run_id=k, **kwargs)
        for k in range(n_runs)
    ]


@dataclass
class Aggregate:
    scheme: str
    n_runs: int
    iterations: np.ndarray
    sim_time_s: np.ndarray
    mean_potential: np.ndarray
    std_potential: np.ndarray
    mean_cost: np.ndarray
    std_cost: np.ndarray
    converged_potential: float
    converged_cost: float


def converged_value(series: np.ndarray) -> float:
    """Mean over the final tenth of a series (at least one point)."""
    k = max(1, math.ceil(0.1 * len(series)))
    return float(np.asarray(series)[-k:].mean())


def aggregate(traces: Sequence[ExperimentTrace]) -> Aggregate:
    """Pointwise mean/std over runs aligned on the iteration grid."""
    if not traces:
        raise ValueError("nothing to aggregate")
    base = traces[0].iterations()
    for t in traces[1:]:
        if len(t.iterations()) != len(base) or (t.iterations() != base).any():
            raise ValueError("traces are not aligned on a common iteration grid")
    pot = np.stack([t.potentials() for t in traces])
    cost = np.stack([t.costs() for t in traces])
    mean_pot = pot.mean(axis=0)
    mean_cost = cost.mean(axis=0)
    return Aggregate(
        scheme=traces[0].scheme,
        n_runs=len(traces),
        iterations=base,
        sim_time_s=base * traces[0].slot,
        mean_potential=mean_pot,
        std_potential=pot.std(axis=0),
        mean_cost=mean_cost,
        std_cost=cost.std(axis=0),
        converged_potential=converged_value(mean_pot),
        converged_cost=converged_value(mean_cost),
    )


@dataclass
class SweepResult:
    user_bars: tuple[float, ...]
    vm_bars: tuple[float, ...]
    costs: np.ndarray  # [len(user_bars), len(vm_bars)]
    monotone: bool
    violations: list[str]


def sweep_failures(
    config: ScenarioConfig,
    user_bars: Sequence[float],
    vm_bars: Sequence[float],
    *,
    scheme: str = "mh",
    seed=0,
    n_runs: int = 100,
    duration_s: float = 100.0,
    trace_every: int = 10,
    backend: str | None = None,
) -> SweepResult:
    """Converged weighted average cost per (user failure, VM failure) cell,
    with a monotonicity report along both axes."""
    for g in list(user_bars) + list(vm_bars):
        if not 0.0 <= g <= 1.0:
            raise ValueError("failure probabilities must lie in [0, 1]")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    cells = root.spawn(len(user_bars) * len(vm_bars))
    costs = np.empty((len(user_bars), len(vm_bars)))
    for a, ub in enumerate(user_bars):
        for b, vb in enumerate(vm_bars):
            params = replace(config.game, gamma_user=1.0 - ub, gamma_vm=1.0 - vb)
            traces = run_many(
                config, scheme, cells[a * len(vm_bars) + b], n_runs,
                duration_s=duration_s, params=params,
                trace_every=trace_every, backend=backend,
            )
            costs[a, b] = aggregate(traces).converged_cost
    violations = []
    for a in range(len(user_bars)):
        for b in range(1, len(vm_bars)):
            if costs[a, b] < costs[a, b - 1]:
                violations.append(f"row {user_bars[a]}: cell {vm_bars[b]} decreased")
    for b in range(len(vm_bars)):
        for a in range(1, len(user_bars)):
            if costs[a, b] < costs[a - 1, b]:
                violations.append(f"column {vm_bars[b]}: cell {user_bars[a]} decreased")
    return SweepResult(
        user_bars=tuple(user_bars),
        vm_bars=tuple(vm_bars),
        costs=costs,
        monotone=not violations,
        violations=violations,
    )


# CSV persistence: floats carry 6 significant digits.

TRACE_HEADER = ["run_id", "scheme", "iteration", "sim_time_s", "potential",
                "weighted_avg_cost", "event"]


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_trace_csv(trace: ExperimentTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in trace.records:
            w.writerow([
                r.run_id, r.scheme, r.iteration, _fmt(r.sim_time_s),
                _fmt(r.potential), _fmt(r.weighted_avg_cost), r.event,
            ])


def write_aggregate_csv(agg: Aggregate, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "sim_time_s", "mean_potential", "std_potential",
                    "mean_weighted_avg_cost", "std_weighted_avg_cost"])
        for j in range(len(agg.iterations)):
            w.writerow([
                int(agg.iterations[j]), _fmt(float(agg.sim_time_s[j])),
                _fmt(float(agg.mean_potential[j])), _fmt(float(agg.std_potential[j])),
                _fmt(float(agg.mean_cost[j])), _fmt(float(agg.std_cost[j])),
            ])


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_failure\\vm_failure"] + [_fmt(v) for v in result.vm_bars])
        for a, ub in enumerate(result.user_bars):
            w.writerow([_fmt(ub)] + [_fmt(c) for c in result.costs[a]])


def default_out_dir() -> str:
    return os.environ.get("SCCASIM_OUT_DIR", "out")
