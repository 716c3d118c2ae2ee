"""System topology, player population, and per-player strategy spaces.

A scenario is a cluster of servers, each hosting at most one VM per network
function type, plus gateway routers and a symmetric latency table over all
nodes. Each player subscribes an ordered chain of function types and routes
its traffic ingress -> chain VMs -> egress. A strategy assigns one hosting
VM to every chain position; the strategy space is the Cartesian product of
the per-position host sets, kept in a canonical (lexicographic by VM id)
order so that indexing and tie-breaking are deterministic everywhere.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import yaml


class ConfigError(ValueError):
    """Malformed or unsatisfiable scenario configuration."""


@dataclass(frozen=True)
class VnfType:
    id: int
    name: str


@dataclass(frozen=True)
class VmInstance:
    id: int
    server: int
    vnf_type: int


@dataclass(frozen=True)
class LatencyRule:
    """Latency assignment: fixed router and intra-server values, cross-server
    values drawn i.i.d. continuous-uniform on [cross_lo, cross_hi]."""

    intra: float = 1.0
    router: float = 1.0
    cross_lo: float = 2.0
    cross_hi: float = 6.0

    def validate(self) -> None:
        if self.intra < 0 or self.router < 0 or self.cross_lo < 0 or self.cross_hi < 0:
            raise ConfigError("latency values must be non-negative")
        if self.cross_lo > self.cross_hi:
            raise ConfigError("cross_lo must not exceed cross_hi")


@dataclass(frozen=True)
class GameParams:
    """Scenario-wide game constants.

    alpha weighs latency against congestion, beta is the sampling inverse
    temperature, gamma_user / gamma_vm are survival probabilities. The
    failure probabilities are always derived, never stored.

    beta == 0 is admitted (it makes the samplers propose uniformly), even
    though every meaningful experiment uses beta > 0.
    """

    alpha: float
    beta: float
    gamma_user: float
    gamma_vm: float

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be non-negative")
        for name in ("gamma_user", "gamma_vm"):
            g = getattr(self, name)
            if not 0.0 <= g <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    @property
    def gamma_user_bar(self) -> float:
        return 1.0 - self.gamma_user

    @property
    def gamma_vm_bar(self) -> float:
        return 1.0 - self.gamma_vm


@dataclass(frozen=True)
class PlayerSpec:
    id: int
    rate: float
    chain: tuple[int, ...]
    ingress: int
    egress: int
    failure_cost: float

    @property
    def chain_length(self) -> int:
        return len(self.chain)


@dataclass(frozen=True)
class Strategy:
    """Ordered VM assignment, one VM id per chain position."""

    vms: tuple[int, ...]

    def distinct_vms(self) -> tuple[int, ...]:
        seen: list[int] = []
        for v in self.vms:
            if v not in seen:
                seen.append(v)
        return tuple(seen)


@dataclass(frozen=True)
class StrategyProfile:
    """The joint state: one strategy per player, indexed by player id."""

    strategies: tuple[Strategy, ...]

    def __getitem__(self, i: int) -> Strategy:
        return self.strategies[i]

    def __len__(self) -> int:
        return len(self.strategies)

    def replaced(self, i: int, strategy: Strategy) -> "StrategyProfile":
        strats = list(self.strategies)
        strats[i] = strategy
        return StrategyProfile(tuple(strats))


@dataclass(frozen=True)
class SystemTopology:
    """Immutable deployment: servers, VMs, routers, symmetric latency table.

    Node addressing is stable: router r is node r, VM v is node
    n_routers + v.id. `drop_vms` removes instances without renumbering, so
    latency lookups and VM ids stay valid after failures.
    """

    n_servers: int
    vnf_types: tuple[VnfType, ...]
    vms: tuple[VmInstance, ...]
    routers: tuple[str, ...]
    latency: np.ndarray
    n_vm_slots: int
    _hosts: Mapping[int, tuple[int, ...]] = field(repr=False, default=None)

    def __post_init__(self) -> None:
        self.latency.setflags(write=False)
        hosts: dict[int, list[int]] = {t.id: [] for t in self.vnf_types}
        for vm in self.vms:
            hosts[vm.vnf_type].append(vm.id)
        object.__setattr__(
            self, "_hosts", {t: tuple(sorted(ids)) for t, ids in hosts.items()}
        )

    @property
    def n_routers(self) -> int:
        return len(self.routers)

    def vm_node(self, vm_id: int) -> int:
        return self.n_routers + vm_id

    def hosts(self, vnf_type: int) -> tuple[int, ...]:
        return self._hosts.get(vnf_type, ())

    def vm_by_id(self, vm_id: int) -> VmInstance:
        for vm in self.vms:
            if vm.id == vm_id:
                return vm
        raise KeyError(f"no VM with id {vm_id}")

    def type_id(self, name: str) -> int:
        for t in self.vnf_types:
            if t.name == name:
                return t.id
        raise KeyError(f"unknown VNF type {name!r}")

    def router_id(self, name: str) -> int:
        try:
            return self.routers.index(name)
        except ValueError:
            raise KeyError(f"unknown router {name!r}") from None

    def drop_vms(self, vm_ids: Sequence[int]) -> "SystemTopology":
        gone = set(vm_ids)
        for v in gone:
            if not any(vm.id == v for vm in self.vms):
                raise KeyError(f"no VM with id {v}")
        kept = tuple(vm for vm in self.vms if vm.id not in gone)
        return SystemTopology(
            n_servers=self.n_servers,
            vnf_types=self.vnf_types,
            vms=kept,
            routers=self.routers,
            latency=self.latency,
            n_vm_slots=self.n_vm_slots,
        )


@dataclass(frozen=True)
class PlayerConfig:
    rate: float
    chain: tuple[str, ...]
    ingress: str
    egress: str
    failure_cost: float


@dataclass(frozen=True)
class RawEvent:
    """Unresolved runtime event from a scenario file; the harness maps type
    and router names to ids once the topology exists."""

    time: float
    kind: str
    data: Mapping


@dataclass(frozen=True)
class ScenarioConfig:
    servers: tuple[tuple[str, ...], ...]
    routers: tuple[str, ...]
    latency: LatencyRule
    players: tuple[PlayerConfig, ...]
    game: GameParams
    seed: int = 0
    events: tuple[RawEvent, ...] = ()

    @staticmethod
    def from_dict(d: Mapping) -> "ScenarioConfig":
        try:
            servers = tuple(tuple(str(t) for t in hosted) for hosted in d["servers"])
            routers = tuple(str(r) for r in d["routers"])
            lat = LatencyRule(**{k: float(v) for k, v in d.get("latency", {}).items()})
            players = tuple(
                PlayerConfig(
                    rate=float(p["rate"]),
                    chain=tuple(str(t) for t in p["chain"]),
                    ingress=str(p["ingress"]),
                    egress=str(p["egress"]),
                    failure_cost=float(p["failure_cost"]),
                )
                for p in d["players"]
            )
            game = GameParams(**{k: float(v) for k, v in d["game"].items()})
            events = tuple(
                RawEvent(
                    time=float(e["time"]),
                    kind=str(e["kind"]),
                    data={k: v for k, v in e.items() if k not in ("time", "kind")},
                )
                for e in d.get("events", ())
            )
            seed = int(d.get("seed", 0))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from exc
        return ScenarioConfig(servers, routers, lat, players, game, seed, events)


def load_config(path) -> ScenarioConfig:
    """Load a scenario from a YAML file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ScenarioConfig.from_dict(data)


def build_topology(config: ScenarioConfig, seed) -> SystemTopology:
    """Materialize the topology for a scenario.

    Deterministic for a fixed (config, seed): router<->VM and intra-server
    VM<->VM latencies take the configured constants, cross-server VM<->VM
    latencies are drawn i.i.d. uniform on [cross_lo, cross_hi] and
    symmetrized. `seed` may be an int, a SeedSequence, or a Generator.
    """
    config.latency.validate()

    type_names: list[str] = []
    for hosted in config.servers:
        seen_here = set()
        for name in hosted:
            if name in seen_here:
                raise ConfigError(f"server hosts type {name!r} more than once")
            seen_here.add(name)
            if name not in type_names:
                type_names.append(name)
    vnf_types = tuple(VnfType(i, n) for i, n in enumerate(type_names))
    type_ids = {t.name: t.id for t in vnf_types}

    vms: list[VmInstance] = []
    for m, hosted in enumerate(config.servers):
        for name in hosted:
            vms.append(VmInstance(id=len(vms), server=m, vnf_type=type_ids[name]))

    hosted_types = {vm.vnf_type for vm in vms}
    for p in config.players:
        if not p.chain:
            raise ConfigError("player chain must be non-empty")
        if p.rate <= 0:
            raise ConfigError("player rate must be positive")
        if p.failure_cost <= 0:
            raise ConfigError("player failure_cost must be positive")
        for name in p.chain:
            if name not in type_ids or type_ids[name] not in hosted_types:
                raise ConfigError(f"no server hosts VNF type {name!r}")
        for rname in (p.ingress, p.egress):
            if rname not in config.routers:
                raise ConfigError(f"unknown router {rname!r}")

    rng = np.random.default_rng(seed)
    n_routers = len(config.routers)
    n_vms = len(vms)
    n_nodes = n_routers + n_vms
    lat = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    rule = config.latency
    for r in range(n_routers):
        for other in range(n_nodes):
            if other != r:
                lat[r, other] = lat[other, r] = rule.router
    for a in range(n_vms):
        for b in range(a + 1, n_vms):
            if vms[a].server == vms[b].server:
                value = rule.intra
            else:
                value = rng.uniform(rule.cross_lo, rule.cross_hi)
            na, nb = n_routers + a, n_routers + b
            lat[na, nb] = lat[nb, na] = value

    return SystemTopology(
        n_servers=len(config.servers),
        vnf_types=vnf_types,
        vms=tuple(vms),
        routers=config.routers,
        latency=lat,
        n_vm_slots=n_vms,
    )


def build_players(config: ScenarioConfig, topology: SystemTopology) -> tuple[PlayerSpec, ...]:
    """Resolve player configs (type and router names) to dense-id specs."""
    players = []
    for i, p in enumerate(config.players):
        players.append(
            PlayerSpec(
                id=i,
                rate=p.rate,
                chain=tuple(topology.type_id(n) for n in p.chain),
                ingress=topology.router_id(p.ingress),
                egress=topology.router_id(p.egress),
                failure_cost=p.failure_cost,
            )
        )
    return tuple(players)


def build_scenario(config: ScenarioConfig, seed=None):
    """Convenience: (topology, players, params) with seed defaulting to config.seed."""
    topology = build_topology(config, config.seed if seed is None else seed)
    return topology, build_players(config, topology), config.game


def strategy_space(player: PlayerSpec, topology: SystemTopology) -> tuple[Strategy, ...]:
    """All valid strategies for a player, in canonical order.

    The space is the Cartesian product over chain positions of the host sets
    of each required type; with per-position host lists sorted by VM id, the
    product order is lexicographic in the VM-id tuples.
    """
    hosts_per_pos = []
    for t in player.chain:
        hosts = topology.hosts(t)
        if not hosts:
            raise ConfigError(
                f"player {player.id}: no live VM hosts type id {t}"
            )
        hosts_per_pos.append(hosts)
    return tuple(Strategy(vms) for vms in itertools.product(*hosts_per_pos))


def strategy_spaces(players: Sequence[PlayerSpec], topology: SystemTopology) -> tuple[tuple[Strategy, ...], ...]:
    return tuple(strategy_space(p, topology) for p in players)


def joint_space_size(spaces: Sequence[Sequence[Strategy]]) -> int:
    size = 1
    for s in spaces:
        size *= len(s)
    return size


def validate_strategy(player: PlayerSpec, strategy: Strategy, topology: SystemTopology) -> None:
    if len(strategy.vms) != player.chain_length:
        raise ValueError("strategy length does not match chain length")
    for j, v in enumerate(strategy.vms):
        if topology.vm_by_id(v).vnf_type != player.chain[j]:
            raise ValueError(
                f"strategy position {j} uses VM {v} of the wrong type"
            )


# Built-in fixtures.

def t1_config() -> ScenarioConfig:
    """Tiny hand-checkable instance: 2 servers x {f1, f2}, 2 unit-rate
    players with chain f1->f2 through the single router; all latencies fixed
    (intra/router 1, cross-server 2); no failures."""
    return ScenarioConfig(
        servers=(("f1", "f2"), ("f1", "f2")),
        routers=("r",),
        latency=LatencyRule(intra=1.0, router=1.0, cross_lo=2.0, cross_hi=2.0),
        players=tuple(
            PlayerConfig(rate=1.0, chain=("f1", "f2"), ingress="r", egress="r", failure_cost=1000.0)
            for _ in range(2)
        ),
        game=GameParams(alpha=1.0, beta=1.0, gamma_user=1.0, gamma_vm=1.0),
        seed=0,
    )


def _p_config(chain: tuple[str, ...]) -> ScenarioConfig:
    return ScenarioConfig(
        servers=tuple(("FW", "LB", "IDS") for _ in range(5)),
        routers=("r0",),
        latency=LatencyRule(intra=1.0, router=1.0, cross_lo=2.0, cross_hi=6.0),
        players=tuple(
            PlayerConfig(rate=5.0, chain=chain, ingress="r0", egress="r0", failure_cost=1000.0)
            for _ in range(10)
        ),
        game=GameParams(alpha=1.0, beta=0.1, gamma_user=0.9, gamma_vm=0.9),
        seed=0,
    )


def p_default_config() -> ScenarioConfig:
    """Default evaluation instance: 5 servers x {FW, LB, IDS}, 10 players at
    5 Mbps with chain FW->LB->IDS, survival probabilities 0.9."""
    return _p_config(("FW", "LB", "IDS"))


def p_f2_config() -> ScenarioConfig:
    """p-default with the shortened chain FW->LB (used by the failure sweeps)."""
    return _p_config(("FW", "LB"))


_BUILTINS = {
    "t1": t1_config,
    "p-default": p_default_config,
    "p-f2": p_f2_config,
}


def builtin_config(name: str) -> ScenarioConfig:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown built-in scenario {name!r}; choices: {sorted(_BUILTINS)}"
        ) from None


def resolve_config(spec: str) -> ScenarioConfig:
    """Treat `spec` as a file path if it exists, otherwise a built-in name."""
    import os

    if os.path.exists(spec):
        return load_config(spec)
    return builtin_config(spec)
