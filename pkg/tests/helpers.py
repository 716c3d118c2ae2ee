"""Shared test utilities: random instances and independent brute-force oracles."""

import itertools

import numpy as np

from sccasim import game, model


class SeqRng:
    """Replays a fixed uniform stream through the .random() interface."""

    def __init__(self, values):
        self.values = list(values)
        self.pos = 0

    def random(self):
        v = self.values[self.pos]
        self.pos += 1
        return float(v)


def random_scenario(rng, max_players=5, max_servers=4, max_types=3,
                    gamma_lo=0.6, beta=1.0, max_chain=3):
    n_servers = int(rng.integers(2, max_servers + 1))
    n_types = int(rng.integers(1, max_types + 1))
    names = [f"T{k}" for k in range(n_types)]
    servers = []
    for _ in range(n_servers):
        k = int(rng.integers(1, n_types + 1))
        hosted = sorted(rng.choice(n_types, size=k, replace=False).tolist())
        servers.append(tuple(names[t] for t in hosted))
    hosted_any = {t for s in servers for t in s}
    for name in names:
        if name not in hosted_any:
            m = int(rng.integers(n_servers))
            servers[m] = tuple(list(servers[m]) + [name])
    n_players = int(rng.integers(2, max_players + 1))
    players = []
    for _ in range(n_players):
        length = int(rng.integers(1, min(n_types, max_chain) + 1))
        chain = rng.choice(n_types, size=length, replace=False).tolist()
        players.append(model.PlayerConfig(
            rate=float(rng.uniform(1.0, 10.0)),
            chain=tuple(names[t] for t in chain),
            ingress="r0",
            egress="r0",
            failure_cost=float(rng.uniform(500.0, 2000.0)),
        ))
    params = model.GameParams(
        alpha=float(rng.uniform(0.5, 2.0)),
        beta=beta,
        gamma_user=float(rng.uniform(gamma_lo, 1.0)),
        gamma_vm=float(rng.uniform(gamma_lo, 1.0)),
    )
    return model.ScenarioConfig(
        servers=tuple(servers),
        routers=("r0",),
        latency=model.LatencyRule(),
        players=tuple(players),
        game=params,
        seed=int(rng.integers(2**31)),
    )


def scenario_with_joint_cap(rng, cap, **kw):
    """Random scenario whose joint strategy space has between 2 and cap states."""
    while True:
        cfg = random_scenario(rng, **kw)
        topo, players, params = model.build_scenario(cfg)
        spaces = model.strategy_spaces(players, topo)
        if 2 <= model.joint_space_size(spaces) <= cap:
            return cfg, topo, players, params, spaces


def all_profiles(spaces):
    for combo in itertools.product(*spaces):
        yield model.StrategyProfile(combo)


def brute_force_optimum(spaces, players, topology, params):
    """Exhaustive potential minimizer, independent of the engine."""
    best, best_phi = None, np.inf
    for prof in all_profiles(spaces):
        phi = game.potential(prof, players, topology, params)
        if phi < best_phi:
            best, best_phi = prof, phi
    return best, best_phi


def random_profile(spaces, rng):
    return model.StrategyProfile(tuple(s[int(rng.integers(len(s)))] for s in spaces))


def spread_profile(topology, players):
    """Two players per server, whole chain on that server (p-default / p-f2)."""
    strats = []
    for p in players:
        server = p.id // 2
        vms = tuple(
            next(v for v in topology.hosts(t)
                 if topology.vm_by_id(v).server == server)
            for t in p.chain
        )
        strats.append(model.Strategy(vms))
    return model.StrategyProfile(tuple(strats))
