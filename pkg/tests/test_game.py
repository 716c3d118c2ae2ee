import math

import numpy as np
import pytest

from helpers import (
    all_profiles,
    brute_force_optimum,
    random_profile,
    scenario_with_joint_cap,
    spread_profile,
)
from sccasim import game, model

REL = 1e-9


@pytest.fixture(scope="module")
def t1_profiles(t1_spaces):
    s = t1_spaces[0]
    return {
        "disjoint": model.StrategyProfile((s[0], s[3])),  # p0 on m1, p1 on m2
        "shared_m1": model.StrategyProfile((s[0], s[0])),
        "p1_m1_p2_m2": model.StrategyProfile((s[0], s[3])),
    }


def test_latency_cost_t1(t1, t1_spaces):
    _, topo, players, _ = t1
    s = t1_spaces[0]
    assert game.latency_cost(players[0], s[0], topo) == 3.0  # 1+1+1
    assert game.latency_cost(players[0], s[1], topo) == 4.0  # 1+2+1


def test_latency_cost_single_vnf_chain():
    cfg = model.ScenarioConfig(
        servers=(("f1",),),
        routers=("r",),
        latency=model.LatencyRule(cross_lo=2, cross_hi=2),
        players=(model.PlayerConfig(1.0, ("f1",), "r", "r", 10.0),),
        game=model.GameParams(1.0, 1.0, 1.0, 1.0),
    )
    topo, players, _ = model.build_scenario(cfg)
    strat = model.strategy_space(players[0], topo)[0]
    assert game.latency_cost(players[0], strat, topo) == 2.0


def test_sharers(t1_profiles):
    disjoint = t1_profiles["disjoint"]
    shared = t1_profiles["shared_m1"]
    assert game.sharers(0, disjoint) == {0}
    assert game.sharers(2, disjoint) == {1}
    assert game.sharers(0, shared) == {0, 1}
    assert game.sharers(2, shared) == frozenset()


def test_workload(t1, t1_profiles):
    _, topo, players, params = t1
    shared = t1_profiles["shared_m1"]
    assert game.workload(0, 0, shared, players, params) == 2.0  # 1 + 1*1
    assert game.workload(0, 0, t1_profiles["disjoint"], players, params) == 1.0
    with pytest.raises(ValueError, match="not part of"):
        game.workload(0, 2, shared, players, params)


def test_workload_discounted_rates():
    cfg = model.ScenarioConfig(
        servers=(("f1",), ("f1",)),
        routers=("r",),
        latency=model.LatencyRule(cross_lo=2, cross_hi=2),
        players=tuple(
            model.PlayerConfig(5.0, ("f1",), "r", "r", 1000.0) for _ in range(2)
        ),
        game=model.GameParams(alpha=1.0, beta=1.0, gamma_user=0.9, gamma_vm=1.0),
    )
    topo, players, params = model.build_scenario(cfg)
    s = model.strategy_space(players[0], topo)
    both = model.StrategyProfile((s[0], s[0]))
    assert game.workload(0, 0, both, players, params) == pytest.approx(9.5, rel=REL)


def test_congestion_cost(t1, t1_profiles, pdefault):
    _, topo, players, params = t1
    assert game.congestion_cost(0, t1_profiles["shared_m1"], players, params) == 4.0
    assert game.congestion_cost(0, t1_profiles["disjoint"], players, params) == 2.0
    _, topo_p, players_p, params_p = pdefault
    spread = spread_profile(topo_p, players_p)
    for i in range(10):
        assert game.congestion_cost(i, spread, players_p, params_p) == pytest.approx(
            28.5, rel=REL  # 3 VMs x (5 + 0.9*5)
        )


def test_expected_cost_always_fails():
    cfg = model.ScenarioConfig(
        servers=(("f1",),),
        routers=("r",),
        latency=model.LatencyRule(cross_lo=2, cross_hi=2),
        players=(model.PlayerConfig(1.0, ("f1",), "r", "r", 777.0),),
        game=model.GameParams(alpha=1.0, beta=1.0, gamma_user=0.0, gamma_vm=0.5),
    )
    topo, players, params = model.build_scenario(cfg)
    prof = model.StrategyProfile((model.strategy_space(players[0], topo)[0],))
    assert game.expected_cost(0, prof, players, topo, params).expected_cost == 777.0


def test_expected_cost_t1(t1, t1_profiles):
    _, topo, players, params = t1
    cb = game.expected_cost(0, t1_profiles["shared_m1"], players, topo, params)
    assert (cb.latency_cost, cb.congestion_cost, cb.expected_cost) == (3.0, 4.0, 7.0)


def test_expected_cost_with_failures(t1, t1_profiles):
    # survival 0.9 each, F=2, failure cost 1000, inner cost 7
    import dataclasses

    _, topo, players, params = t1
    p = dataclasses.replace(params, gamma_user=0.9, gamma_vm=0.9)
    cb = game.expected_cost(0, t1_profiles["shared_m1"], players, topo, p)
    assert cb.expected_cost == pytest.approx(100 + 171 + 0.729 * 7, rel=REL)
    assert cb.expected_cost == pytest.approx(276.103, rel=REL)


def test_potential_t1(t1, t1_profiles):
    _, topo, players, params = t1
    assert game.potential(t1_profiles["disjoint"], players, topo, params) == 16.0
    assert game.potential(t1_profiles["shared_m1"], players, topo, params) == 20.0


def test_potential_pdefault_spread(pdefault):
    _, topo, players, params = pdefault
    spread = spread_profile(topo, players)
    phi = game.potential(spread, players, topo, params)
    assert phi == pytest.approx(2 * 0.9 * (10 * 5 * 4) + 15 * 9.0**2, rel=REL)
    assert phi == pytest.approx(1575.0, rel=REL)


def test_weighted_average_cost(t1, t1_profiles, pdefault):
    _, topo, players, params = t1
    assert game.weighted_average_cost(
        t1_profiles["shared_m1"], players, topo, params
    ) == pytest.approx(7.0, rel=REL)
    _, topo_p, players_p, params_p = pdefault
    spread = spread_profile(topo_p, players_p)
    got = game.weighted_average_cost(spread, players_p, topo_p, params_p)
    # 5 * (100 + 243.9 + 0.6561*32.5), the "about 1826" operating point
    assert got == pytest.approx(1826.11625, rel=REL)


def test_weighted_average_cost_single_player():
    cfg = model.ScenarioConfig(
        servers=(("f1",),),
        routers=("r",),
        latency=model.LatencyRule(cross_lo=2, cross_hi=2),
        players=(model.PlayerConfig(3.0, ("f1",), "r", "r", 10.0),),
        game=model.GameParams(1.0, 1.0, 1.0, 1.0),
    )
    topo, players, params = model.build_scenario(cfg)
    prof = model.StrategyProfile((model.strategy_space(players[0], topo)[0],))
    c = game.expected_cost(0, prof, players, topo, params).expected_cost
    assert game.weighted_average_cost(prof, players, topo, params) == 3.0 * c


def test_hamming(t1_profiles, t1_spaces):
    d = t1_profiles["disjoint"]
    s = t1_spaces[0]
    assert game.hamming(d, d) == 0
    assert game.hamming(d, d.replaced(0, s[1])) == 1
    assert game.hamming(d, model.StrategyProfile((s[1], s[2]))) == 2
    with pytest.raises(ValueError):
        game.hamming(d, model.StrategyProfile((s[0],)))


def test_hamming_is_a_metric():
    rng = np.random.default_rng(4)
    _, topo, players, params, spaces = scenario_with_joint_cap(rng, 4000)
    for _ in range(50):
        a, b, c = (random_profile(spaces, rng) for _ in range(3))
        assert game.hamming(a, b) >= 0
        assert (game.hamming(a, b) == 0) == (a == b)
        assert game.hamming(a, b) == game.hamming(b, a)
        assert game.hamming(a, c) <= game.hamming(a, b) + game.hamming(b, c)


def test_nash_equilibrium_t1(t1, t1_spaces, t1_profiles):
    _, topo, players, params = t1
    ok, witness = game.is_nash_equilibrium(
        t1_profiles["disjoint"], players, topo, params, t1_spaces
    )
    assert ok and witness is None
    ok, witness = game.is_nash_equilibrium(
        t1_profiles["shared_m1"], players, topo, params, t1_spaces
    )
    assert not ok
    assert witness.player == 0
    assert witness.strategy == t1_spaces[0][3]  # full move to m2
    assert (witness.cost_before, witness.cost_after) == (7.0, 5.0)


def test_single_player_argmin_is_ne():
    rng = np.random.default_rng(9)
    cfg = model.ScenarioConfig(
        servers=(("f1", "f2"), ("f1",), ("f2",)),
        routers=("r",),
        latency=model.LatencyRule(),
        players=(model.PlayerConfig(2.0, ("f1", "f2"), "r", "r", 100.0),),
        game=model.GameParams(1.0, 1.0, 0.9, 0.9),
        seed=int(rng.integers(1 << 30)),
    )
    topo, players, params = model.build_scenario(cfg)
    spaces = model.strategy_spaces(players, topo)
    best = min(
        spaces[0],
        key=lambda s: game.expected_cost(
            0, model.StrategyProfile((s,)), players, topo, params
        ).expected_cost,
    )
    ok, _ = game.is_nash_equilibrium(
        model.StrategyProfile((best,)), players, topo, params, spaces
    )
    assert ok


def test_potential_identity_random_instances():
    # unilateral potential change == player weight times cost change
    rng = np.random.default_rng(12)
    for _ in range(5):
        _, topo, players, params, spaces = scenario_with_joint_cap(rng, 10_000)
        for _ in range(40):
            prof = random_profile(spaces, rng)
            i = int(rng.integers(len(players)))
            alt = spaces[i][int(rng.integers(len(spaces[i])))]
            trial = prof.replaced(i, alt)
            lhs = game.potential(prof, players, topo, params) - game.potential(
                trial, players, topo, params
            )
            dc = (
                game.expected_cost(i, prof, players, topo, params).expected_cost
                - game.expected_cost(i, trial, players, topo, params).expected_cost
            )
            rhs = game.game_weight(players[i], params) * dc
            assert abs(lhs - rhs) <= REL * max(1.0, abs(lhs), abs(rhs))


def test_optimum_is_equilibrium_small_instances():
    rng = np.random.default_rng(21)
    for _ in range(5):
        _, topo, players, params, spaces = scenario_with_joint_cap(
            rng, 2000, max_players=3
        )
        best, _ = brute_force_optimum(spaces, players, topo, params)
        ok, witness = game.is_nash_equilibrium(best, players, topo, params, spaces)
        assert ok, witness


def test_expected_cost_bounds():
    rng = np.random.default_rng(31)
    for _ in range(5):
        _, topo, players, params, spaces = scenario_with_joint_cap(rng, 2000)
        for _ in range(20):
            prof = random_profile(spaces, rng)
            for i, p in enumerate(players):
                cb = game.expected_cost(i, prof, players, topo, params)
                assert cb.latency_cost >= 0 and cb.congestion_cost >= 0
                inner_min = min(
                    params.alpha * game.latency_cost(p, s, topo) + p.rate
                    for s in spaces[i]
                )
                surv = params.gamma_user * params.gamma_vm ** p.chain_length
                assert cb.expected_cost >= surv * inner_min - 1e-12
                inner = params.alpha * cb.latency_cost + cb.congestion_cost
                if p.failure_cost >= inner:
                    assert cb.expected_cost <= p.failure_cost + 1e-12
