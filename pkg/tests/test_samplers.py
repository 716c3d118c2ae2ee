import dataclasses
import math

import numpy as np
import pytest

from helpers import all_profiles, random_profile, scenario_with_joint_cap
from sccasim import game, model, samplers


def test_select_player_single():
    pid, elapsed = samplers.select_player([7], samplers.UniformDraw(), np.random.default_rng(0))
    assert pid == 7 and elapsed == 0.0


def test_select_player_empty():
    with pytest.raises(ValueError):
        samplers.select_player([], samplers.UniformDraw(), np.random.default_rng(0))


def test_select_player_uniform_frequencies():
    rng = np.random.default_rng(5)
    counts = {0: 0, 1: 0}
    n = 1_000_000
    for _ in range(n):
        pid, _ = samplers.select_player((0, 1), samplers.UniformDraw(), rng)
        counts[pid] += 1
    assert abs(counts[0] / n - 0.5) <= 0.01
    assert abs(counts[1] / n - 0.5) <= 0.01


def test_exponential_race_elapsed_mean():
    rng = np.random.default_rng(6)
    mode = samplers.ExponentialRace(rate=2.0)
    n_players = 4
    n = 1_000_000
    total = 0.0
    for _ in range(n):
        _, dt = samplers.select_player(range(n_players), mode, rng)
        total += dt
    expected = 1.0 / (n_players * mode.rate)  # min of N exponentials
    assert abs(total / n - expected) <= 0.02 * expected
    with pytest.raises(ValueError):
        samplers.ExponentialRace(rate=0.0)


def test_ma_distribution_beta_zero(t1, t1_spaces):
    _, topo, players, params = t1
    p0 = dataclasses.replace(params, beta=0.0)
    prof = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][0]))
    dist = samplers.ma_transition_distribution(0, prof, players, topo, p0, t1_spaces[0])
    assert np.allclose(dist, 0.25)


def test_ma_distribution_beta_large(t1, t1_spaces):
    _, topo, players, params = t1
    hot = dataclasses.replace(params, beta=1e6)
    prof = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][0]))
    dist = samplers.ma_transition_distribution(0, prof, players, topo, hot, t1_spaces[0])
    # best response for p0 given p1 on m1 is the full move to m2
    assert dist[3] >= 1 - 1e-6


def test_ma_distribution_hand_values(t1, t1_spaces):
    _, topo, players, params = t1
    # p1 parked on m2; p0's costs over its space are (5, 7, 7, 7), weight 2
    prof = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][3]))
    dist = samplers.ma_transition_distribution(0, prof, players, topo, params, t1_spaces[0])
    z = 1.0 + 3.0 * math.exp(-4.0)
    assert dist[0] == pytest.approx(1.0 / z, rel=1e-12)
    assert np.allclose(dist[1:], math.exp(-4.0) / z, rtol=1e-12)
    assert dist[0] == pytest.approx(0.9479, abs=5e-5)
    assert abs(dist.sum() - 1.0) <= 1e-12


def test_ma_distribution_matches_global_softmax():
    # local-cost form == softmax of -beta * potential over the player's
    # one-step neighborhood
    rng = np.random.default_rng(17)
    for _ in range(4):
        _, topo, players, params, spaces = scenario_with_joint_cap(rng, 4000)
        for _ in range(10):
            prof = random_profile(spaces, rng)
            i = int(rng.integers(len(players)))
            local = samplers.ma_transition_distribution(
                i, prof, players, topo, params, spaces[i]
            )
            phis = np.array([
                game.potential(prof.replaced(i, s), players, topo, params)
                for s in spaces[i]
            ])
            z = -params.beta * phis
            z -= z.max()
            glob = np.exp(z)
            glob /= glob.sum()
            assert np.abs(local - glob).max() <= 1e-10


def test_ma_step_singleton_space():
    cfg = model.ScenarioConfig(
        servers=(("f1",),),
        routers=("r",),
        latency=model.LatencyRule(cross_lo=2, cross_hi=2),
        players=(model.PlayerConfig(1.0, ("f1",), "r", "r", 10.0),),
        game=model.GameParams(1.0, 1.0, 1.0, 1.0),
    )
    topo, players, params = model.build_scenario(cfg)
    spaces = model.strategy_spaces(players, topo)
    prof = model.StrategyProfile((spaces[0][0],))
    out, step = samplers.ma_step(
        prof, players, topo, params, samplers.UniformDraw(), np.random.default_rng(0), spaces
    )
    assert out == prof and step.new_strategy == step.old_strategy


def test_ma_step_stay_probability(t1, t1_spaces):
    _, topo, players, params = t1
    prof = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][3]))
    rng = np.random.default_rng(8)
    stays = chosen0 = 0
    for _ in range(20_000):
        _, step = samplers.ma_step(
            prof, players, topo, params, samplers.UniformDraw(), rng, t1_spaces
        )
        if step.chosen_player == 0:
            chosen0 += 1
            stays += step.new_strategy == prof[0]
    assert stays / chosen0 == pytest.approx(0.9479, abs=0.01)


def test_mh_acceptance(t1, t1_spaces):
    _, topo, players, params = t1
    shared = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][0]))
    # downhill or flat: always accepted
    assert samplers.mh_acceptance(0, shared, t1_spaces[0][3], players, topo, params) == 1.0
    # uphill from cost 5 to cost 7 at weight 2: exp(-4)
    best = model.StrategyProfile((t1_spaces[0][3], t1_spaces[1][3]))
    a = samplers.mh_acceptance(0, best, t1_spaces[0][0], players, topo, params)
    assert a == pytest.approx(math.exp(-4.0), rel=1e-12)
    assert a == pytest.approx(0.01832, abs=1e-5)


def test_mh_acceptance_matches_potential_form():
    rng = np.random.default_rng(19)
    for _ in range(4):
        _, topo, players, params, spaces = scenario_with_joint_cap(rng, 4000)
        for _ in range(10):
            prof = random_profile(spaces, rng)
            i = int(rng.integers(len(players)))
            cand = spaces[i][int(rng.integers(len(spaces[i])))]
            local = samplers.mh_acceptance(i, prof, cand, players, topo, params)
            dphi = game.potential(
                prof.replaced(i, cand), players, topo, params
            ) - game.potential(prof, players, topo, params)
            glob = min(1.0, math.exp(-params.beta * dphi)) if dphi > 0 else 1.0
            assert abs(local - glob) <= 1e-10


def test_mh_proposal_is_uniform_over_player_and_space(t1, t1_spaces):
    # with beta = 0 every proposal is kept, so outcome frequencies expose the
    # proposal law: 1/(N * |space|) = 1/8 per (player, strategy) pair
    _, topo, players, params = t1
    cold = dataclasses.replace(params, beta=0.0)
    rng = np.random.default_rng(23)
    prof = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][0]))
    counts = np.zeros((2, 4))
    n = 40_000
    for _ in range(n):
        _, step = samplers.mh_step(
            prof, players, topo, cold, samplers.UniformDraw(), rng, t1_spaces
        )
        counts[step.chosen_player, t1_spaces[step.chosen_player].index(step.new_strategy)] += 1
    assert np.abs(counts / n - 0.125).max() <= 0.01


def test_steps_change_at_most_one_player():
    rng = np.random.default_rng(29)
    _, topo, players, params, spaces = scenario_with_joint_cap(rng, 4000)
    prof = random_profile(spaces, rng)
    mode = samplers.UniformDraw()
    for _ in range(60):
        nxt, _ = samplers.mh_step(prof, players, topo, params, mode, rng, spaces)
        assert game.hamming(prof, nxt) <= 1
        prof = nxt
        nxt, _ = samplers.ma_step(prof, players, topo, params, mode, rng, spaces)
        assert game.hamming(prof, nxt) <= 1
        prof = nxt


def test_uscs_step_t1(t1, t1_spaces):
    _, topo, players, params = t1
    shared = model.StrategyProfile((t1_spaces[0][0], t1_spaces[1][0]))
    out, step = samplers.uscs_step(shared, players, topo, params, 0, t1_spaces)
    assert step.chosen_player == 0 and step.accepted
    assert out[0] == t1_spaces[0][3]  # move to m2, cost 7 -> 5
    # a player already at its best response does not move
    out2, step2 = samplers.uscs_step(out, players, topo, params, 2, t1_spaces)
    assert step2.chosen_player == 0 and not step2.accepted and out2 == out


def test_uscs_descends_and_terminates(t1, t1_spaces):
    _, topo, players, params = t1
    for start in all_profiles(t1_spaces):
        prof = start
        phi = game.potential(prof, players, topo, params)
        cursor = 0
        for _ in range(64):
            prof, step = samplers.uscs_step(prof, players, topo, params, cursor, t1_spaces)
            cursor += 1
            assert step.potential_after <= phi + 1e-12
            if step.accepted:
                assert step.potential_after < phi
            phi = step.potential_after
        final, sweeps = samplers.uscs_run(start, players, topo, params, t1_spaces)
        assert sweeps <= 16
        ok, witness = game.is_nash_equilibrium(final, players, topo, params, t1_spaces)
        assert ok, witness


def test_uscs_descends_on_random_instance():
    rng = np.random.default_rng(37)
    _, topo, players, params, spaces = scenario_with_joint_cap(rng, 50_000)
    final, _ = samplers.uscs_run(random_profile(spaces, rng), players, topo, params, spaces)
    ok, witness = game.is_nash_equilibrium(final, players, topo, params, spaces)
    assert ok, witness


def test_beta_limit_degenerates_to_best_response(t1, t1_spaces):
    _, topo, players, params = t1
    hot = dataclasses.replace(params, beta=1e6)
    rng = np.random.default_rng(41)
    for _ in range(100):
        prof = random_profile(t1_spaces, rng)
        i = int(rng.integers(2))
        dist = samplers.ma_transition_distribution(i, prof, players, topo, hot, t1_spaces[i])
        br = samplers.uscs_best_response(i, prof, players, topo, params, t1_spaces[i])
        assert t1_spaces[i][int(np.argmax(dist))] == br
