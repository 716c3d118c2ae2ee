import numpy as np
import pytest

from sccasim import engine, model


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # trigger jit compilation (disk-cached) outside any timed assertion
    topo, players, params = model.build_scenario(model.t1_config())
    inst = engine.compile_instance(topo, players, params)
    state = np.zeros(inst.n_players, dtype=np.int64)
    loads = engine.loads_for(inst, state)
    counts = np.zeros(inst.joint_size, dtype=np.int64)
    for scheme in ("mh", "ma", "uscs"):
        engine.run_segment(
            inst, state, loads, scheme, 1.0, 4,
            rng_sel=np.random.default_rng(0), rng_prop=np.random.default_rng(1),
            counts=counts,
        )
    engine.enumerate_potentials(inst)
    engine.metrics_of_state(inst, state)


@pytest.fixture(scope="session")
def t1():
    cfg = model.t1_config()
    topo, players, params = model.build_scenario(cfg)
    return cfg, topo, players, params


@pytest.fixture(scope="session")
def t1_spaces(t1):
    _, topo, players, _ = t1
    return model.strategy_spaces(players, topo)


@pytest.fixture(scope="session")
def pdefault():
    cfg = model.p_default_config()
    topo, players, params = model.build_scenario(cfg)
    return cfg, topo, players, params
