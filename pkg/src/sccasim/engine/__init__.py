"""Flattened-array execution engine behind the samplers and the harness.

`CompiledInstance` lowers (topology, players, params) into the integer and
float arrays the kernels in `_kernels.py` consume. Kernels come in two
interchangeable backends selected by the SCCASIM_BACKEND environment
variable (or per call): "numba" jit-compiles the kernel source, "numpy"
runs the identical source as plain Python. Both consume the same pre-drawn
uniform streams, so a run is reproducible across backends bit for bit.
"""

from __future__ import annotations

import importlib.util
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import game
from ..model import (
    GameParams,
    PlayerSpec,
    Strategy,
    StrategyProfile,
    SystemTopology,
    strategy_spaces,
)

_CHUNK = 1 << 16
_KERNELS_CACHE: dict = {}


def default_backend() -> str:
    b = os.environ.get("SCCASIM_BACKEND", "").strip().lower()
    if b in ("", "auto"):
        try:
            import numba  # noqa: F401

            return "numba"
        except ImportError:
            return "numpy"
    if b in ("numba", "numpy"):
        return b
    raise ValueError(f"SCCASIM_BACKEND must be 'numba' or 'numpy', got {b!r}")


def load_kernels(backend: str | None = None):
    """Load (and cache) the kernel module for a backend; both backends can
    coexist in one process, which the equivalence tests and the benchmark
    rely on."""
    name = backend or default_backend()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    mod = _KERNELS_CACHE.get(name)
    if mod is None:
        import sys

        path = os.path.join(os.path.dirname(__file__), "_kernels.py")
        spec = importlib.util.spec_from_file_location(
            f"sccasim.engine._kernels_{name}", path
        )
        mod = importlib.util.module_from_spec(spec)
        mod._USE_NUMBA = name == "numba"
        # the jit cache rebuilds function environments by importing the
        # module by name, so it must be registered before compilation
        sys.modules[spec.name] = mod
        spec.loader.exec_module(mod)
        _KERNELS_CACHE[name] = mod
    return mod


@dataclass(frozen=True)
class CompiledInstance:
    """Array form of one game instance; immutable once built."""

    topology: SystemTopology
    players: tuple[PlayerSpec, ...]
    params: GameParams
    spaces: tuple[tuple[Strategy, ...], ...]
    n_players: int
    n_vm_slots: int
    alpha: float
    gamma_user: float
    lam: np.ndarray
    gl: np.ndarray
    fail_const: np.ndarray
    surv: np.ndarray
    weight: np.ndarray
    n_strats: np.ndarray
    s_off: np.ndarray
    strat_lat: np.ndarray
    dv_off: np.ndarray
    dv_flat: np.ndarray
    dv_pad: tuple[np.ndarray, ...]
    joint_size: int
    max_strats: int

    def strategy_index(self, i: int, strategy: Strategy) -> int:
        return self.spaces[i].index(strategy)

    def strides(self) -> np.ndarray:
        """Mixed-radix strides of the joint space (player 0 most significant)."""
        if self.joint_size >= 2**63:
            raise OverflowError("joint space too large to index")
        strides = np.empty(self.n_players, dtype=np.int64)
        acc = 1
        for i in range(self.n_players - 1, -1, -1):
            strides[i] = acc
            acc *= int(self.n_strats[i])
        return strides


def compile_instance(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
) -> CompiledInstance:
    players = tuple(players)
    spaces = strategy_spaces(players, topology)
    n = len(players)

    lam = np.array([p.rate for p in players], dtype=np.float64)
    gl = params.gamma_user * lam
    surv = np.array(
        [params.gamma_user * params.gamma_vm ** p.chain_length for p in players]
    )
    fail_const = np.array(
        [
            params.gamma_user_bar * p.failure_cost
            + params.gamma_user * (1.0 - params.gamma_vm ** p.chain_length) * p.failure_cost
            for p in players
        ]
    )
    weight = np.array([game.game_weight(p, params) for p in players])

    n_strats = np.array([len(s) for s in spaces], dtype=np.int64)
    s_off = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(n_strats, out=s_off[1:])

    strat_lat = np.empty(int(s_off[-1]), dtype=np.float64)
    dv_lists: list[tuple[int, ...]] = []
    for i, p in enumerate(players):
        for k, strat in enumerate(spaces[i]):
            strat_lat[s_off[i] + k] = game.latency_cost(p, strat, topology)
            dv_lists.append(strat.distinct_vms())
    dv_off = np.zeros(len(dv_lists) + 1, dtype=np.int64)
    np.cumsum([len(d) for d in dv_lists], out=dv_off[1:])
    dv_flat = np.array([v for d in dv_lists for v in d], dtype=np.int64)

    dv_pad = []
    for i, p in enumerate(players):
        width = p.chain_length
        pad = np.full((int(n_strats[i]), width), -1, dtype=np.int64)
        for k in range(int(n_strats[i])):
            d = dv_lists[int(s_off[i]) + k]
            pad[k, : len(d)] = d
        dv_pad.append(pad)

    joint = 1
    for m in n_strats:
        joint *= int(m)

    return CompiledInstance(
        topology=topology,
        players=players,
        params=params,
        spaces=spaces,
        n_players=n,
        n_vm_slots=topology.n_vm_slots,
        alpha=params.alpha,
        gamma_user=params.gamma_user,
        lam=lam,
        gl=gl,
        fail_const=fail_const,
        surv=surv,
        weight=weight,
        n_strats=n_strats,
        s_off=s_off,
        strat_lat=strat_lat,
        dv_off=dv_off,
        dv_flat=dv_flat,
        dv_pad=tuple(dv_pad),
        joint_size=joint,
        max_strats=int(n_strats.max()) if n else 0,
    )


def _common_args(inst: CompiledInstance):
    return (
        inst.lam,
        inst.gl,
        inst.alpha,
        inst.gamma_user,
        inst.fail_const,
        inst.surv,
        inst.n_strats,
        inst.s_off,
        inst.strat_lat,
        inst.dv_off,
        inst.dv_flat,
    )


def betaw_for(inst: CompiledInstance, beta: float) -> np.ndarray:
    # 0 * inf would be nan; beta == 0 means a uniform kernel regardless
    if beta == 0.0:
        return np.zeros(inst.n_players)
    return beta * inst.weight


def random_state(inst: CompiledInstance, rng: np.random.Generator) -> np.ndarray:
    """Uniform initial profile, one draw per player in id order."""
    return np.array(
        [rng.integers(int(m)) for m in inst.n_strats], dtype=np.int64
    )


def loads_for(inst: CompiledInstance, state: np.ndarray, backend: str | None = None) -> np.ndarray:
    k = load_kernels(backend)
    loads = np.zeros(inst.n_vm_slots, dtype=np.float64)
    k.fill_loads(state, loads, inst.gl, inst.s_off, inst.dv_off, inst.dv_flat)
    return loads


def metrics_of_state(inst: CompiledInstance, state: np.ndarray, backend: str | None = None):
    """(potential, weighted average cost) of a joint state."""
    k = load_kernels(backend)
    loads = loads_for(inst, state, backend)
    phi, cbar = k.metrics(
        state, loads, inst.lam, inst.gl, inst.alpha, inst.gamma_user,
        inst.fail_const, inst.surv, inst.s_off, inst.strat_lat,
        inst.dv_off, inst.dv_flat,
    )
    return float(phi), float(cbar)


def potential_of_state(inst: CompiledInstance, state: np.ndarray, backend: str | None = None) -> float:
    k = load_kernels(backend)
    loads = loads_for(inst, state, backend)
    return float(
        k.phi_of(state, loads, inst.lam, inst.alpha, inst.gamma_user, inst.s_off, inst.strat_lat)
    )


def state_from_profile(inst: CompiledInstance, profile: StrategyProfile) -> np.ndarray:
    return np.array(
        [inst.strategy_index(i, profile[i]) for i in range(inst.n_players)],
        dtype=np.int64,
    )


def profile_from_state(inst: CompiledInstance, state: np.ndarray) -> StrategyProfile:
    return StrategyProfile(
        tuple(inst.spaces[i][int(state[i])] for i in range(inst.n_players))
    )


def state_index(inst: CompiledInstance, state: np.ndarray) -> int:
    return int(np.dot(state, inst.strides()))


def state_from_index(inst: CompiledInstance, idx: int) -> np.ndarray:
    strides = inst.strides()
    out = np.empty(inst.n_players, dtype=np.int64)
    for i in range(inst.n_players):
        out[i] = (idx // int(strides[i])) % int(inst.n_strats[i])
    return out


@dataclass
class SegmentResult:
    iterations: np.ndarray
    potential: np.ndarray
    cost: np.ndarray
    accepted: int


def run_segment(
    inst: CompiledInstance,
    state: np.ndarray,
    loads: np.ndarray,
    scheme: str,
    beta: float,
    n_iters: int,
    *,
    step0: int = 0,
    rec_every: int = 1,
    rng_sel: np.random.Generator | None = None,
    rng_prop: np.random.Generator | None = None,
    counts: np.ndarray | None = None,
    backend: str | None = None,
) -> SegmentResult:
    """Advance `state` in place by n_iters iterations of one scheme.

    Iteration numbers are global: the i-th iteration of this segment is
    step0 + i + 1, and records land on multiples of rec_every. Uniform
    draws come from rng_sel (player selection) and rng_prop (proposals /
    acceptance) in fixed chunked order, so a run is fully determined by
    the two generator states.
    """
    if scheme not in ("mh", "ma", "uscs"):
        raise ValueError(f"unknown step scheme {scheme!r}")
    k = load_kernels(backend)
    common = _common_args(inst)

    if counts is None:
        counts_arr = np.zeros(0, dtype=np.int64)
        strides = np.zeros(0, dtype=np.int64)
    else:
        counts_arr = counts
        strides = inst.strides()

    if inst.max_strats == 0:
        raise ValueError("instance has no strategies")
    cost_buf = np.empty(inst.max_strats, dtype=np.float64)
    betaw = betaw_for(inst, beta)

    iters_out: list[np.ndarray] = []
    phi_out: list[np.ndarray] = []
    cost_out: list[np.ndarray] = []
    accepted = 0
    done = 0
    while done < n_iters:
        nsteps = min(_CHUNK, n_iters - done)
        off = step0 + done
        if rec_every > 0:
            rec_base = off // rec_every + 1
            n_rec = (off + nsteps) // rec_every - off // rec_every
        else:
            rec_base = 0
            n_rec = 0
        rec_phi = np.empty(n_rec, dtype=np.float64)
        rec_cost = np.empty(n_rec, dtype=np.float64)

        if scheme == "mh":
            u_sel = rng_sel.random(nsteps)
            u_prop = rng_prop.random(nsteps)
            u_acc = rng_prop.random(nsteps)
            accepted += int(
                k.mh_chunk(
                    state, loads, u_sel, u_prop, u_acc, betaw, *common,
                    off, rec_every, rec_base, rec_phi, rec_cost, counts_arr, strides,
                )
            )
        elif scheme == "ma":
            u_sel = rng_sel.random(nsteps)
            u_strat = rng_prop.random(nsteps)
            k.ma_chunk(
                state, loads, u_sel, u_strat, betaw, *common, cost_buf,
                off, rec_every, rec_base, rec_phi, rec_cost, counts_arr, strides,
            )
            accepted += nsteps
        else:
            accepted += int(
                k.uscs_chunk(
                    state, loads, nsteps, *common,
                    off, rec_every, rec_base, rec_phi, rec_cost, counts_arr, strides,
                )
            )
        if n_rec:
            first = (rec_base) * rec_every
            iters_out.append(np.arange(first, first + n_rec * rec_every, rec_every, dtype=np.int64))
            phi_out.append(rec_phi)
            cost_out.append(rec_cost)
        done += nsteps

    if iters_out:
        return SegmentResult(
            iterations=np.concatenate(iters_out),
            potential=np.concatenate(phi_out),
            cost=np.concatenate(cost_out),
            accepted=accepted,
        )
    empty = np.zeros(0)
    return SegmentResult(
        iterations=np.zeros(0, dtype=np.int64), potential=empty, cost=empty, accepted=accepted
    )


def enumerate_potentials(inst: CompiledInstance, backend: str | None = None) -> np.ndarray:
    """Potential of every joint state, indexed in mixed-radix order.

    The numba backend walks an odometer; the numpy backend computes the
    same values chunk-vectorized. Callers enforce their own size caps.
    """
    total = inst.joint_size
    if total >= 2**63:
        raise OverflowError("joint space too large to enumerate")
    name = backend or default_backend()
    if name == "numpy":
        return _enumerate_vectorized(inst)
    k = load_kernels(name)
    out = np.empty(total, dtype=np.float64)
    state = np.zeros(inst.n_players, dtype=np.int64)
    loads = loads_for(inst, state, name)
    k.enumerate_phi(
        out, state, loads, inst.lam, inst.gl, inst.alpha, inst.gamma_user,
        inst.n_strats, inst.s_off, inst.strat_lat, inst.dv_off, inst.dv_flat,
    )
    return out


def _enumerate_vectorized(inst: CompiledInstance, chunk: int = 1 << 14) -> np.ndarray:
    total = inst.joint_size
    strides = inst.strides()
    out = np.empty(total, dtype=np.float64)
    two_ag = 2.0 * inst.alpha * inst.gamma_user
    for lo in range(0, total, chunk):
        hi = min(lo + chunk, total)
        idx = np.arange(lo, hi, dtype=np.int64)
        digits = (idx[:, None] // strides[None, :]) % inst.n_strats[None, :]
        g = inst.s_off[:-1][None, :] + digits
        lat = (inst.lam[None, :] * inst.strat_lat[g]).sum(axis=1)
        loads = np.zeros((hi - lo, inst.n_vm_slots))
        rows = np.arange(hi - lo)[:, None]
        for i in range(inst.n_players):
            vms = inst.dv_pad[i][digits[:, i]]
            mask = vms >= 0
            np.add.at(
                loads,
                (np.broadcast_to(rows, vms.shape)[mask], vms[mask]),
                inst.gl[i],
            )
        out[lo:hi] = two_ag * lat + (loads * loads).sum(axis=1)
    return out
