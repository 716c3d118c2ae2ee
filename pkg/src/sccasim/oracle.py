"""Exhaustive ground truth for enumerable instances.

Enumerates the joint strategy space to give the exact optimal profile, the
Gibbs stationary distribution, explicit transition matrices for both
sampling chains, detailed-balance and row-sum verification, total-variation
evolution with the empirical mixing time, and closed-form bounds on the
soft-min optimality gap and the mixing time. Everything here is a
verification tool with hard size caps, not a solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import engine
from .model import GameParams, PlayerSpec, StrategyProfile, SystemTopology

DEFAULT_ENUM_CAP = 10_000_000
DEFAULT_MATRIX_CAP = 4096


class EnumerationCapError(RuntimeError):
    """The joint strategy space exceeds the requested cap; use the samplers."""


class MixingTimeError(RuntimeError):
    """Distribution evolution did not reach the target distance."""

    def __init__(self, message: str, last_distance: float):
        super().__init__(message)
        self.last_distance = last_distance


@dataclass(frozen=True)
class ChainMatrices:
    """Dense transition matrix and stationary distribution of one chain."""

    kind: str
    P: np.ndarray
    pi: np.ndarray


@dataclass(frozen=True)
class BoundReport:
    """Closed-form bound evaluations next to the measured mixing time.

    The two mixing-time bounds share one geometric form; the conservative
    variant carries an extra N^2 crowding factor in its contraction term
    and is therefore never smaller than the simple variant.
    """

    D: float
    gap_bound: float
    tmix_bound_simple: float
    tmix_bound_conservative: float
    tmix_empirical: int

    def to_dict(self) -> dict:
        return {
            "D": self.D,
            "gap_bound": self.gap_bound,
            "tmix_bound_simple": self.tmix_bound_simple,
            "tmix_bound_conservative": self.tmix_bound_conservative,
            "tmix_empirical": self.tmix_empirical,
        }


def _compiled(topology, players, params, cap):
    inst = engine.compile_instance(topology, players, params)
    if inst.joint_size > cap:
        raise EnumerationCapError(
            f"joint space has {inst.joint_size} states, cap is {cap}"
        )
    return inst


def all_potentials(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    cap: int = DEFAULT_ENUM_CAP,
    backend: str | None = None,
) -> np.ndarray:
    """Potential of every joint state in canonical mixed-radix order."""
    inst = _compiled(topology, players, params, cap)
    return engine.enumerate_potentials(inst, backend)


def enumerate_optimal(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    cap: int = DEFAULT_ENUM_CAP,
    backend: str | None = None,
) -> tuple[StrategyProfile, float]:
    """Exact minimizer of the potential; ties go to the lowest state index."""
    inst = _compiled(topology, players, params, cap)
    phi = engine.enumerate_potentials(inst, backend)
    best = int(np.argmin(phi))
    profile = engine.profile_from_state(inst, engine.state_from_index(inst, best))
    return profile, float(phi[best])


def gibbs_from_potentials(phi: np.ndarray, beta: float) -> np.ndarray:
    """exp(-beta*phi) normalized, computed in log space."""
    z = -beta * np.asarray(phi, dtype=np.float64)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def stationary_distribution(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    cap: int = DEFAULT_ENUM_CAP,
    backend: str | None = None,
) -> np.ndarray:
    return gibbs_from_potentials(
        all_potentials(topology, players, params, cap, backend), params.beta
    )


def build_chain_matrices(
    kind: str,
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    cap: int = DEFAULT_MATRIX_CAP,
    backend: str | None = None,
) -> ChainMatrices:
    """Explicit dense transition matrix for the full-resample ("ma") or
    propose/accept ("mh") chain, with the Gibbs stationary vector.

    Diagonals are assembled from the self-transition formulas rather than
    as a row-sum complement, so row sums stay a meaningful check.
    """
    if kind not in ("ma", "mh"):
        raise ValueError(f"chain kind must be 'ma' or 'mh', got {kind!r}")
    inst = _compiled(topology, players, params, cap)
    phi = engine.enumerate_potentials(inst, backend)
    pi = gibbs_from_potentials(phi, params.beta)
    S = inst.joint_size
    N = inst.n_players
    beta = params.beta
    strides = inst.strides()
    idx = np.arange(S, dtype=np.int64)
    rows = idx[:, None]
    P = np.zeros((S, S), dtype=np.float64)
    for i in range(N):
        n_i = int(inst.n_strats[i])
        st = int(strides[i])
        digit = (idx // st) % n_i
        targets = (idx - digit * st)[:, None] + np.arange(n_i, dtype=np.int64)[None, :] * st
        phi_t = phi[targets]
        if kind == "ma":
            z = -beta * phi_t
            z = z - z.max(axis=1, keepdims=True)
            w = np.exp(z)
            p = w / w.sum(axis=1, keepdims=True)
            np.add.at(P, (np.broadcast_to(rows, targets.shape), targets), p / N)
        else:
            q = 1.0 / (N * n_i)
            accept = np.exp(np.minimum(-beta * (phi_t - phi[:, None]), 0.0))
            np.add.at(P, (np.broadcast_to(rows, targets.shape), targets), q * accept)
            # rejected proposals keep the state
            P[idx, idx] += (q * (1.0 - accept)).sum(axis=1)
    return ChainMatrices(kind=kind, P=P, pi=pi)


def verify_detailed_balance(chain: ChainMatrices, pi: np.ndarray) -> float:
    """max over state pairs of |pi_w P_ww' - pi_w' P_w'w|."""
    if pi.shape[0] != chain.P.shape[0]:
        raise ValueError("distribution does not match the chain dimension")
    flow = pi[:, None] * chain.P
    return float(np.abs(flow - flow.T).max())


def tv_distance(p: np.ndarray, q: np.ndarray, atol: float = 1e-8) -> float:
    """Total variation distance 0.5 * sum |p - q| between two distributions."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions have different dimensions")
    for name, vec in (("p", p), ("q", q)):
        if abs(vec.sum() - 1.0) > atol:
            raise ValueError(f"{name} does not sum to 1 (got {vec.sum()})")
    return float(0.5 * np.abs(p - q).sum())


def empirical_mixing_time(
    chain: ChainMatrices,
    pi_star: np.ndarray,
    epsilon: float,
    start: np.ndarray | None = None,
    max_iters: int = 200_000,
) -> int:
    """Smallest t with TV(start * P^t, pi_star) <= epsilon, by repeated
    vector-matrix products; worst case over all point-mass starts when no
    start is given."""
    P = chain.P
    S = P.shape[0]
    if start is None:
        dist = np.eye(S)
    else:
        start = np.asarray(start, dtype=np.float64)
        if abs(start.sum() - 1.0) > 1e-8:
            raise ValueError("start distribution does not sum to 1")
        dist = start[None, :].copy()
    tv = math.inf
    for t in range(max_iters + 1):
        tv = float(0.5 * np.abs(dist - pi_star[None, :]).sum(axis=1).max())
        if tv <= epsilon:
            return t
        dist = dist @ P
    raise MixingTimeError(
        f"TV still {tv:.3e} after {max_iters} iterations", last_distance=tv
    )


def gap_bound(beta: float, F: int, N: int, M: int) -> float:
    """Upper bound F*N*log(M)/beta on the soft-min optimality gap."""
    if beta <= 0 or F <= 0 or N <= 0 or M <= 0:
        raise ValueError("all bound arguments must be positive")
    return F * N * math.log(M) / beta


def g_beta(phi: np.ndarray, beta: float) -> float:
    """Soft minimum -(1/beta) * log sum exp(-beta*phi); the optimal value of
    the entropy-regularized relaxation. Lies within (1/beta)*log(n_states)
    below the true minimum."""
    z = -beta * np.asarray(phi, dtype=np.float64)
    m = z.max()
    return float(-(m + math.log(np.exp(z - m).sum())) / beta)


def potential_range(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    cap: int = DEFAULT_ENUM_CAP,
    backend: str | None = None,
) -> float:
    phi = all_potentials(topology, players, params, cap, backend)
    return float(phi.max() - phi.min())


def mixing_time_bound(
    epsilon: float,
    beta: float,
    F: int,
    N: int,
    M: int,
    D: float,
    n_states: int | None = None,
) -> tuple[float, float]:
    """Closed-form mixing time bounds (simple, conservative).

    Both evaluate ceil(num/den) with
        num = log(1/(2 eps)) + F*N*log(M)/2 + beta*D/2
        den = -log(1 - exp(-4*beta*D) / (2 * crowd * M^(2F(N+1))))
    with crowd = 1 for the simple variant and N^2 for the conservative one,
    so conservative >= simple always. Returns inf when the contraction term
    underflows to zero. A degenerate single-state chain mixes immediately.
    """
    if epsilon <= 0 or epsilon >= 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if D < 0:
        raise ValueError("D must be non-negative")
    if D == 0.0 and n_states == 1:
        return 0.0, 0.0
    num = math.log(1.0 / (2.0 * epsilon)) + 0.5 * F * N * math.log(M) + 0.5 * beta * D

    def one(crowd: float) -> float:
        try:
            x = math.exp(-4.0 * beta * D) / (2.0 * crowd * M ** (2 * F * (N + 1)))
        except OverflowError:
            return math.inf
        if x <= 0.0:
            return math.inf
        den = -math.log1p(-x)
        if den <= 0.0:
            return math.inf
        return float(math.ceil(num / den))

    return one(1.0), one(float(N) * float(N))


def bound_report(
    topology: SystemTopology,
    players: Sequence[PlayerSpec],
    params: GameParams,
    epsilon: float = 1e-3,
    kind: str = "mh",
    cap: int = DEFAULT_MATRIX_CAP,
    backend: str | None = None,
) -> BoundReport:
    """Evaluate every closed-form bound against the measured mixing time of
    one chain on an enumerable instance."""
    inst = _compiled(topology, players, params, cap)
    phi = engine.enumerate_potentials(inst, backend)
    D = float(phi.max() - phi.min())
    F = len(topology.vnf_types)
    N = len(players)
    M = topology.n_servers
    chain = build_chain_matrices(kind, topology, players, params, cap, backend)
    tmix = empirical_mixing_time(chain, chain.pi, epsilon)
    simple, conservative = mixing_time_bound(
        epsilon, params.beta, F, N, M, D, n_states=inst.joint_size
    )
    return BoundReport(
        D=D,
        gap_bound=gap_bound(params.beta, F, N, M) if params.beta > 0 else math.inf,
        tmix_bound_simple=simple,
        tmix_bound_conservative=conservative,
        tmix_empirical=tmix,
    )
