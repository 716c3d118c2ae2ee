"""Hot per-step kernels over the flattened array form of an instance.

This file is loaded twice by `sccasim.engine.load_kernels`: once with
`_USE_NUMBA = True` (every function jit-compiled) and once as plain Python
over numpy arrays. Keep everything here nopython-compatible: scalars,
int64/float64 arrays, no Python objects.

Array layout (see engine.CompiledInstance): per player i, strategies live
at global indices s_off[i] .. s_off[i+1]-1; strat_lat[g] is the precomputed
chain latency of strategy g; dv_flat[dv_off[g]:dv_off[g+1]] are the distinct
VM ids it occupies. `loads[v]` always holds the total survival-discounted
rate currently assigned to VM v. Player costs are evaluated against loads
with the player's own contribution removed.
"""

import math

try:
    _USE_NUMBA
except NameError:  # direct import; the engine loader injects this
    _USE_NUMBA = True

if _USE_NUMBA:
    from numba import njit

    def _jit(f):
        return njit(cache=True)(f)
else:

    def _jit(f):
        return f


@_jit
def fill_loads(state, loads, gl, s_off, dv_off, dv_flat):
    loads[:] = 0.0
    for i in range(state.shape[0]):
        g = s_off[i] + state[i]
        for k in range(dv_off[g], dv_off[g + 1]):
            loads[dv_flat[k]] += gl[i]


@_jit
def sub_player(i, g, loads, gl, dv_off, dv_flat):
    for k in range(dv_off[g], dv_off[g + 1]):
        loads[dv_flat[k]] -= gl[i]


@_jit
def add_player(i, g, loads, gl, dv_off, dv_flat):
    for k in range(dv_off[g], dv_off[g + 1]):
        loads[dv_flat[k]] += gl[i]


@_jit
def player_cost(i, g, loads, lam, alpha, fail_const, surv, strat_lat, dv_off, dv_flat):
    # loads must exclude player i's own contribution
    inner = alpha * strat_lat[g]
    for k in range(dv_off[g], dv_off[g + 1]):
        inner += lam[i] + loads[dv_flat[k]]
    return fail_const[i] + surv[i] * inner


@_jit
def phi_of(state, loads, lam, alpha, gamma_user, s_off, strat_lat):
    traffic_lat = 0.0
    for i in range(state.shape[0]):
        traffic_lat += lam[i] * strat_lat[s_off[i] + state[i]]
    sq = 0.0
    for v in range(loads.shape[0]):
        sq += loads[v] * loads[v]
    return 2.0 * alpha * gamma_user * traffic_lat + sq


@_jit
def metrics(state, loads, lam, gl, alpha, gamma_user, fail_const, surv,
            s_off, strat_lat, dv_off, dv_flat):
    n = state.shape[0]
    traffic_lat = 0.0
    cost_acc = 0.0
    for i in range(n):
        g = s_off[i] + state[i]
        traffic_lat += lam[i] * strat_lat[g]
        inner = alpha * strat_lat[g]
        for k in range(dv_off[g], dv_off[g + 1]):
            inner += lam[i] + loads[dv_flat[k]] - gl[i]
        cost_acc += lam[i] * (fail_const[i] + surv[i] * inner)
    sq = 0.0
    for v in range(loads.shape[0]):
        sq += loads[v] * loads[v]
    phi = 2.0 * alpha * gamma_user * traffic_lat + sq
    return phi, cost_acc / n


@_jit
def _state_index(state, strides):
    idx = 0
    for k in range(state.shape[0]):
        idx += state[k] * strides[k]
    return idx


@_jit
def mh_chunk(state, loads, u_sel, u_prop, u_acc, betaw,
             lam, gl, alpha, gamma_user, fail_const, surv,
             n_strats, s_off, strat_lat, dv_off, dv_flat,
             step0, rec_every, rec_base, rec_phi, rec_cost,
             counts, strides):
    """Metropolis-Hastings iterations: uniform player, uniform proposal,
    accept with exp(-beta * weight_i * positive cost increase)."""
    n = state.shape[0]
    accepted = 0
    for t in range(u_sel.shape[0]):
        i = int(u_sel[t] * n)
        if i >= n:
            i = n - 1
        m = n_strats[i]
        prop = int(u_prop[t] * m)
        if prop >= m:
            prop = m - 1
        cur = state[i]
        if prop != cur:
            g_cur = s_off[i] + cur
            g_new = s_off[i] + prop
            sub_player(i, g_cur, loads, gl, dv_off, dv_flat)
            c_cur = player_cost(i, g_cur, loads, lam, alpha, fail_const, surv,
                                strat_lat, dv_off, dv_flat)
            c_new = player_cost(i, g_new, loads, lam, alpha, fail_const, surv,
                                strat_lat, dv_off, dv_flat)
            d = c_new - c_cur
            take = True
            if d > 0.0:
                take = u_acc[t] < math.exp(-betaw[i] * d)
            if take:
                state[i] = prop
                add_player(i, g_new, loads, gl, dv_off, dv_flat)
                accepted += 1
            else:
                add_player(i, g_cur, loads, gl, dv_off, dv_flat)
        else:
            accepted += 1
        if counts.shape[0] > 0:
            counts[_state_index(state, strides)] += 1
        if rec_every > 0:
            it = step0 + t + 1
            if it % rec_every == 0:
                r = it // rec_every - rec_base
                phi, cbar = metrics(state, loads, lam, gl, alpha, gamma_user,
                                    fail_const, surv, s_off, strat_lat, dv_off, dv_flat)
                rec_phi[r] = phi
                rec_cost[r] = cbar
    return accepted


@_jit
def ma_chunk(state, loads, u_sel, u_strat, betaw,
             lam, gl, alpha, gamma_user, fail_const, surv,
             n_strats, s_off, strat_lat, dv_off, dv_flat,
             cost_buf,
             step0, rec_every, rec_base, rec_phi, rec_cost,
             counts, strides):
    """Gibbs-style iterations: uniform player, then a full resample of its
    strategy from the softmax of -beta * weight_i * cost over its space.
    Exponents are shifted by the minimum cost before exponentiation; raw
    exponents overflow on realistic instances."""
    n = state.shape[0]
    for t in range(u_sel.shape[0]):
        i = int(u_sel[t] * n)
        if i >= n:
            i = n - 1
        m = n_strats[i]
        g0 = s_off[i]
        sub_player(i, g0 + state[i], loads, gl, dv_off, dv_flat)
        cmin = math.inf
        for s in range(m):
            c = player_cost(i, g0 + s, loads, lam, alpha, fail_const, surv,
                            strat_lat, dv_off, dv_flat)
            cost_buf[s] = c
            if c < cmin:
                cmin = c
        total = 0.0
        for s in range(m):
            d = cost_buf[s] - cmin
            e = 1.0 if d == 0.0 else math.exp(-betaw[i] * d)
            cost_buf[s] = e
            total += e
        u = u_strat[t]
        chosen = m - 1
        cum = 0.0
        for s in range(m):
            cum += cost_buf[s] / total
            if u < cum:
                chosen = s
                break
        state[i] = chosen
        add_player(i, g0 + chosen, loads, gl, dv_off, dv_flat)
        if counts.shape[0] > 0:
            counts[_state_index(state, strides)] += 1
        if rec_every > 0:
            it = step0 + t + 1
            if it % rec_every == 0:
                r = it // rec_every - rec_base
                phi, cbar = metrics(state, loads, lam, gl, alpha, gamma_user,
                                    fail_const, surv, s_off, strat_lat, dv_off, dv_flat)
                rec_phi[r] = phi
                rec_cost[r] = cbar
    return 0


@_jit
def uscs_chunk(state, loads, n_steps,
               lam, gl, alpha, gamma_user, fail_const, surv,
               n_strats, s_off, strat_lat, dv_off, dv_flat,
               step0, rec_every, rec_base, rec_phi, rec_cost,
               counts, strides):
    """Round-robin exact best response; ties resolve to the lowest strategy
    index. Returns how many iterations actually changed a strategy."""
    n = state.shape[0]
    changes = 0
    for t in range(n_steps):
        i = (step0 + t) % n
        g0 = s_off[i]
        sub_player(i, g0 + state[i], loads, gl, dv_off, dv_flat)
        best = 0
        cbest = math.inf
        for s in range(n_strats[i]):
            c = player_cost(i, g0 + s, loads, lam, alpha, fail_const, surv,
                            strat_lat, dv_off, dv_flat)
            if c < cbest:
                cbest = c
                best = s
        if best != state[i]:
            changes += 1
        state[i] = best
        add_player(i, g0 + best, loads, gl, dv_off, dv_flat)
        if counts.shape[0] > 0:
            counts[_state_index(state, strides)] += 1
        if rec_every > 0:
            it = step0 + t + 1
            if it % rec_every == 0:
                r = it // rec_every - rec_base
                phi, cbar = metrics(state, loads, lam, gl, alpha, gamma_user,
                                    fail_const, surv, s_off, strat_lat, dv_off, dv_flat)
                rec_phi[r] = phi
                rec_cost[r] = cbar
    return changes


@_jit
def enumerate_phi(out, state, loads, lam, gl, alpha, gamma_user,
                  n_strats, s_off, strat_lat, dv_off, dv_flat):
    """Potential of every joint state in mixed-radix order (player 0 most
    significant). `state` must arrive zeroed with `loads` matching it."""
    n = state.shape[0]
    for idx in range(out.shape[0]):
        out[idx] = phi_of(state, loads, lam, alpha, gamma_user, s_off, strat_lat)
        i = n - 1
        while i >= 0:
            sub_player(i, s_off[i] + state[i], loads, gl, dv_off, dv_flat)
            state[i] += 1
            if state[i] == n_strats[i]:
                state[i] = 0
                add_player(i, s_off[i], loads, gl, dv_off, dv_flat)
                i -= 1
            else:
                add_player(i, s_off[i] + state[i], loads, gl, dv_off, dv_flat)
                break
