"""Numba inner loops for the Metropolis sampler.

State is kept as an up-spin indicator ``up`` and the parity ``par`` of
up-neighbors per site; a site's energy is ``table[2 * up + par]``.  Flipping
spin i toggles ``up[i]`` and ``par[j]`` for every neighbor j.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def parities(up, offsets, idx):
    n = up.shape[0]
    par = np.zeros(n, dtype=np.uint8)
    for i in range(n):
        acc = 0
        for k in range(offsets[i], offsets[i + 1]):
            acc ^= up[idx[k]]
        par[i] = acc
    return par


@njit(cache=True)
def total_energy(up, par, table):
    e = 0.0
    for i in range(up.shape[0]):
        e += table[2 * up[i] + par[i]]
    return e


@njit(cache=True)
def metropolis_block(up, par, offsets, idx, table, beta, sites, uniforms,
                     n_sweeps, sweep_offset, thin, energy, out, out_pos):
    """Run ``n_sweeps`` sweeps of n proposals.  When ``out`` is non-empty the
    energy is written to ``out[out_pos]`` after every sweep whose global index
    (counted from ``sweep_offset``) completes a multiple of ``thin``.

    Returns (energy, accepted, out_pos).
    """
    n = up.shape[0]
    accepted = 0
    t = 0
    for sweep in range(n_sweeps):
        for _ in range(n):
            i = sites[t]
            u = uniforms[t]
            t += 1
            ui = up[i]
            pi = par[i]
            de = table[2 * (1 - ui) + pi] - table[2 * ui + pi]
            for k in range(offsets[i], offsets[i + 1]):
                j = idx[k]
                s = 2 * up[j]
                pj = par[j]
                de += table[s + 1 - pj] - table[s + pj]
            if de <= 0.0 or u < math.exp(-beta * de):
                up[i] = 1 - ui
                for k in range(offsets[i], offsets[i + 1]):
                    par[idx[k]] ^= 1
                energy += de
                accepted += 1
        if out.shape[0] > 0 and (sweep_offset + sweep + 1) % thin == 0:
            out[out_pos] = energy
            out_pos += 1
    return energy, accepted, out_pos


@njit(cache=True)
def ladder_block(up, par, offsets, idx, table, betas, sites, uniforms, swap_u,
                 n_sweeps, seg, thin, energies, accepted, out, out_pos, parity):
    """Replica-exchange block: ``n_sweeps`` sweeps of every rung, with neighbor
    swap attempts after each ``seg`` sweeps (even pairs, then odd pairs, ...).

    ``up``/``par`` are (rungs, n); rung r runs at ``betas[r]`` and draws from
    row r of ``sites``/``uniforms``.  Swaps exchange configurations between
    rungs.  Energies are recorded to ``out[:, out_pos]`` every ``thin`` sweeps
    when ``out`` has columns.  Returns (out_pos, parity).
    """
    R, n = up.shape
    done = 0
    k = 0
    while done < n_sweeps:
        m = min(seg, n_sweeps - done)
        for r in range(R):
            beta = betas[r]
            e = energies[r]
            t = done * n
            for sweep in range(m):
                for _ in range(n):
                    i = sites[r, t]
                    u = uniforms[r, t]
                    t += 1
                    ui = up[r, i]
                    pi = par[r, i]
                    de = table[2 * (1 - ui) + pi] - table[2 * ui + pi]
                    for q in range(offsets[i], offsets[i + 1]):
                        j = idx[q]
                        s = 2 * up[r, j]
                        pj = par[r, j]
                        de += table[s + 1 - pj] - table[s + pj]
                    if de <= 0.0 or u < math.exp(-beta * de):
                        up[r, i] = 1 - ui
                        for q in range(offsets[i], offsets[i + 1]):
                            par[r, idx[q]] ^= 1
                        e += de
                        accepted[r] += 1
                if out.shape[1] > 0 and (done + sweep + 1) % thin == 0:
                    out[r, out_pos + (done + sweep) // thin] = e
            energies[r] = e
        done += m
        for r in range(parity, R - 1, 2):
            x = (betas[r] - betas[r + 1]) * (energies[r] - energies[r + 1])
            if x >= 0.0 or swap_u[k, r] < math.exp(x):
                for i in range(n):
                    a = up[r, i]
                    up[r, i] = up[r + 1, i]
                    up[r + 1, i] = a
                    b = par[r, i]
                    par[r, i] = par[r + 1, i]
                    par[r + 1, i] = b
                a2 = energies[r]
                energies[r] = energies[r + 1]
                energies[r + 1] = a2
        parity ^= 1
        k += 1
    if out.shape[1] > 0:
        out_pos += n_sweeps // thin
    return out_pos, parity
