"""Mean-field solution of the depolarizing spin model on hypercubic cluster states.

Linearizing every spin product about the magnetization m gives

    H_MF = B(m) sum_i s_i + D(m),    m = -tanh(beta B(m)),

with k = 2 * dimension the vertex degree.  All free energies here are per
qubit; the offset c is the same on every branch and is left out of branch
comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .mapping import depolarizing_beta

SUPPORTED_DEGREES = (2, 4, 6)
SCAN_POINTS = 10_000


def _check_k(k: int) -> None:
    if k not in SUPPORTED_DEGREES:
        raise ValueError(f"mean field is defined for cluster degrees {SUPPORTED_DEGREES}, got k={k}")


def mf_coefficients(k: int, s: float) -> tuple[float, float]:
    """(B, D/n) at magnetization s."""
    _check_k(k)
    b = 0.25 - 0.25 * k * s ** (k - 1) + 0.25 * (k + 1) * s**k
    d = 0.75 + 0.25 * (k - 1) * s**k - 0.25 * k * s ** (k + 1)
    return b, d


def _log2cosh(x: float) -> float:
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x))


def _free_energy_per_qubit(k: int, beta: float, s: float) -> float:
    """F_MF/n without the offset c."""
    b, d = mf_coefficients(k, s)
    return d - _log2cosh(beta * b) / beta


@dataclass(frozen=True)
class MeanFieldSolution:
    magnetization: float
    B: float
    D: float
    free_energy: float
    fidelity_per_qubit: float
    branch_count: int
    beta: float
    roots: tuple[float, ...] = ()


def self_consistent_roots(k: int, beta: float) -> list[float]:
    """All solutions of s = -tanh(beta B(s)) in [-1, 1], ascending."""
    _check_k(k)
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"self-consistency needs a finite beta > 0, got {beta}")

    def resid(s):
        return s + math.tanh(beta * mf_coefficients(k, s)[0])

    grid = np.linspace(-1.0, 1.0, SCAN_POINTS)
    b = 0.25 - 0.25 * k * grid ** (k - 1) + 0.25 * (k + 1) * grid**k
    r = grid + np.tanh(beta * b)
    roots = [float(x) for x in grid[r == 0.0]]
    for i in np.flatnonzero(r[:-1] * r[1:] < 0):
        roots.append(brentq(resid, grid[i], grid[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    if not roots:
        raise ArithmeticError(f"no self-consistent magnetization found (k={k}, beta={beta})")
    return sorted(roots)


def solve_self_consistent(k: int, beta: float) -> MeanFieldSolution:
    """Self-consistent magnetization on the branch of lowest free energy."""
    roots = self_consistent_roots(k, beta)
    free = [_free_energy_per_qubit(k, beta, s) for s in roots]
    s = roots[int(np.argmin(free))]
    b, d = mf_coefficients(k, s)
    f = min(free)
    # F_MF^(1/n) = (1 - p) exp(-beta D/n) 2 cosh(beta B); the (1 - p) is added by mf_fidelity
    return MeanFieldSolution(s, b, d, f, math.exp(-beta * f), len(roots), beta, tuple(roots))


def mf_fidelity(k: int, p: float) -> float:
    """Mean-field lower bound on F^(1/n) under depolarizing noise."""
    _check_k(k)
    if not 0.0 <= p <= 0.75:
        raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
    if p == 0.0:
        return 1.0
    if p == 0.75:
        return 0.5
    sol = solve_self_consistent(k, depolarizing_beta(p))
    return (1.0 - p) * sol.fidelity_per_qubit


def mf_energy_per_qubit(sol: MeanFieldSolution) -> float:
    """<H>/n under the product measure at the solution: D/n + B m."""
    return sol.D + sol.B * sol.magnetization


def _branch_gap(k: int, p: float) -> float | None:
    """Free-energy difference (ordered minus disordered branch) at p, or None
    if only one branch exists."""
    beta = depolarizing_beta(p)
    roots = self_consistent_roots(k, beta)
    if len(roots) < 3:
        return None
    lo, hi = roots[0], roots[-1]
    return _free_energy_per_qubit(k, beta, lo) - _free_energy_per_qubit(k, beta, hi)


def locate_mf_singularity(k: int, tol: float = 1e-5, grid_points: int = 400) -> float | None:
    """p at which the selected mean-field branch swaps, or None if it never does.

    Scans p for a jump in the selected magnetization, then bisects on the
    free-energy crossing of the two coexisting branches.
    """
    _check_k(k)
    ps = np.linspace(0.01, 0.74, grid_points)
    mags = [solve_self_consistent(k, depolarizing_beta(p)).magnetization for p in ps]
    jumps = np.flatnonzero(np.abs(np.diff(mags)) > 0.2)
    if len(jumps) == 0:
        return None
    a, b = float(ps[jumps[0]]), float(ps[jumps[0] + 1])
    ga, gb = _branch_gap(k, a), _branch_gap(k, b)
    if ga is None or gb is None or ga * gb > 0:
        raise ArithmeticError(f"branch swap between p={a} and p={b} is not bracketed")
    while b - a > tol:
        m = 0.5 * (a + b)
        gm = _branch_gap(k, m)
        if gm is None:
            raise ArithmeticError(f"coexistence lost inside the bracket at p={m}")
        if gm * ga > 0:
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)
