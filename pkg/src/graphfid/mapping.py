"""Classical spin model whose partition function equals the graph-state fidelity.

Spin s_i = +1 means generator g_i is in the stabilizer.  The local Pauli on
qubit i is fixed by s_i and the parity of up-spins among its neighbors:

    up,   even -> X        down, odd  -> Z
    up,   odd  -> Y        down, even -> I

and the energy J_x m_x + J_y m_y + J_z m_z counts the weighted Paulis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .graphs import Graph
from .stabilizer import NoiseModel, WeightHistogram, WeightTriple


class MappingUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class CouplingParams:
    beta: float
    jx: float
    jy: float
    jz: float
    c: float
    n: int
    p: float

    @property
    def beta_c(self) -> float:
        """beta * c = -n ln(1 - p), finite even where beta = 0."""
        return -self.n * math.log1p(-self.p)

    @property
    def beta_j(self) -> tuple[float, float, float]:
        return (self.beta * self.jx, self.beta * self.jy, self.beta * self.jz)

    @property
    def ferromagnetic(self) -> bool:
        """True when every coupling is positive (all-down ground state)."""
        return min(self.jx, self.jy, self.jz) > 0 and self.beta >= 0

    def with_beta(self, beta: float) -> "CouplingParams":
        """Same couplings at another inverse temperature (offset dropped)."""
        return CouplingParams(beta, self.jx, self.jy, self.jz, math.nan, self.n, math.nan)


def depolarizing_beta(p: float) -> float:
    if not 0.0 < p <= 0.75:
        raise MappingUndefinedError(f"beta(p) needs 0 < p <= 3/4, got p={p}")
    return math.log(3.0 * (1.0 - p) / p)


def p_from_beta(beta: float) -> float:
    """Inverse of depolarizing_beta."""
    return 3.0 / (3.0 + math.exp(beta))


def coupling_from_noise(noise: NoiseModel, n: int) -> CouplingParams:
    p = noise.p
    if p <= 0.0 or p >= 1.0 or min(noise.px, noise.py, noise.pz) <= 0.0:
        raise MappingUndefinedError(
            f"mapping undefined at infinite/zero temperature (px, py, pz = "
            f"{noise.px}, {noise.py}, {noise.pz}); use exact solver"
        )
    lq = math.log1p(-p)
    bjx, bjy, bjz = (lq - math.log(q) for q in (noise.px, noise.py, noise.pz))
    if noise.is_depolarizing:
        beta, jx, jy, jz = bjx, 1.0, 1.0, 1.0
    else:
        if bjx == 0.0:
            raise MappingUndefinedError("p_x = 1 - p: cannot normalize J_x = 1 (beta = 0)")
        beta, jx, jy, jz = bjx, 1.0, bjy / bjx, bjz / bjx
    c = -n * lq / beta if beta != 0.0 else math.inf
    return CouplingParams(beta, jx, jy, jz, c, n, p)


class TermCounts(NamedTuple):
    mx: int
    my: int
    mz: int
    mi: int


def _as_spins(g: Graph, spins) -> np.ndarray:
    s = np.asarray(spins)
    if s.shape != (g.n,):
        raise ValueError(f"spin configuration has shape {s.shape}, graph has n={g.n}")
    if not np.all(np.abs(s) == 1):
        raise ValueError("spins must be +1 or -1")
    return s


def spins_from_bits(ell) -> np.ndarray:
    return 2 * np.asarray(ell, dtype=np.int8) - 1


def _site_classes(g: Graph, up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(up indicator, up-neighbor parity) per site; up may be batched (..., n)."""
    nup = np.asarray((g.adjacency @ up.T).T)
    return up, nup & 1


def term_counts(g: Graph, spins) -> TermCounts:
    s = _as_spins(g, spins)
    up, odd = _site_classes(g, (s > 0).astype(np.int64))
    mx = int(np.sum(up & (1 - odd)))
    my = int(np.sum(up & odd))
    mz = int(np.sum((1 - up) & odd))
    return TermCounts(mx, my, mz, g.n - mx - my - mz)


def energy(g: Graph, spins, cp: CouplingParams) -> float:
    t = term_counts(g, spins)
    return cp.jx * t.mx + cp.jy * t.my + cp.jz * t.mz


def site_energy_table(cp: CouplingParams) -> np.ndarray:
    """Energy of one site indexed by 2*up + parity: I, Z, X, Y."""
    return np.array([0.0, cp.jz, cp.jx, cp.jy])


def local_energy_delta(g: Graph, spins, i: int, cp: CouplingParams) -> float:
    """Energy change from flipping spin i, touching only i and its neighbors."""
    s = _as_spins(g, spins)
    if not 0 <= i < g.n:
        raise IndexError(f"site {i} out of range for n={g.n}")
    table = site_energy_table(cp)

    def parity(k):
        return sum(1 for j in g.neighbors[k] if s[j] > 0) & 1

    up_i = int(s[i] > 0)
    par_i = parity(i)
    delta = table[2 * (1 - up_i) + par_i] - table[2 * up_i + par_i]
    for j in g.neighbors[i]:
        up_j = int(s[j] > 0)
        par_j = parity(j)
        delta += table[2 * up_j + (1 - par_j)] - table[2 * up_j + par_j]
    return float(delta)


def all_term_counts(g: Graph, chunk: int = 1 << 14):
    """Yield (mx, my, mz) arrays over all 2^n spin configurations, in chunks.

    Configuration k has s_i = +1 iff bit i of k is set, matching ell = k.
    """
    total = 1 << g.n
    bits = np.arange(g.n, dtype=np.int64)
    for start in range(0, total, chunk):
        k = np.arange(start, min(start + chunk, total), dtype=np.int64)
        up = (k[:, None] >> bits) & 1
        up, odd = _site_classes(g, up)
        yield (
            np.sum(up & (1 - odd), axis=1),
            np.sum(up & odd, axis=1),
            np.sum((1 - up) & odd, axis=1),
        )


def spin_histogram(g: Graph, cap: int = 20) -> WeightHistogram:
    """Density of states of the spin model, by exhaustive scan of configurations."""
    if g.n > cap:
        raise ValueError(f"n={g.n} exceeds the exhaustive-scan cap {cap}")
    base = g.n + 1
    acc = np.zeros(base**3, dtype=np.int64)
    for mx, my, mz in all_term_counts(g):
        acc += np.bincount((mx * base + my) * base + mz, minlength=base**3)
    counts = {}
    for key in np.flatnonzero(acc):
        mx, rem = divmod(int(key), base * base)
        my, mz = divmod(rem, base)
        counts[WeightTriple(mx, my, mz)] = int(acc[key])
    return WeightHistogram(g.n, counts)


def _log_boltzmann_terms(hist: WeightHistogram, cp: CouplingParams) -> tuple[np.ndarray, np.ndarray]:
    trip, cnt = hist.arrays()
    e = trip @ np.array([cp.jx, cp.jy, cp.jz])
    return e, -cp.beta * e + np.log(cnt)


def log_fidelity_from_histogram(
    hist: WeightHistogram, noise: NoiseModel, validate: bool = True
) -> float:
    """ln Z with Z = sum exp(-beta (E + c)) N_F, the mapped partition function.

    ``validate=False`` skips the 2^n normalization check, for partial histograms.
    """
    if validate:
        hist.check()
    if noise.p == 0.0:
        return 0.0
    cp = coupling_from_noise(noise, hist.n)
    _, logw = _log_boltzmann_terms(hist, cp)
    return float(logsumexp(logw)) - cp.beta_c


def fidelity_from_histogram(
    hist: WeightHistogram, noise: NoiseModel, validate: bool = True
) -> float:
    return math.exp(log_fidelity_from_histogram(hist, noise, validate))


def thermal_averages(hist: WeightHistogram, cp: CouplingParams) -> tuple[float, float]:
    """Exact (<H>, beta^2 Var H) at the couplings' beta; c is not part of H."""
    e, logw = _log_boltzmann_terms(hist, cp)
    w = np.exp(logw - logsumexp(logw))
    mean = float(np.dot(w, e))
    var = float(np.dot(w, (e - mean) ** 2))
    return mean, cp.beta**2 * var
