"""Brute-force reference implementations, independent of the package code paths."""

import itertools
import math

import numpy as np

# single-qubit Pauli product, phases dropped
_MUL = {
    ("I", "I"): "I", ("I", "X"): "X", ("I", "Y"): "Y", ("I", "Z"): "Z",
    ("X", "I"): "X", ("X", "X"): "I", ("X", "Y"): "Z", ("X", "Z"): "Y",
    ("Y", "I"): "Y", ("Y", "X"): "Z", ("Y", "Y"): "I", ("Y", "Z"): "X",
    ("Z", "I"): "Z", ("Z", "X"): "Y", ("Z", "Y"): "X", ("Z", "Z"): "I",
}


def generator_labels(n, edges):
    gens = []
    for i in range(n):
        lab = ["I"] * n
        lab[i] = "X"
        for a, b in edges:
            if a == i:
                lab[b] = "Z"
            elif b == i:
                lab[a] = "Z"
        gens.append(lab)
    return gens


def stabilizer_label(n, edges, ell):
    lab = ["I"] * n
    for i, g in enumerate(generator_labels(n, edges)):
        if ell[i]:
            lab = [_MUL[a, b] for a, b in zip(lab, g)]
    return "".join(lab)


def pauli_histogram(n, edges):
    """{(mx, my, mz): count} by multiplying generator strings for every bit vector."""
    hist = {}
    for ell in itertools.product((0, 1), repeat=n):
        lab = stabilizer_label(n, edges, ell)
        key = (lab.count("X"), lab.count("Y"), lab.count("Z"))
        hist[key] = hist.get(key, 0) + 1
    return hist


def graph_state(n, edges):
    psi = np.full(2**n, 2 ** (-n / 2))
    for k in range(2**n):
        bits = [(k >> (n - 1 - q)) & 1 for q in range(n)]
        if sum(bits[a] & bits[b] for a, b in edges) % 2:
            psi[k] = -psi[k]
    return psi


_P = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def density_matrix_fidelity(n, edges, px, py, pz):
    """<G| E(|G><G|) |G> with E the IID Pauli channel, by explicit simulation."""
    psi = graph_state(n, edges).astype(complex)
    rho = np.outer(psi, psi.conj())
    for q in range(n):
        new = (1 - px - py - pz) * rho
        for name, pr in (("X", px), ("Y", py), ("Z", pz)):
            if pr:
                op = np.kron(np.kron(np.eye(2**q), _P[name]), np.eye(2 ** (n - q - 1)))
                new = new + pr * op @ rho @ op.conj().T
        rho = new
    return float(np.real(psi.conj() @ rho @ psi))


def spin_energy(n, neighbors, spins, jx, jy, jz):
    """Energy from the spin-product form: projectors built from s_i and prod_j(-s_j)."""
    e = 0.0
    for i in range(n):
        s = spins[i]
        prod = 1
        for j in neighbors[i]:
            prod *= -spins[j]
        e += jx * (1 + s) * (1 + prod) / 4 + jy * (1 + s) * (1 - prod) / 4 + jz * (1 - s) * (1 - prod) / 4
    return e


def brute_thermal(g, beta, jx=1.0, jy=1.0, jz=1.0):
    """(<H>, beta^2 Var H, ln Z') by looping over all 2^n spin configurations."""
    es = np.array([
        spin_energy(g.n, g.neighbors, s, jx, jy, jz)
        for s in itertools.product((-1, 1), repeat=g.n)
    ])
    lw = -beta * es
    m = lw.max()
    w = np.exp(lw - m)
    z = w.sum()
    mean = float((w * es).sum() / z)
    var = float((w * (es - mean) ** 2).sum() / z)
    return mean, beta**2 * var, m + math.log(z)
