"""Exact solver for the periodic 1D cluster state via a 4x4 transfer matrix.

Pairs of neighboring spins (s_{2i-1}, s_{2i}) form the transfer states, in the
order (+,+), (+,-), (-,+), (-,-), so Z' = Tr T^(n/2).  Rows 0 and 2 of T
coincide, which pins one eigenvalue at zero; the other three come from a 3x3
deflated matrix and a closed-form cubic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mapping import depolarizing_beta

THERMODYNAMIC = None


def build_transfer_matrix(beta: float) -> np.ndarray:
    if not math.isfinite(beta):
        raise ValueError(f"transfer matrix needs a finite beta, got {beta}")
    a = math.exp(-beta)
    b = math.exp(-2.0 * beta)
    return np.array(
        [
            [b, b, a, b],
            [a, a, b, a],
            [b, b, a, b],
            [b, b, a, 1.0],
        ]
    )


def deflate(T: np.ndarray) -> np.ndarray:
    """3x3 matrix sharing the nonzero spectrum of T (needs row 0 == row 2).

    T = L K with K the rows (0, 1, 3) of T and L copying row 0 into slot 2;
    K L then has the same nonzero eigenvalues.
    """
    if not np.array_equal(T[0], T[2]):
        raise ValueError("rows 0 and 2 of the transfer matrix differ")
    K = T[[0, 1, 3]]
    return np.column_stack([K[:, 0] + K[:, 2], K[:, 1], K[:, 3]])


def _real_cubic_roots(a: float, b: float, c: float, tol: float = 1e-10) -> np.ndarray:
    """Roots of x^3 - a x^2 + b x - c, all assumed real, largest first.

    The trigonometric formula is only used for the dominant root; the other
    two come from the quadratic left after dividing it out, since at large
    beta they are many orders of magnitude smaller and the trig form loses
    them to cancellation.
    """
    P = b - a * a / 3.0
    Q = -2.0 * a**3 / 27.0 + a * b / 3.0 - c
    scale = max(abs(a), 1.0)
    if P > -1e-14 * scale**2:
        # triple root (numerically)
        t = float(np.cbrt(-Q)) + a / 3.0
        return np.array([t, t, t])
    r = 2.0 * math.sqrt(-P / 3.0)
    arg = 3.0 * Q / (P * r)
    if abs(arg) > 1.0 + tol:
        raise ValueError(f"transfer matrix has complex eigenvalues (cos argument {arg})")
    phi = math.acos(max(-1.0, min(1.0, arg))) / 3.0
    l1 = r * math.cos(phi) + a / 3.0
    # one Newton step against the undepressed polynomial
    df = (3.0 * l1 - 2.0 * a) * l1 + b
    if abs(df) > 1e-300:
        l1 -= (((l1 - a) * l1 + b) * l1 - c) / df
    # x^2 - s x + q with q = c / l1 and s from b = l1 s + q
    q = c / l1
    s = (b - q) / l1
    disc = s * s - 4.0 * q
    if disc < 0.0:
        if disc < -1e-8 * s * s - 1e-300:
            raise ValueError(f"transfer matrix has complex eigenvalues (discriminant {disc})")
        disc = 0.0
    h = 0.5 * (s + math.copysign(math.sqrt(disc), s))
    l2 = h
    l3 = q / h if h != 0.0 else 0.0
    return np.array([l1, l2, l3])


@dataclass(frozen=True)
class TransferSpectrum:
    lambdas: tuple[float, float, float]
    beta: float


def spectrum(T: np.ndarray, beta: float = math.nan) -> TransferSpectrum:
    M = deflate(T)
    a = float(np.trace(M))
    b = float(
        M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
        + M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1]
    )
    # cofactor expansion: every product pairs entries of different size, so no cancellation
    c = float(
        M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
        - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
        + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
    )
    roots = _real_cubic_roots(a, b, c)
    order = np.argsort(-np.abs(roots), kind="stable")
    return TransferSpectrum(tuple(float(x) for x in roots[order]), beta)


def spectrum_at(beta: float) -> TransferSpectrum:
    return spectrum(build_transfer_matrix(beta), beta)


def _log_trace_per_qubit(beta: float, n: int | None) -> float:
    """(1/n) ln Tr T^(n/2); the n -> infinity limit when n is None."""
    l1, l2, l3 = spectrum_at(beta).lambdas
    if l1 <= 0:
        raise ArithmeticError(f"leading eigenvalue {l1} is not positive at beta={beta}")
    head = 0.5 * math.log(l1)
    if n is None:
        return head
    half = n // 2
    tail = 1.0 + (l2 / l1) ** half + (l3 / l1) ** half
    if tail <= 0:
        raise ArithmeticError(f"nonpositive trace sum at beta={beta}, n={n}")
    return head + math.log(tail) / n


class Fidelity1D(NamedTuple):
    per_qubit: float
    log_fidelity: float


def _check_n(n) -> None:
    if n is not None and (n < 4 or n % 2):
        raise ValueError(f"1D cluster needs an even n >= 4, got n={n}")


def fidelity_1d(n: int | None, p: float) -> Fidelity1D:
    """F^(1/n) and ln F for the periodic 1D cluster under depolarizing noise.

    ``n=None`` gives the thermodynamic limit (ln F is then -inf for p > 0).
    """
    _check_n(n)
    if not 0.0 <= p <= 0.75:
        raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
    if p == 0.0:
        return Fidelity1D(1.0, 0.0)
    if p == 0.75:
        return Fidelity1D(0.5, -math.inf if n is None else -n * math.log(2.0))
    per_log = math.log1p(-p) + _log_trace_per_qubit(depolarizing_beta(p), n)
    return Fidelity1D(math.exp(per_log), -math.inf if n is None else n * per_log)


class Observables1D(NamedTuple):
    energy_per_qubit: float
    specific_heat_per_qubit: float


def _richardson_derivatives(f, x: float, h: float) -> tuple[float, float]:
    def central(step):
        fp, fm = f(x + step), f(x - step)
        return (fp - fm) / (2 * step), (fp - 2 * f0 + fm) / step**2

    f0 = f(x)
    d1h, d2h = central(h)
    d1, d2 = central(h / 2)
    return (4 * d1 - d1h) / 3, (4 * d2 - d2h) / 3


def observables_1d(n: int | None, p: float) -> Observables1D:
    """Internal energy <H>/n and specific heat beta^2 Var(H)/n.

    Both come from numerical beta-derivatives of (1/n) ln Tr T^(n/2); the
    offset c is not part of H.
    """
    _check_n(n)
    if not 0.0 <= p <= 0.75:
        raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
    if p == 0.0:
        return Observables1D(0.0, 0.0)
    if p == 0.75:
        # infinite temperature: each site is non-identity with probability 3/4
        return Observables1D(0.75, 0.0)
    beta = depolarizing_beta(p)
    h = 1e-4 * max(1.0, beta)
    d1, d2 = _richardson_derivatives(lambda b: _log_trace_per_qubit(b, n), beta, h)
    return Observables1D(-d1, beta**2 * d2)
