"""Exact stabilizer enumeration and the fidelity sum for graph states.

Pauli strings are kept in the binary symplectic form (x bits, z bits) packed
into Python integers; bit i is qubit i.  Signs are dropped: the fidelity only
needs |<G|S|G>|^2 = 1, i.e. the Pauli content of each stabilizer.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .graphs import Graph

ENUMERATION_CAP = 20

_DECODE = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
_ENCODE = {v: k for k, v in _DECODE.items()}


class EnumerationCapError(ValueError):
    pass


@dataclass(frozen=True)
class PauliString:
    n: int
    xbits: int
    zbits: int

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        x = z = 0
        for i, ch in enumerate(label.upper()):
            xb, zb = _ENCODE[ch]
            x |= xb << i
            z |= zb << i
        return cls(len(label), x, z)

    def site(self, i: int) -> str:
        return _DECODE[((self.xbits >> i) & 1, (self.zbits >> i) & 1)]

    def __str__(self) -> str:
        return "".join(self.site(i) for i in range(self.n))


class WeightTriple(NamedTuple):
    mx: int
    my: int
    mz: int

    @property
    def total(self) -> int:
        return self.mx + self.my + self.mz


def _weight_of_bits(x: int, z: int) -> WeightTriple:
    return WeightTriple((x & ~z).bit_count(), (x & z).bit_count(), (z & ~x).bit_count())


def weight_of(ps: PauliString) -> WeightTriple:
    return _weight_of_bits(ps.xbits, ps.zbits)


def stabilizer_from_bits(g: Graph, ell: Sequence[int]) -> PauliString:
    """Pauli content of S_ell = prod_i g_i^{ell_i}, sign dropped.

    x bit i is ell_i; z bit j is the parity of ell over the neighbors of j.
    """
    if len(ell) != g.n:
        raise ValueError(f"bit vector has length {len(ell)}, graph has n={g.n}")
    x = z = 0
    masks = g.neighbor_masks
    for i, b in enumerate(ell):
        if b not in (0, 1):
            raise ValueError(f"bit vector entries must be 0/1, got {b!r} at {i}")
        if b:
            x |= 1 << i
            z ^= masks[i]
    return PauliString(g.n, x, z)


@dataclass
class WeightHistogram:
    """Counts N_F(mx, my, mz) of stabilizers by Pauli content."""

    n: int
    counts: dict[WeightTriple, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def check(self) -> None:
        if self.total != 2**self.n:
            raise ValueError(f"histogram sums to {self.total}, expected 2^{self.n}")
        if self.counts.get(WeightTriple(0, 0, 0), 0) < 1:
            raise ValueError("histogram is missing the identity stabilizer")

    def __add__(self, other: "WeightHistogram") -> "WeightHistogram":
        if other.n != self.n:
            raise ValueError("cannot merge histograms of different sizes")
        merged = dict(self.counts)
        for k, c in other.counts.items():
            merged[k] = merged.get(k, 0) + c
        return WeightHistogram(self.n, merged)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(triples as an (m, 3) int array, counts) in sorted key order."""
        keys = sorted(self.counts)
        trip = np.array(keys, dtype=np.int64).reshape(-1, 3)
        cnt = np.array([self.counts[k] for k in keys], dtype=np.float64)
        return trip, cnt

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mx", "my", "mz", "count"])
        for k in sorted(self.counts):
            w.writerow([*k, self.counts[k]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, n: int) -> "WeightHistogram":
        rows = csv.DictReader(io.StringIO(text))
        counts = {
            WeightTriple(int(r["mx"]), int(r["my"]), int(r["mz"])): int(r["count"]) for r in rows
        }
        return cls(n, counts)


def _gray(k: int) -> int:
    return k ^ (k >> 1)


def enumerate_weights(
    g: Graph, cap: int = ENUMERATION_CAP, start: int = 0, stop: int | None = None
) -> WeightHistogram:
    """Histogram of stabilizer weights over Gray-code indices [start, stop).

    Consecutive Gray codes differ in one generator, so each step updates the
    z bits with a single neighbor mask.  Disjoint index ranges can be merged
    with ``+``.
    """
    if g.n > cap:
        raise EnumerationCapError(
            f"n={g.n} exceeds the enumeration cap {cap} (2^n stabilizers); "
            "use the Monte Carlo solver for large graphs"
        )
    total = 1 << g.n
    stop = total if stop is None else stop
    if not 0 <= start <= stop <= total:
        raise ValueError(f"bad Gray-index range [{start}, {stop}) for n={g.n}")
    masks = g.neighbor_masks
    x = _gray(start)
    z = 0
    for i in range(g.n):
        if (x >> i) & 1:
            z ^= masks[i]
    counts: dict[tuple[int, int, int], int] = {}
    for k in range(start, stop):
        if k > start:
            # generator flipped between gray(k-1) and gray(k)
            i = (k & -k).bit_length() - 1
            x ^= 1 << i
            z ^= masks[i]
        key = ((x & ~z).bit_count(), (x & z).bit_count(), (z & ~x).bit_count())
        counts[key] = counts.get(key, 0) + 1
    return WeightHistogram(g.n, {WeightTriple(*k): c for k, c in counts.items()})


@dataclass(frozen=True)
class NoiseModel:
    """IID single-qubit Pauli channel with X/Y/Z error probabilities."""

    px: float
    py: float
    pz: float

    def __post_init__(self):
        for name in ("px", "py", "pz"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or math.isnan(v):
                raise ValueError(f"{name}={v} is not a probability")
        if self.p > 1.0 + 1e-12:
            raise ValueError(f"px + py + pz = {self.p} exceeds 1")

    @classmethod
    def depolarizing(cls, p: float) -> "NoiseModel":
        if not 0.0 <= p <= 0.75:
            raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
        return cls(p / 3, p / 3, p / 3)

    @property
    def p(self) -> float:
        return self.px + self.py + self.pz

    @property
    def is_depolarizing(self) -> bool:
        return self.px == self.py == self.pz


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def log_fidelity_from_counts(hist: WeightHistogram, noise: NoiseModel) -> float:
    """ln F with F = sum (1-p)^(n-m) px^mx py^my pz^mz N_F, summed in log space."""
    trip, cnt = hist.arrays()
    lp = np.array([_log(noise.px), _log(noise.py), _log(noise.pz)])
    l1 = _log(1.0 - noise.p)
    m = trip.sum(axis=1)
    with np.errstate(invalid="ignore"):
        # 0 * log(0) must read as log(1): a zero count of a forbidden Pauli
        terms = np.where(trip > 0, trip * lp, 0.0).sum(axis=1)
        terms = terms + np.where(hist.n - m > 0, (hist.n - m) * l1, 0.0) + np.log(cnt)
    return float(logsumexp(terms))


def fidelity_exact(g: Graph, noise: NoiseModel, cap: int = ENUMERATION_CAP) -> float:
    return math.exp(log_fidelity_from_counts(enumerate_weights(g, cap), noise))


def fidelity_complete_closed_form(n: int, p: float) -> float:
    """Fidelity of the n-qubit fully connected graph state under depolarizing noise."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 0.75:
        raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
    a = 2.0 * p / 3.0
    return 0.5 * ((1.0 - a) ** n + a**n + (1.0 - 2.0 * a) ** n)


def log_fidelity_complete_closed_form(n: int, p: float) -> float:
    """ln of fidelity_complete_closed_form, safe for large n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= p <= 0.75:
        raise ValueError(f"depolarizing strength must lie in [0, 3/4], got p={p}")
    a = 2.0 * p / 3.0
    terms = [n * _log(1.0 - a), n * _log(a), n * _log(1.0 - 2.0 * a)]
    return float(logsumexp(terms)) - math.log(2.0)


def iter_stabilizers(g: Graph) -> Iterable[PauliString]:
    """All 2^n stabilizers in Gray-code order (small graphs only)."""
    masks = g.neighbor_masks
    x = z = 0
    yield PauliString(g.n, 0, 0)
    for k in range(1, 1 << g.n):
        i = (k & -k).bit_length() - 1
        x ^= 1 << i
        z ^= masks[i]
        yield PauliString(g.n, x, z)
