"""Metropolis sampling of the mapped spin model and fidelity by thermodynamic
integration of the internal energy from beta = 0."""

from __future__ import annotations

import logging
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import _kernel
from .graphs import Graph
from .mapping import CouplingParams, coupling_from_noise, site_energy_table
from .stabilizer import NoiseModel

log = logging.getLogger(__name__)

RESYNC_SWEEPS = 1000
DRIFT_TOL = 1e-8
# proposals drawn per RNG block
_BLOCK_PROPOSALS = 1 << 20


class DriftError(RuntimeError):
    pass


class GridResolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class MCConfig:
    sweeps: int = 100_000
    burn_in: int = 20_000
    thin: int = 2
    seed: int = 0
    bins: int = 32
    max_doublings: int = 3
    hot_start: str = "auto"  # "auto" | "always" | "never"
    exchange: bool = True  # replica exchange along each beta grid

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.bins < 2 or self.sweeps < self.bins:
            raise ValueError(f"need sweeps >= bins >= 2, got sweeps={self.sweeps}, bins={self.bins}")
        if self.sweeps // self.thin < 2 * self.bins:
            raise ValueError("sweeps / thin must give at least two samples per bin")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.hot_start not in ("auto", "always", "never"):
            raise ValueError(f"hot_start must be auto, always or never, got {self.hot_start!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass(frozen=True)
class ObservableEstimate:
    mean: float
    std_error: float
    n_samples: int


def make_rng(seed: int, stream: Sequence[int]) -> np.random.Generator:
    """Philox generator for one chain; ``stream`` is e.g. (grid index, chain id)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


class Chain:
    """One Markov chain with exclusive mutable state."""

    def __init__(self, g: Graph, cp: CouplingParams, rng: np.random.Generator, start: str = "cold"):
        if not (math.isfinite(cp.beta) and cp.beta >= 0):
            raise ValueError(f"Monte Carlo needs a finite beta >= 0, got {cp.beta}")
        self.g = g
        self.start = start
        self.beta = float(cp.beta)
        self.offsets, self.idx = g.csr
        self.table = site_energy_table(cp)
        self.rng = rng
        if start == "cold":
            self.up = np.zeros(g.n, dtype=np.uint8)
        elif start == "hot":
            self.up = rng.integers(0, 2, size=g.n, dtype=np.uint8)
        else:
            raise ValueError(f"start must be 'cold' or 'hot', got {start!r}")
        self.par = _kernel.parities(self.up, self.offsets, self.idx)
        self.energy = float(_kernel.total_energy(self.up, self.par, self.table))
        self.proposals = 0
        self.accepted = 0
        self._since_sync = 0

    def _block_sweeps(self) -> int:
        return max(1, _BLOCK_PROPOSALS // self.g.n)

    def resync(self) -> None:
        full = float(_kernel.total_energy(self.up, self.par, self.table))
        if abs(full - self.energy) > DRIFT_TOL * max(1.0, abs(full)):
            raise DriftError(f"incremental energy {self.energy} drifted from recomputed {full}")
        self.energy = full

    def run(self, sweeps: int, thin: int = 1, record: bool = False) -> np.ndarray:
        """Advance ``sweeps`` sweeps; return energies every ``thin`` sweeps if ``record``."""
        n = self.g.n
        out = np.empty(sweeps // thin if record else 0)
        pos = 0
        done = 0
        block = self._block_sweeps()
        while done < sweeps:
            m = min(block, sweeps - done, RESYNC_SWEEPS - self._since_sync)
            sites = self.rng.integers(0, n, size=m * n)
            uniforms = self.rng.random(m * n)
            self.energy, acc, pos = _kernel.metropolis_block(
                self.up, self.par, self.offsets, self.idx, self.table, self.beta,
                sites, uniforms, m, done, thin, self.energy,
                out if record else out[:0], pos,
            )
            self.accepted += acc
            self.proposals += m * n
            done += m
            self._since_sync += m
            if self._since_sync >= RESYNC_SWEEPS:
                self.resync()
                self._since_sync = 0
        return out[:pos]


@dataclass(frozen=True)
class ChainResult:
    samples: np.ndarray
    acceptance: float
    burn_in: int
    converged: bool
    start: str


def _bin_means(samples: np.ndarray, bins: int) -> np.ndarray:
    m = len(samples) // bins
    return samples[: m * bins].reshape(bins, m).mean(axis=1)


def _mean_and_error(samples: np.ndarray, bins: int) -> tuple[float, float]:
    bm = _bin_means(samples, bins)
    return float(bm.mean()), float(bm.std(ddof=1) / math.sqrt(bins))


def halves_agree(samples: np.ndarray, bins: int, nsigma: float = 2.0) -> bool:
    h = len(samples) // 2
    hb = max(2, bins // 2)
    if h < 2 * hb:
        return True
    ma, sa = _mean_and_error(samples[:h], hb)
    mb, sb = _mean_and_error(samples[h : 2 * h], hb)
    return abs(ma - mb) <= nsigma * math.hypot(sa, sb)


def _measure(chain: Chain, mc: MCConfig, discarded: int) -> ChainResult:
    """Measure with burn-in doubling until the two half-chains agree."""
    burn = max(mc.burn_in, 1)
    for attempt in range(mc.max_doublings + 1):
        if discarded < burn:
            chain.run(burn - discarded)
            discarded = burn
        samples = chain.run(mc.sweeps, mc.thin, record=True)
        ok = halves_agree(samples, mc.bins)
        if ok or attempt == mc.max_doublings:
            break
        discarded += mc.sweeps
        burn *= 2
    return ChainResult(samples, chain.accepted / max(chain.proposals, 1), discarded, ok, chain.start)


def run_chain(
    g: Graph, cp: CouplingParams, mc: MCConfig, stream: Sequence[int] = (0, 0), start: str = "cold"
) -> ChainResult:
    """Equilibrate one chain (burn-in doubling) and return its energy series."""
    chain = Chain(g, cp, make_rng(mc.seed, stream), start)
    return _measure(chain, mc, 0)


def estimate_observables(
    samples: np.ndarray, beta: float, bins: int = 32, resolution: float = 0.0
) -> tuple[ObservableEstimate, ObservableEstimate]:
    """Binned <E> and jackknifed C = beta^2 Var(E) from an energy series.

    A series that rarely moves says little about excursions it did not
    sample: with only a handful of events the binned error shrinks along with
    the observed count.  Errors are therefore never reported below
    ``resolution * bins / N`` for E and beta^2 resolution^2 bins / N for C,
    the smallest nonzero bin mean, with ``resolution`` the smallest energy
    quantum.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if bins < 2 or len(samples) < 2 * bins:
        raise ValueError(f"need at least {2 * bins} samples for {bins} bins, got {len(samples)}")
    m = len(samples) // bins
    x = samples[: m * bins].reshape(bins, m)
    mean, err = _mean_and_error(samples, bins)
    s1 = x.sum(axis=1)
    s2 = (x * x).sum(axis=1)
    total = m * bins
    # leave-one-bin-out variances
    loo_n = total - m
    loo_mean = (s1.sum() - s1) / loo_n
    loo_var = np.maximum((s2.sum() - s2) / loo_n - loo_mean**2, 0.0)
    c_full = beta**2 * float(x.var())
    c_loo = beta**2 * loo_var
    c_err = math.sqrt((bins - 1) / bins * float(((c_loo - c_loo.mean()) ** 2).sum()))
    if resolution > 0:
        err = max(err, resolution * bins / total)
        c_err = max(c_err, beta**2 * resolution**2 * bins / total)
    return ObservableEstimate(mean, err, total), ObservableEstimate(c_full, c_err, total)


@dataclass(frozen=True)
class PointEstimate:
    """Cold- and hot-start branch estimates at one beta.

    When the two starts agree they are pooled and both branches hold the same
    numbers; ``metastable`` marks coexisting phases the chains did not mix.
    """

    beta: float
    cold_energy: ObservableEstimate
    cold_heat: ObservableEstimate
    hot_energy: ObservableEstimate
    hot_heat: ObservableEstimate
    metastable: bool
    converged: bool
    hot_run: bool
    # the measured cold-start energy series, kept for --dump-samples
    cold_samples: np.ndarray | None = field(default=None, repr=False, compare=False)


def _pool(a: ObservableEstimate, b: ObservableEstimate) -> ObservableEstimate:
    return ObservableEstimate(0.5 * (a.mean + b.mean), 0.5 * math.hypot(a.std_error, b.std_error),
                              a.n_samples + b.n_samples)


def _differ(a: ObservableEstimate, b: ObservableEstimate, nsigma: float) -> bool:
    return abs(a.mean - b.mean) > nsigma * math.hypot(a.std_error, b.std_error)


def _quantum(cp: CouplingParams) -> float:
    """Smallest nonzero site-energy magnitude."""
    js = [abs(j) for j in (cp.jx, cp.jy, cp.jz) if j != 0]
    return min(js) if js else 0.0


def _hot_probe(g, cp, mc, key):
    """Hot-start chain after burn-in and a short measured window."""
    chain = Chain(g, cp, make_rng(mc.seed, (*key, 1)), "hot")
    chain.run(mc.burn_in)
    window = max(mc.sweeps // 8, 2 * mc.bins * mc.thin)
    probe = chain.run(window, mc.thin, record=True)
    pm, ps = _mean_and_error(probe, mc.bins)
    return chain, ObservableEstimate(pm, ps, len(probe)), mc.burn_in + window


def _hot_full(g, cp, mc, key, memo) -> ChainResult:
    if "full" not in memo:
        if mc.hot_start == "always":
            chain, discarded = Chain(g, cp, make_rng(mc.seed, (*key, 1)), "hot"), 0
        else:
            chain, _, discarded = memo.pop("chain", None) or _hot_probe(g, cp, mc, key)
        memo["full"] = _measure(chain, mc, discarded)
    return memo["full"]


def sample_point(
    g: Graph,
    cp: CouplingParams,
    mc: MCConfig,
    key: Sequence[int] = (0,),
    cold_only: bool = False,
    cold: ChainResult | None = None,
    memo: dict | None = None,
) -> PointEstimate:
    """Cold-start estimate plus, where it matters, a hot-start one.

    In ``auto`` mode a short hot-start probe decides: if its energy is
    inconsistent with the cold chain, the hot chain is run to full length.
    ``cold`` supplies an already measured cold series (e.g. from a replica
    ladder); ``memo`` caches the hot-start work, which depends only on
    (graph, couplings, config, key).
    """
    if cold is None:
        cold = run_chain(g, cp, mc, (*key, 0), "cold")
    memo = {} if memo is None else memo
    ec, cc = estimate_observables(cold.samples, cp.beta, mc.bins, _quantum(cp))
    mode = "never" if cold_only or cp.beta == 0.0 else mc.hot_start
    hot_run = False
    if mode != "never":
        run_full = mode == "always"
        if not run_full:
            if "probe" not in memo:
                chain, memo["probe"], discarded = _hot_probe(g, cp, mc, key)
                memo["chain"] = (chain, memo["probe"], discarded)
            run_full = _differ(ec, memo["probe"], 4.0)
        if run_full:
            hot = _hot_full(g, cp, mc, key, memo)
            eh, ch = estimate_observables(hot.samples, cp.beta, mc.bins, _quantum(cp))
            hot_run = True
            if _differ(ec, eh, 3.0):
                return PointEstimate(cp.beta, ec, cc, eh, ch, True,
                                     cold.converged and hot.converged, True, cold.samples)
            ec, cc = _pool(ec, eh), _pool(cc, ch)
    return PointEstimate(cp.beta, ec, cc, ec, cc, False, cold.converged, hot_run, cold.samples)


# swap attempts between neighboring replicas happen after every segment of this many sweeps
EXCHANGE_SWEEPS = 2


def run_ladder(
    g: Graph, cps: Sequence[CouplingParams], mc: MCConfig, keys: Sequence[Sequence[int]],
    swap_key: Sequence[int], starts: Sequence[str] | None = None,
) -> list[ChainResult]:
    """Replicas at ascending betas with neighbor exchanges; every rung starts
    cold (all down) unless ``starts`` says "hot" for it.

    Rung i draws from stream ``keys[i] + (0,)``; a single-rung ladder is just
    ``run_chain``.  Configurations, not temperatures, move between rungs; a
    swap of rungs i, i+1 is accepted with probability
    min(1, exp((beta_i - beta_j)(E_i - E_j))).  Burn-in doubling applies to
    the whole ladder until every rung passes the half-chain test, at a
    Bonferroni-corrected threshold.
    """
    starts = ["cold"] * len(cps) if starts is None else list(starts)
    if len(cps) == 1:
        return [run_chain(g, cps[0], mc, (*keys[0], 0), starts[0])]
    betas = np.array([cp.beta for cp in cps], dtype=np.float64)
    if np.any(np.diff(betas) <= 0) or betas[0] < 0 or not np.all(np.isfinite(betas)):
        raise ValueError("ladder betas must be finite, >= 0 and strictly ascending")
    R, n = len(cps), g.n
    offsets, idx = g.csr
    table = site_energy_table(cps[0])
    rngs = [make_rng(mc.seed, (*k, 0)) for k in keys]
    swap_rng = make_rng(mc.seed, tuple(swap_key))
    seg = mc.thin * max(1, EXCHANGE_SWEEPS // mc.thin)
    up = np.zeros((R, n), dtype=np.uint8)
    for r, st in enumerate(starts):
        if st == "hot":
            up[r] = rngs[r].integers(0, 2, size=n, dtype=np.uint8)
        elif st != "cold":
            raise ValueError(f"start must be 'cold' or 'hot', got {st!r}")
    par = np.stack([_kernel.parities(u, offsets, idx) for u in up])
    energies = np.array([_kernel.total_energy(up[r], par[r], table) for r in range(R)])
    accepted = np.zeros(R, dtype=np.int64)
    state = {"parity": 0, "since": 0, "proposals": 0}
    # resync lands on segment boundaries
    sync_every = seg * max(1, RESYNC_SWEEPS // seg)

    def advance(sweeps, record):
        out = np.empty((R, sweeps // mc.thin if record else 0))
        pos = 0
        done = 0
        while done < sweeps:
            m = min(sync_every - state["since"], sweeps - done, max(seg, _BLOCK_PROPOSALS // (n * R)))
            m = max(seg, m - m % seg) if m > seg else m
            sites = np.stack([r.integers(0, n, size=m * n) for r in rngs])
            uniforms = np.stack([r.random(m * n) for r in rngs])
            swap_u = swap_rng.random((-(-m // seg), R))
            view = out[:, pos:] if record else out
            _, state["parity"] = _kernel.ladder_block(
                up, par, offsets, idx, table, betas, sites, uniforms, swap_u,
                m, seg, mc.thin, energies, accepted, view, 0, state["parity"])
            if record:
                pos += m // mc.thin
            done += m
            state["proposals"] += m * n
            state["since"] += m
            if state["since"] >= sync_every:
                for r in range(R):
                    full = float(_kernel.total_energy(up[r], par[r], table))
                    if abs(full - energies[r]) > DRIFT_TOL * max(1.0, abs(full)):
                        raise DriftError(f"rung {r}: incremental energy {energies[r]} drifted from {full}")
                    energies[r] = full
                state["since"] = 0
        return out[:, :pos]

    z = float(norm.isf(0.025 / R))
    burn = max(mc.burn_in, 1)
    discarded = 0
    for attempt in range(mc.max_doublings + 1):
        if discarded < burn:
            advance(burn - discarded, False)
            discarded = burn
        series = advance(mc.sweeps, True)
        ok = [halves_agree(s, mc.bins, z) for s in series]
        if all(ok) or attempt == mc.max_doublings:
            break
        discarded += mc.sweeps
        burn *= 2
    acc = accepted / max(state["proposals"], 1)
    return [ChainResult(series[r].copy(), float(acc[r]), discarded, ok[r], starts[r]) for r in range(R)]


def write_samples(path, samples: np.ndarray) -> None:
    """Raw series: little-endian uint64 count, then float64 values."""
    arr = np.ascontiguousarray(samples, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", arr.size))
        fh.write(arr.tobytes())


def read_samples(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ValueError(f"{path}: header promises {count} values, found {data.size}")
    return data.copy()


# ---------------------------------------------------------------------------
# thermodynamic integration

BASE_STEP = 0.1
MIN_STEP = 1e-4
MAX_REFINE_ROUNDS = 6


def _trapz_weights(x: np.ndarray) -> np.ndarray:
    """w with sum(w * y) = trapezoid integral of y over x."""
    h = np.diff(x)
    w = np.zeros(len(x))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _cumulative(x: np.ndarray, y: np.ndarray, err: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Running trapezoid integral from x[0] and its statistical error."""
    h = np.diff(x)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * h * (y[1:] + y[:-1]))])
    var = np.zeros(len(x))
    for k in range(1, len(x)):
        var[k] = float(np.sum((_trapz_weights(x[: k + 1]) * err[: k + 1]) ** 2))
    return cum, np.sqrt(var)


def _second_differences(x, y, err):
    """Second divided differences at interior nodes with their errors."""
    h0, h1 = x[1:-1] - x[:-2], x[2:] - x[1:-1]
    a = 2.0 / (h0 * (h0 + h1))
    b = -2.0 / (h0 * h1)
    c = 2.0 / (h1 * (h0 + h1))
    d2 = a * y[:-2] + b * y[1:-1] + c * y[2:]
    sd = np.sqrt((a * err[:-2]) ** 2 + (b * err[1:-1]) ** 2 + (c * err[2:]) ** 2)
    return d2, sd


def _intervals_to_refine(x, y, err, tol_density: float) -> list[int]:
    """Intervals whose trapezoid error (h^3 |y''| / 12) is significant and
    exceeds their share of the tolerance."""
    if len(x) < 3:
        return []
    d2, sd = _second_differences(x, y, err)
    signif = np.abs(d2) > 3.0 * sd
    curv = np.where(signif, np.abs(d2), 0.0)
    out = []
    for i in range(len(x) - 1):
        h = x[i + 1] - x[i]
        if h < 2 * MIN_STEP:
            continue
        near = [curv[k] for k in (i - 1, i) if 0 <= k < len(curv)]
        if near and h**3 * max(near) / 12.0 > tol_density * h:
            out.append(i)
    return out


def richardson_error(x: np.ndarray, y: np.ndarray, err: np.ndarray) -> tuple[float, float]:
    """(|I_full - I_half| / 3, statistical error of that difference) where
    I_half drops every other interior node."""
    keep = np.zeros(len(x), dtype=bool)
    keep[::2] = True
    keep[-1] = True
    wf = _trapz_weights(x)
    wh = np.zeros(len(x))
    wh[keep] = _trapz_weights(x[keep])
    diff = float(np.dot(wf - wh, y)) / 3.0
    sig = float(np.sqrt(np.sum(((wf - wh) * err) ** 2))) / 3.0
    return abs(diff), sig


@dataclass
class IntegrationGrid:
    """Energy nodes along beta from 0 and the reconstructed ln Z'(beta).

    ``log_z`` excludes the offset c; the fidelity is ln F = n ln(1-p) + ln Z'.
    """

    n: int
    betas: np.ndarray
    points: list[PointEstimate]
    log_z: np.ndarray
    log_z_err: np.ndarray
    energies: list[ObservableEstimate]
    heats: list[ObservableEstimate]
    ordered_weight: np.ndarray
    integration_error: float
    integration_error_sigma: float
    # branch integrals, kept for mixture evaluation between nodes
    log_z_hot: np.ndarray = field(repr=False, default=None)
    log_z_cold: np.ndarray = field(repr=False, default=None)

    @property
    def logZ0(self) -> float:
        return self.n * math.log(2.0)

    @property
    def metastable(self) -> np.ndarray:
        return np.array([pt.metastable for pt in self.points])

    def index_of(self, beta: float) -> int:
        k = int(np.argmin(np.abs(self.betas - beta)))
        if abs(self.betas[k] - beta) > 1e-12 * max(1.0, beta):
            raise KeyError(f"beta={beta} is not a node of the grid")
        return k


def _eval_node(args):
    g, cp, mc, key, cold_only = args
    return sample_point(g, cp, mc, key, cold_only)


def _node_key(group: int, beta: float) -> tuple[int, int]:
    # the float's bit pattern names the grid point, independent of evaluation order
    return group, struct.unpack("<Q", struct.pack("<d", float(beta)))[0]


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _mixture(pt: PointEstimate, lz_cold: float, lz_hot: float):
    """Equilibrium (E, C, w_ordered) of two coexisting phases."""
    w = 1.0 / (1.0 + math.exp(min(700.0, lz_hot - lz_cold)))
    ec, eh = pt.cold_energy.mean, pt.hot_energy.mean
    b2 = pt.beta**2
    var = (w * pt.cold_heat.mean + (1 - w) * pt.hot_heat.mean) / b2 + w * (1 - w) * (ec - eh) ** 2
    return w * ec + (1 - w) * eh, b2 * var, w


def integrate_energy(
    g: Graph,
    couplings: CouplingParams,
    target_betas: Sequence[float],
    mc: MCConfig,
    group: int = 0,
    workers: int = 1,
    tol_per_qubit: float = 1e-3,
) -> IntegrationGrid:
    """Sample <H> on an adaptive beta grid from 0 and integrate to ln Z'.

    Where cold and hot starts get stuck in different phases, each branch is
    integrated from its own exact anchor (ln Z' = n ln 2 at beta = 0 for the
    disordered branch, ln Z' -> 0 as beta -> infinity for the ordered one) and
    the two phases are combined with their Boltzmann weights.
    """
    targets = sorted({float(b) for b in target_betas})
    if any(b < 0 or not math.isfinite(b) for b in targets):
        raise ValueError("thermodynamic integration needs finite beta >= 0")
    top = max(targets + [0.0])
    base = np.arange(0.0, top, BASE_STEP) if top > 0 else np.array([0.0])
    nodes = sorted(set(np.round(base, 12).tolist()) | set(targets) | {0.0})

    cache: dict[float, PointEstimate] = {}
    memos: dict[float, dict] = {}

    def evaluate(betas, cold_only=False):
        todo = [b for b in betas if b not in cache]
        jobs = [(g, couplings.with_beta(b), mc, _node_key(group, b), cold_only) for b in todo]
        for b, pt in zip(todo, _map(_eval_node, jobs, workers)):
            cache[b] = pt

    def evaluate_ladder(betas):
        # the whole ladder is re-run whenever rungs are added
        cps = [couplings.with_beta(b) for b in betas]
        keys = [_node_key(group, b) for b in betas]
        tag = zlib.crc32(np.asarray(betas, dtype="<f8").tobytes())
        colds = run_ladder(g, cps, mc, keys, (group, len(betas), tag, 2))
        for b, cp, k, cold in zip(betas, cps, keys, colds):
            cache[b] = sample_point(g, cp, mc, k, cold=cold, memo=memos.setdefault(b, {}))

    run_nodes = evaluate_ladder if mc.exchange else evaluate
    tol = tol_per_qubit * g.n
    run_nodes(nodes)
    for _ in range(MAX_REFINE_ROUNDS):
        x = np.array(nodes)
        if len(x) < 3:
            break
        span = x[-1] - x[0]
        new = set()
        for branch in ("hot", "cold"):
            y = np.array([getattr(cache[b], f"{branch}_energy").mean for b in nodes])
            e = np.array([getattr(cache[b], f"{branch}_energy").std_error for b in nodes])
            for i in _intervals_to_refine(x, y, e, tol / span):
                new.add(round(0.5 * (x[i] + x[i + 1]), 12))
        if not new:
            break
        nodes = sorted(set(nodes) | new)
        run_nodes(nodes)

    x = np.array(nodes)
    pts = [cache[b] for b in nodes]
    eh = np.array([p.hot_energy.mean for p in pts])
    sh = np.array([p.hot_energy.std_error for p in pts])
    err, sig = richardson_error(x, eh, sh) if len(x) >= 3 else (0.0, 0.0)
    if err > tol + 3.0 * sig:
        raise GridResolutionError(
            f"trapezoid error estimate {err:.3g} exceeds tolerance {tol:.3g} on {g.descriptor}"
        )

    cum, cum_err = _cumulative(x, eh, sh)
    lz_hot = g.n * math.log(2.0) - cum
    log_z, log_z_err = lz_hot.copy(), cum_err.copy()
    energies = [p.hot_energy for p in pts]
    heats = [p.hot_heat for p in pts]
    weight = np.zeros(len(x))
    lz_cold = None

    if any(p.metastable for p in pts) and couplings.ferromagnetic:
        # extend the cold branch until the ordered phase has essentially no excitations
        gap = couplings.jx + min(g.degrees) * couplings.jz
        b = x[-1]
        ext = []
        while True:
            b = round(b + 0.25, 12)
            evaluate([b], cold_only=True)
            ext.append(b)
            if cache[b].cold_energy.mean < 1e-9 * g.n or b > x[-1] + 40:
                break
        xc = np.concatenate([x, ext])
        ec = np.array([cache[b].cold_energy.mean for b in xc])
        sc = np.array([cache[b].cold_energy.std_error for b in xc])
        tail = ec[-1] / gap
        rev, rev_err = _cumulative(xc[::-1], ec[::-1], sc[::-1])
        # integrating a reversed grid flips the sign of the trapezoid sum
        lz_cold = (tail - rev[::-1])[: len(x)]
        lzc_err = rev_err[::-1][: len(x)]
        for k, p in enumerate(pts):
            if p.metastable:
                e, c, w = _mixture(p, lz_cold[k], lz_hot[k])
                log_z[k] = np.logaddexp(lz_cold[k], lz_hot[k])
                log_z_err[k] = math.hypot(w * lzc_err[k], (1 - w) * cum_err[k])
                dw = w * (1 - w) * math.hypot(lzc_err[k], cum_err[k])
                se = math.sqrt((w * p.cold_energy.std_error) ** 2
                               + ((1 - w) * p.hot_energy.std_error) ** 2
                               + (dw * (p.cold_energy.mean - p.hot_energy.mean)) ** 2)
                sc_ = math.hypot(w * p.cold_heat.std_error, (1 - w) * p.hot_heat.std_error)
                ns = p.cold_energy.n_samples + p.hot_energy.n_samples
                energies[k] = ObservableEstimate(e, se, ns)
                heats[k] = ObservableEstimate(c, sc_, ns)
                weight[k] = w
            elif lz_cold[k] > lz_hot[k]:
                # ordered side of a hysteresis loop: the hot branch integrated the wrong phase
                log_z[k], log_z_err[k] = lz_cold[k], lzc_err[k]
                energies[k], heats[k] = p.cold_energy, p.cold_heat
                weight[k] = 1.0

    return IntegrationGrid(g.n, x, pts, log_z, log_z_err, energies, heats, weight,
                           err, sig, lz_hot, lz_cold)


def specific_heat_peak(grid: IntegrationGrid, resolution: int = 200) -> tuple[float, float, float]:
    """(beta, C, std error) at the specific-heat maximum.

    Node values are used as measured.  Between metastable nodes the two-phase
    mixture is also evaluated on a fine beta grid (branch energies, heats and
    the free-energy gap interpolated linearly), since its peak is narrower
    than the node spacing.
    """
    vals = [h.mean for h in grid.heats]
    k = int(np.argmax(vals))
    best = (float(grid.betas[k]), grid.heats[k].mean, grid.heats[k].std_error)
    if grid.log_z_cold is None:
        return best
    meta = grid.metastable
    for i in range(len(grid.betas) - 1):
        if not (meta[i] and meta[i + 1]):
            continue
        a, b = grid.points[i], grid.points[i + 1]
        gap_a = grid.log_z_cold[i] - grid.log_z_hot[i]
        gap_b = grid.log_z_cold[i + 1] - grid.log_z_hot[i + 1]
        if gap_a * gap_b > 0:
            continue
        for t in np.linspace(0.0, 1.0, resolution):
            mix = lambda u, v: (1 - t) * u + t * v  # noqa: E731
            beta = mix(a.beta, b.beta)
            pt = PointEstimate(
                beta,
                ObservableEstimate(mix(a.cold_energy.mean, b.cold_energy.mean), 0.0, 0),
                ObservableEstimate(mix(a.cold_heat.mean / a.beta**2, b.cold_heat.mean / b.beta**2) * beta**2, 0.0, 0),
                ObservableEstimate(mix(a.hot_energy.mean, b.hot_energy.mean), 0.0, 0),
                ObservableEstimate(mix(a.hot_heat.mean / a.beta**2, b.hot_heat.mean / b.beta**2) * beta**2, 0.0, 0),
                True, True, True,
            )
            _, c, w = _mixture(pt, mix(gap_a, gap_b), 0.0)
            if c > best[1]:
                # at the crossing the latent-heat term dominates; its error comes from the branch energies
                de = abs(pt.cold_energy.mean - pt.hot_energy.mean)
                sde = math.hypot(mix(a.cold_energy.std_error, b.cold_energy.std_error),
                                 mix(a.hot_energy.std_error, b.hot_energy.std_error))
                err = beta**2 * 2 * w * (1 - w) * de * sde
                err = math.hypot(err, mix(grid.heats[i].std_error, grid.heats[i + 1].std_error))
                best = (beta, c, err)
    return best


@dataclass
class MCSweepResult:
    rows: list
    grids: list[IntegrationGrid]
    # p of rows whose cold and hot starts settled in different phases
    metastable_p: list[float] = field(default_factory=list)


def _coupling_key(cp: CouplingParams) -> tuple[float, float, float]:
    return round(cp.jx, 12), round(cp.jy, 12), round(cp.jz, 12)


def mc_sweep(
    g: Graph,
    noise_grid: Sequence[NoiseModel | float],
    mc: MCConfig,
    workers: int = 1,
    dump_prefix: str | None = None,
) -> MCSweepResult:
    """MC rows for every noise model, sorted by p, plus the integration grids.

    Noise models sharing the same coupling ratios share one beta grid.
    """
    from .records import SweepRow

    noises = [NoiseModel.depolarizing(x) if not isinstance(x, NoiseModel) else x for x in noise_grid]
    rows: dict[int, SweepRow] = {}
    groups: dict[tuple, list[tuple[int, CouplingParams]]] = {}
    for i, nm in enumerate(noises):
        if nm.p == 0.0:
            rows[i] = SweepRow(0.0, math.inf, 1.0, 0.0, 0.0, 0.0, method="mc",
                               graph_descriptor=g.descriptor, seed=mc.seed)
            continue
        cp = coupling_from_noise(nm, g.n)
        if cp.beta < 0:
            raise ValueError(f"Monte Carlo needs beta >= 0; p={nm.p} gives beta={cp.beta:.6g}")
        groups.setdefault(_coupling_key(cp), []).append((i, cp))

    grids = []
    flagged = []
    for gid, key in enumerate(sorted(groups)):
        members = groups[key]
        cp0 = members[0][1]
        grid = integrate_energy(g, cp0, [cp.beta for _, cp in members], mc, gid, workers)
        grids.append(grid)
        if dump_prefix is not None:
            _dump_grid(grid, gid, dump_prefix)
        for i, cp in members:
            nm = noises[i]
            k = grid.index_of(cp.beta)
            if cp.beta == 0.0:
                # infinite temperature: Z' = 2^n exactly
                per = (1.0 - nm.p) * 2.0
                logf = g.n * math.log(per)
                err_f = 0.0
            else:
                logf = g.n * math.log1p(-nm.p) + float(grid.log_z[k])
                per = math.exp(logf / g.n)
                err_f = per * float(grid.log_z_err[k]) / g.n
            if grid.points[k].metastable:
                flagged.append(nm.p)
            e, c = grid.energies[k], grid.heats[k]
            rows[i] = SweepRow(nm.p, cp.beta, per, logf, e.mean / g.n, c.mean / g.n,
                               err_f, e.std_error / g.n, c.std_error / g.n,
                               "mc", g.descriptor, mc.seed)
    ordered = sorted(rows.values(), key=lambda r: r.p)
    return MCSweepResult(ordered, grids, sorted(flagged))


def fidelity_by_integration(
    g: Graph, noise_grid: Sequence[NoiseModel | float], mc: MCConfig, workers: int = 1
) -> list:
    """F^(1/n), E/n and C/n from Monte Carlo for each noise model (rows sorted by p)."""
    return mc_sweep(g, noise_grid, mc, workers).rows


def _dump_grid(grid: IntegrationGrid, gid: int, prefix: str) -> None:
    """Write the measured cold-start energy series of every beta node."""
    for k, pt in enumerate(grid.points):
        if pt.cold_samples is not None:
            write_samples(f"{prefix}.g{gid}.b{k:04d}.bin", pt.cold_samples)


@dataclass(frozen=True)
class ScanPoint:
    p: float
    beta: float
    energy: ObservableEstimate
    heat: ObservableEstimate


@dataclass
class PeakScan:
    """Replica-ladder scan of a p window (observables per system, not per qubit)."""

    n: int
    coarse: list[ScanPoint]
    fine: list[ScanPoint]

    @property
    def peak(self) -> ScanPoint:
        pts = self.fine or self.coarse
        return max(pts, key=lambda s: s.heat.mean)

    def energy_change(self, p_lo: float, p_hi: float) -> float:
        """Largest minus smallest E/n among scanned points with p in [p_lo, p_hi]."""
        es = [s.energy.mean for s in self.coarse + self.fine if p_lo <= s.p <= p_hi]
        return (max(es) - min(es)) / self.n if es else 0.0


def scan_ladder(
    g: Graph, noises: Sequence[NoiseModel | float], mc: MCConfig, group: int = 0,
    hot_below: float | None = None,
) -> list[ScanPoint]:
    """E and C at each noise model from one replica ladder (no integration).

    Rungs with beta < ``hot_below`` start from random configurations.
    """
    noises = [NoiseModel.depolarizing(x) if not isinstance(x, NoiseModel) else x for x in noises]
    cps = sorted((coupling_from_noise(nm, g.n) for nm in noises), key=lambda c: c.beta)
    keys = [_node_key(group, c.beta) for c in cps]
    tag = zlib.crc32(np.asarray([c.beta for c in cps], dtype="<f8").tobytes())
    starts = ["hot" if hot_below is not None and c.beta < hot_below else "cold" for c in cps]
    res = run_ladder(g, cps, mc, keys, (group, len(cps), tag, 2), starts)
    out = []
    for cp, r in zip(cps, res):
        e, c = estimate_observables(r.samples, cp.beta, mc.bins, _quantum(cp))
        out.append(ScanPoint(cp.p, cp.beta, e, c))
    return sorted(out, key=lambda s: s.p)


def scan_peak(
    g: Graph, p_lo: float, p_hi: float, mc: MCConfig, coarse: int = 33, fine: int = 17,
    half_width: float | None = None,
) -> PeakScan:
    """Locate the specific-heat maximum of depolarizing noise in [p_lo, p_hi].

    A coarse ladder finds the largest C; a fine ladder of ``fine`` rungs then
    spans +-``half_width`` (default two coarse spacings) around it, so that
    neighbor swaps can carry configurations across a latent-heat gap.  The
    fine ladder starts hot on the high-p side of the coarse maximum and cold
    on the other, so both phases are present from the start.
    """
    if not 0 < p_lo < p_hi < 0.75:
        raise ValueError(f"need 0 < p_lo < p_hi < 3/4, got [{p_lo}, {p_hi}]")
    ps = np.linspace(p_lo, p_hi, coarse)
    first = scan_ladder(g, ps, mc, group=0)
    if fine < 2:
        return PeakScan(g.n, first, [])
    top = max(first, key=lambda s: s.heat.mean)
    center = top.p
    hw = 2.0 * (ps[1] - ps[0]) if half_width is None else half_width
    lo, hi = max(center - hw, 1e-6), min(center + hw, 0.75 - 1e-6)
    second = scan_ladder(g, np.linspace(lo, hi, fine), mc, group=1, hot_below=top.beta)
    return PeakScan(g.n, first, second)
