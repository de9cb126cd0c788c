"""Run configuration and dispatch of a p-sweep to one solver."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .graphs import Graph, build_2d_regular, build_3d_stack, build_complete, build_ring
from .mapping import coupling_from_noise, log_fidelity_from_histogram, spin_histogram, thermal_averages
from .meanfield import SUPPORTED_DEGREES, mf_energy_per_qubit, mf_fidelity, solve_self_consistent
from .montecarlo import MCConfig, mc_sweep
from .records import METHODS, SweepRow
from .stabilizer import (
    ENUMERATION_CAP,
    NoiseModel,
    enumerate_weights,
    log_fidelity_complete_closed_form,
    log_fidelity_from_counts,
)
from .transfer import fidelity_1d, observables_1d

GRAPHS = ("1d-cluster", "2d-regular", "3d-regular", "complete")
# methods that accept an explicit (px, py, pz) list
GENERAL_NOISE_METHODS = ("exact", "spin-exact", "mc")


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


class SolverError(RuntimeError):
    """A solver failed at some grid point (exit code 3)."""


@dataclass(frozen=True)
class RunConfig:
    graph: str
    method: str
    n: int | None = None
    nx: int | None = None
    ny: int | None = None
    nz: int | None = None
    d: int | None = None
    p_min: float = 0.05
    p_max: float = 0.74
    p_steps: int = 70
    noise: tuple[tuple[float, float, float], ...] = ()
    mc: MCConfig = field(default_factory=MCConfig)
    workers: int = 1
    output: str | None = None
    dump_samples: str | None = None

    def noise_models(self) -> list[NoiseModel]:
        if self.noise:
            return [NoiseModel(*t) for t in self.noise]
        ps = np.round(np.linspace(self.p_min, self.p_max, self.p_steps), 12)
        return [NoiseModel.depolarizing(float(p)) for p in ps]


def build_graph(cfg: RunConfig) -> Graph:
    def need(*names):
        missing = [f"--{x}" for x in names if getattr(cfg, x) is None]
        if missing:
            raise ConfigError(f"--graph {cfg.graph} needs {', '.join(missing)}")

    try:
        if cfg.graph == "1d-cluster":
            need("n")
            return build_ring(cfg.n)
        if cfg.graph == "2d-regular":
            need("d", "nx", "ny")
            return build_2d_regular(cfg.d, cfg.nx, cfg.ny)
        if cfg.graph == "3d-regular":
            need("d", "nx", "ny", "nz")
            if not 5 <= cfg.d <= 8:
                raise ConfigError(f"3d-regular needs --d in 5..8 (a 2D layer of degree d-2 plus stacking), got {cfg.d}")
            return build_3d_stack(cfg.d - 2, cfg.nx, cfg.ny, cfg.nz)
        if cfg.graph == "complete":
            need("n")
            return build_complete(cfg.n)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown graph {cfg.graph!r}; choose from {', '.join(GRAPHS)}")


def cluster_degree(cfg: RunConfig) -> int | None:
    """k = 2 * dimension for hypercubic cluster states, else None."""
    if cfg.graph == "1d-cluster":
        return 2
    if cfg.graph == "2d-regular" and cfg.d == 4:
        return 4
    if cfg.graph == "3d-regular" and cfg.d == 6:
        return 6
    return None


def validate(cfg: RunConfig) -> Graph:
    """Check every cross-field rule, then build the graph."""
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; choose from {', '.join(METHODS)}")
    if cfg.noise:
        if cfg.method not in GENERAL_NOISE_METHODS:
            raise ConfigError(f"--px/--py/--pz lists are only accepted by {', '.join(GENERAL_NOISE_METHODS)}")
    else:
        if not 0.0 <= cfg.p_min <= cfg.p_max <= 0.75:
            raise ConfigError(f"need 0 <= p-min <= p-max <= 3/4, got [{cfg.p_min}, {cfg.p_max}]")
        if cfg.p_steps < 1 or (cfg.p_steps == 1 and cfg.p_min != cfg.p_max):
            raise ConfigError(f"p-steps must be >= 1 (and > 1 for a nonzero range), got {cfg.p_steps}")
    try:
        cfg.noise_models()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    g = build_graph(cfg)
    if cfg.method == "transfer" and cfg.graph != "1d-cluster":
        raise ConfigError("method transfer needs --graph 1d-cluster")
    if cfg.method == "mf" and cluster_degree(cfg) not in SUPPORTED_DEGREES:
        raise ConfigError("method mf needs a hypercubic cluster graph: 1d-cluster, 2d-regular --d 4 or 3d-regular --d 6")
    if cfg.method == "closed-form" and cfg.graph != "complete":
        raise ConfigError("method closed-form needs --graph complete")
    if cfg.method in ("exact", "spin-exact") and g.n > ENUMERATION_CAP:
        raise ConfigError(f"method {cfg.method} enumerates 2^n terms; n={g.n} exceeds the cap n <= {ENUMERATION_CAP}")
    if cfg.dump_samples and cfg.method != "mc":
        raise ConfigError("--dump-samples only applies to --method mc")
    return g


def _beta(nm: NoiseModel, n: int) -> float:
    if nm.p == 0.0:
        return math.inf
    return coupling_from_noise(nm, n).beta


def _exact_rows(g: Graph, cfg: RunConfig, noises: list[NoiseModel]) -> list[SweepRow]:
    hist = enumerate_weights(g) if cfg.method == "exact" else spin_histogram(g)
    rows = []
    for nm in noises:
        with _at(cfg, nm):
            if cfg.method == "exact":
                logf = log_fidelity_from_counts(hist, nm)
            else:
                logf = log_fidelity_from_histogram(hist, nm)
            e = c = None
            beta = math.nan
            if nm.p == 0.0:
                e, c, beta = 0.0, 0.0, math.inf
            elif min(nm.px, nm.py, nm.pz) > 0 and nm.p < 1:
                cp = coupling_from_noise(nm, g.n)
                e, c = (v / g.n for v in thermal_averages(hist, cp))
                beta = cp.beta
            # otherwise the spin mapping is undefined; E and C stay empty
            rows.append(SweepRow(nm.p, beta, math.exp(logf / g.n), logf, e, c,
                                 method=cfg.method, graph_descriptor=g.descriptor))
    return rows


def _transfer_rows(g: Graph, cfg: RunConfig, noises: list[NoiseModel]) -> list[SweepRow]:
    rows = []
    for nm in noises:
        with _at(cfg, nm):
            fid = fidelity_1d(g.n, nm.p)
            obs = observables_1d(g.n, nm.p)
            rows.append(SweepRow(nm.p, _beta(nm, g.n), fid.per_qubit, fid.log_fidelity,
                                 obs.energy_per_qubit, obs.specific_heat_per_qubit,
                                 method="transfer", graph_descriptor=g.descriptor))
    return rows


def _mf_rows(g: Graph, cfg: RunConfig, noises: list[NoiseModel]) -> list[SweepRow]:
    k = cluster_degree(cfg)
    rows = []
    for nm in noises:
        with _at(cfg, nm):
            per = mf_fidelity(k, nm.p)
            if 0.0 < nm.p < 0.75:
                e = mf_energy_per_qubit(solve_self_consistent(k, _beta(nm, g.n)))
            else:
                e = 0.0 if nm.p == 0.0 else 0.75
            rows.append(SweepRow(nm.p, _beta(nm, g.n), per, g.n * math.log(per), e, None,
                                 method="mf", graph_descriptor=g.descriptor))
    return rows


def _closed_rows(g: Graph, cfg: RunConfig, noises: list[NoiseModel]) -> list[SweepRow]:
    rows = []
    for nm in noises:
        with _at(cfg, nm):
            logf = log_fidelity_complete_closed_form(g.n, nm.p)
            rows.append(SweepRow(nm.p, _beta(nm, g.n), math.exp(logf / g.n), logf, None, None,
                                 method="closed-form", graph_descriptor=g.descriptor))
    return rows


class _at:
    """Re-raise solver failures with the grid point and method attached."""

    def __init__(self, cfg: RunConfig, nm: NoiseModel | None = None):
        self.cfg, self.nm = cfg, nm

    def __enter__(self):
        return self

    def __exit__(self, typ, exc, tb):
        if exc is None or isinstance(exc, (SolverError, KeyboardInterrupt)):
            return False
        nm = self.nm
        where = "" if nm is None else f" at p = {nm.p:.6g}, (px, py, pz) = ({nm.px:.6g}, {nm.py:.6g}, {nm.pz:.6g})"
        raise SolverError(f"method {self.cfg.method}{where}: {type(exc).__name__}: {exc}") from exc


def metadata(cfg: RunConfig, g: Graph) -> dict[str, object]:
    """Preamble from which the run can be reconstructed."""
    meta: dict[str, object] = {
        "solver": f"graphfid {__version__}",
        "graph": cfg.graph,
        "graph_descriptor": g.descriptor,
        "n": g.n,
    }
    for key in ("nx", "ny", "nz", "d"):
        if getattr(cfg, key) is not None:
            meta[key] = getattr(cfg, key)
    meta["method"] = cfg.method
    if cfg.noise:
        meta["noise"] = ";".join(f"{a!r},{b!r},{c!r}" for a, b, c in cfg.noise)
        # p_mu > 1 - p makes a coupling negative; the all-down ground state no longer holds
        neg = [str(i) for i, nm in enumerate(cfg.noise_models()) if max(nm.px, nm.py, nm.pz) > 1.0 - nm.p]
        if neg:
            meta["negative_coupling_rows"] = ",".join(neg)
    else:
        meta["p_min"], meta["p_max"], meta["p_steps"] = cfg.p_min, cfg.p_max, cfg.p_steps
    if cfg.method == "mc":
        for key, value in asdict(cfg.mc).items():
            meta[f"mc_{key}"] = value
        meta["mc_integration"] = "trapezoid in beta from 0, adaptive, two-branch mixture where flagged"
    if cfg.method == "mf":
        meta["mf_degree"] = cluster_degree(cfg)
    return meta


def run_sweep(cfg: RunConfig) -> tuple[list[SweepRow], dict[str, object]]:
    """Rows for every grid point (sorted by p) and the metadata preamble."""
    g = validate(cfg)
    noises = cfg.noise_models()
    if cfg.method in ("exact", "spin-exact"):
        rows = _exact_rows(g, cfg, noises)
    elif cfg.method == "transfer":
        rows = _transfer_rows(g, cfg, noises)
    elif cfg.method == "mf":
        rows = _mf_rows(g, cfg, noises)
    elif cfg.method == "closed-form":
        rows = _closed_rows(g, cfg, noises)
    else:
        with _at(cfg):
            res = mc_sweep(g, noises, cfg.mc, cfg.workers, cfg.dump_samples)
        rows = res.rows
    rows = sorted(rows, key=lambda r: r.p)
    meta = metadata(cfg, g)
    if cfg.method == "mc":
        meta["mc_metastable_p"] = ",".join(repr(p) for p in res.metastable_p) or "none"
    return rows, meta
