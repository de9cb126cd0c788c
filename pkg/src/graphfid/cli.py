"""graphfid command line: sweep noise strength and write a CSV table.

Exit codes: 0 success, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .montecarlo import MCConfig
from .records import METHODS, format_csv, write_csv
from .sweep import GRAPHS, ConfigError, RunConfig, SolverError, run_sweep

EXIT_CONFIG = 2
EXIT_SOLVER = 3

_MC_KEYS = ("sweeps", "burn_in", "thin", "bins", "seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="graphfid",
        description="Fidelity of noisy graph states versus noise strength, one CSV row per grid point.",
        epilog="A --config file holds 'key = value' lines using the long flag names "
        "(e.g. 'p-min = 0.1'; px/py/pz take comma-separated lists). Flags override the file.",
    )
    g = ap.add_argument_group("graph")
    g.add_argument("--graph", choices=GRAPHS, help="graph family")
    g.add_argument("--n", type=int, help="qubits (1d-cluster, complete)")
    g.add_argument("--nx", type=int, help="lattice width (2d/3d)")
    g.add_argument("--ny", type=int, help="lattice height (2d/3d)")
    g.add_argument("--nz", type=int, help="number of stacked layers (3d)")
    g.add_argument("--d", type=int, help="vertex degree (2d: 3..8, 3d: 5..8)")

    s = ap.add_argument_group("solver")
    s.add_argument("--method", choices=METHODS, help="solver")
    s.add_argument("--p-min", type=float, help="smallest depolarizing strength (default 0.05)")
    s.add_argument("--p-max", type=float, help="largest depolarizing strength (default 0.74)")
    s.add_argument("--p-steps", type=int, help="grid points, linear in p (default 70)")
    s.add_argument("--px", type=float, action="append", help="X error probability; repeat for a list")
    s.add_argument("--py", type=float, action="append", help="Y error probability; repeat for a list")
    s.add_argument("--pz", type=float, action="append", help="Z error probability; repeat for a list")

    m = ap.add_argument_group("monte carlo")
    m.add_argument("--sweeps", type=int, help="measurement sweeps per chain (default 100000)")
    m.add_argument("--burn-in", type=int, help="discarded sweeps before measuring (default 20000)")
    m.add_argument("--thin", type=int, help="sweeps between recorded energies (default 2)")
    m.add_argument("--bins", type=int, help="bins for error analysis (default 32)")
    m.add_argument("--seed", type=int, help="64-bit RNG seed (default 0)")
    m.add_argument("--workers", type=int, help="worker processes (default 1; results do not depend on it)")
    m.add_argument("--dump-samples", metavar="PATH",
                   help="debug: write each beta node's cold-chain energy series to PATH.g<k>.b<i>.bin")

    o = ap.add_argument_group("io")
    o.add_argument("--output", metavar="PATH", help="CSV destination (default stdout)")
    o.add_argument("--config", metavar="PATH", help="key = value file with defaults for any flag")
    o.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def read_config_file(path: str | Path, ap: argparse.ArgumentParser) -> dict[str, object]:
    """Parse 'key = value' lines into argparse defaults (types as for the flags)."""
    actions = {a.dest: a for a in ap._actions if a.option_strings}
    out: dict[str, object] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        dest = key.strip().lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("config", "help"):
            raise ConfigError(f"{path}:{lineno}: unknown key {key.strip()!r}")
        act = actions[dest]
        value = value.strip()
        conv = act.type or str
        try:
            if isinstance(act, argparse._AppendAction):
                out[dest] = [conv(v) for v in value.split(",") if v.strip()]
            elif isinstance(act, argparse._StoreTrueAction):
                out[dest] = value.lower() in ("1", "true", "yes", "on")
            else:
                out[dest] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key.strip()}: {value!r}") from exc
        if act.choices is not None and out[dest] not in act.choices:
            raise ConfigError(f"{path}:{lineno}: {key.strip()} must be one of {', '.join(act.choices)}")
    return out


def parse_config(argv: list[str] | None = None) -> tuple[RunConfig, argparse.Namespace]:
    """Flags (and an optional config file) to a validated RunConfig."""
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        file_vals = read_config_file(args.config, ap)
        # flags given on the command line win over the file
        for key, value in file_vals.items():
            if getattr(args, key) is None or getattr(args, key) is False:
                setattr(args, key, value)
    if args.graph is None or args.method is None:
        raise ConfigError("--graph and --method are required (on the command line or in --config)")

    lists = [args.px, args.py, args.pz]
    noise: tuple = ()
    if any(v is not None for v in lists):
        if any(v is None for v in lists) or len({len(v) for v in lists}) != 1:
            raise ConfigError("--px, --py and --pz must be given the same number of times")
        if any(getattr(args, k) is not None for k in ("p_min", "p_max", "p_steps")):
            raise ConfigError("give either a depolarizing range (--p-min/--p-max/--p-steps) or --px/--py/--pz, not both")
        noise = tuple(zip(args.px, args.py, args.pz))

    mc_kw = {k: getattr(args, k) for k in _MC_KEYS if getattr(args, k) is not None}
    if mc_kw and args.method != "mc":
        raise ConfigError(f"--{', --'.join(k.replace('_', '-') for k in mc_kw)} only apply to --method mc")
    try:
        mc = MCConfig(**mc_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    kw = {k: getattr(args, k) for k in ("n", "nx", "ny", "nz", "d", "output", "dump_samples")}
    for k in ("p_min", "p_max", "p_steps", "workers"):
        if getattr(args, k) is not None:
            kw[k] = getattr(args, k)
    cfg = RunConfig(graph=args.graph, method=args.method, noise=noise, mc=mc, **kw)
    return cfg, args


def main(argv: list[str] | None = None) -> int:
    from .sweep import validate

    try:
        cfg, args = parse_config(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        validate(cfg)
    except ConfigError as exc:
        print(f"graphfid: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    t0 = time.perf_counter()
    try:
        rows, meta = run_sweep(cfg)
    except SolverError as exc:
        print(f"graphfid: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except Exception as exc:  # noqa: BLE001 - any solver failure maps to exit code 3
        print(f"graphfid: solver error ({cfg.method}): {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    # wall time stays out of the CSV so reruns are byte-identical
    print(f"graphfid: {len(rows)} rows in {time.perf_counter() - t0:.2f} s", file=sys.stderr)

    try:
        if cfg.output:
            write_csv(rows, meta, cfg.output)
        else:
            sys.stdout.write(format_csv(rows, meta))
    except OSError as exc:
        print(f"graphfid: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return 0


if __name__ == "__main__":
    sys.exit(main())
