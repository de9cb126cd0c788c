import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfid import cli
from graphfid.records import FIELDS, SweepRow, format_csv, parse_csv, read_csv, write_csv
from graphfid.sweep import ConfigError, RunConfig, run_sweep, validate


def _data_lines(text):
    return [ln for ln in text.splitlines() if ln and not ln.startswith("#")]


def test_empty_rows_give_header_and_metadata(tmp_path):
    write_csv([], {"graph": "complete"}, tmp_path / "e.csv")
    text = (tmp_path / "e.csv").read_text()
    assert text.splitlines() == ["# graph = complete", ",".join(FIELDS)]


def test_one_row_two_lines():
    text = format_csv([SweepRow(0.1, 2.0, 0.9, -1.0)], {})
    assert len(_data_lines(text)) == 2


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(p=st.floats(0, 0.75), beta=finite, f=st.floats(1e-300, 1), lf=finite,
       e=st.none() | finite, c=st.none() | finite, seed=st.none() | st.integers(0, 2**64 - 1))
def test_roundtrip(p, beta, f, lf, e, c, seed):
    row = SweepRow(p, beta, f, lf, e, c, 0.01, 0.0, 0.5, "mc", "2d-regular:d=6:16x16:periodic:triangular", seed)
    back, meta = parse_csv(format_csv([row], {"method": "mc", "n": 256}))
    assert meta == {"method": "mc", "n": "256"}
    (b,) = back
    for name in FIELDS:
        x, y = getattr(row, name), getattr(b, name)
        if isinstance(x, float):
            assert y == pytest.approx(x, rel=1e-12, abs=1e-300)
        else:
            assert x == y


def test_infinite_beta_roundtrip():
    (b,), _ = parse_csv(format_csv([SweepRow(0.0, math.inf, 1.0, 0.0)], {}))
    assert b.beta == math.inf


@pytest.mark.parametrize("argv", [
    "--graph 1d-cluster --n 1000 --method transfer --p-min 0.05 --p-max 0.74 --p-steps 70",
    "--graph 2d-regular --d 6 --nx 16 --ny 16 --method mc --seed 7",
])
def test_valid_configs(argv):
    cfg, _ = cli.parse_config(argv.split())
    validate(cfg)


@pytest.mark.parametrize("argv,match", [
    ("--graph 2d-regular --d 3 --nx 5 --ny 4 --method exact", "even"),
    ("--graph 2d-regular --d 4 --nx 4 --ny 4 --method transfer", "1d-cluster"),
    ("--graph 2d-regular --d 6 --nx 4 --ny 4 --method mf", "hypercubic"),
    ("--graph 1d-cluster --n 10 --method closed-form", "complete"),
    ("--graph 1d-cluster --n 30 --method exact", "cap"),
    ("--graph 1d-cluster --n 10 --method transfer --px 0.1 --py 0.1 --pz 0.1", "only accepted"),
    ("--graph 1d-cluster --n 10 --method exact --sweeps 100", "only apply"),
    ("--graph 1d-cluster --n 10 --method exact --px 0.1 --py 0.1", "same number"),
    ("--graph 1d-cluster --n 10 --method exact --p-max 0.9", "3/4"),
    ("--graph 3d-regular --d 4 --nx 4 --ny 4 --nz 4 --method mc", "5..8"),
    ("--graph 1d-cluster --method exact", "needs --n"),
    ("--graph 1d-cluster --n 10 --method transfer --dump-samples x", "mc"),
])
def test_config_errors(argv, match):
    with pytest.raises(ConfigError, match=match):
        cfg, _ = cli.parse_config(argv.split())
        validate(cfg)


def test_exit_codes(capsys):
    assert cli.main("--graph 2d-regular --d 3 --nx 5 --ny 4 --method exact".split()) == 2
    assert "configuration error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["--graph", "torus"])
    assert exc.value.code == 2
    assert cli.main("--graph complete --n 5 --method closed-form --p-steps 3".split()) == 0
    assert len(_data_lines(capsys.readouterr().out)) == 4


def test_solver_error_exit_code(monkeypatch, capsys):
    import graphfid.sweep as sweep

    def boom(*a, **k):
        raise ArithmeticError("no convergence")

    monkeypatch.setattr(sweep, "fidelity_1d", boom)
    assert cli.main("--graph 1d-cluster --n 10 --method transfer --p-steps 2".split()) == 3
    err = capsys.readouterr().err
    assert "solver error" in err and "no convergence" in err and "0.05" in err


def test_config_file_with_override(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# demo\ngraph = 1d-cluster\nn = 12\nmethod = exact\np-steps = 5\np-max = 0.5\n")
    cfg, _ = cli.parse_config(["--config", str(conf), "--n", "8"])
    assert (cfg.graph, cfg.n, cfg.p_steps, cfg.p_max) == ("1d-cluster", 8, 5, 0.5)


def test_config_file_noise_lists(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("graph = complete\nn = 4\nmethod = exact\npx = 0.1, 0.2\npy = 0.0, 0.1\npz = 0.05, 0.0\n")
    cfg, _ = cli.parse_config(["--config", str(conf)])
    assert cfg.noise == ((0.1, 0.0, 0.05), (0.2, 0.1, 0.0))


@pytest.mark.parametrize("text,match", [("graph = torus\n", "one of"), ("bogus = 1\n", "unknown key"),
                                        ("n = ten\n", "bad value"), ("n 10\n", "key = value")])
def test_config_file_errors(tmp_path, text, match):
    conf = tmp_path / "bad.conf"
    conf.write_text(text)
    with pytest.raises(ConfigError, match=match):
        cli.parse_config(["--config", str(conf), "--graph", "complete", "--method", "exact"])


def test_exact_ring_twenty_points():
    rows, meta = run_sweep(RunConfig("1d-cluster", "exact", n=10, p_min=0.0, p_max=0.75, p_steps=20))
    assert len(rows) == 20
    assert all(r.err_fidelity == r.err_energy == r.err_specific_heat == 0 for r in rows)
    assert rows[0].fidelity_per_qubit == 1.0 and rows[-1].fidelity_per_qubit == pytest.approx(0.5, abs=1e-12)
    assert meta["n"] == 10 and meta["method"] == "exact"


def test_closed_form_n50_recomputed():
    rows, _ = run_sweep(RunConfig("complete", "closed-form", n=50, p_steps=12))
    for r in rows:
        a = 2 * r.p / 3
        f = 0.5 * ((1 - a) ** 50 + a**50 + (1 - 2 * a) ** 50)
        assert r.fidelity_per_qubit == pytest.approx(f ** (1 / 50), rel=1e-12)


def test_row_invariants_all_methods():
    cfgs = [RunConfig("1d-cluster", m, n=8, p_steps=15) for m in ("exact", "spin-exact", "transfer", "mf")]
    cfgs.append(RunConfig("complete", "closed-form", n=6, p_steps=15))
    for cfg in cfgs:
        rows, _ = run_sweep(cfg)
        ps = [r.p for r in rows]
        assert ps == sorted(ps)
        for r in rows:
            assert 0 < r.fidelity_per_qubit <= 1
            n = 8 if cfg.graph == "1d-cluster" else 6
            assert abs(r.log_fidelity - n * math.log(r.fidelity_per_qubit)) < 1e-9


def test_general_noise_rows_and_flag():
    cfg = RunConfig("1d-cluster", "exact", n=6, noise=((0.0, 0.0, 0.0), (0.1, 0.0, 0.0), (0.05, 0.6, 0.05)))
    rows, meta = run_sweep(cfg)
    assert rows[0].fidelity_per_qubit == 1.0
    assert math.isnan(rows[1].beta) and rows[1].energy_per_qubit is None
    assert meta["negative_coupling_rows"] == "2"


def test_metadata_reconstructs_run():
    cfg, _ = cli.parse_config("--graph 2d-regular --d 4 --nx 3 --ny 4 --method mc --seed 5 --sweeps 640".split())
    meta = __import__("graphfid.sweep", fromlist=["metadata"]).metadata(cfg, validate(cfg))
    for key in ("graph", "d", "nx", "ny", "method", "p_min", "p_max", "p_steps", "mc_seed", "mc_sweeps",
                "mc_burn_in", "mc_thin", "mc_bins", "mc_exchange"):
        assert key in meta
    assert meta["mc_seed"] == 5 and meta["mc_sweeps"] == 640


def test_mc_rerun_is_byte_identical(tmp_path):
    argv = "--graph 1d-cluster --n 8 --method mc --seed 7 --sweeps 2000 --burn-in 200 --bins 16 --p-steps 4".split()
    assert cli.main(argv + ["--output", str(tmp_path / "a.csv")]) == 0
    assert cli.main(argv + ["--output", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows, meta = read_csv(tmp_path / "a.csv")
    assert len(rows) == 4 and meta["mc_seed"] == "7"
    assert meta["mc_metastable_p"] == "none"
