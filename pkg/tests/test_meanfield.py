import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfid.graphs import build_2d_regular, build_ring
from graphfid.mapping import depolarizing_beta
from graphfid.meanfield import (
    locate_mf_singularity,
    mf_coefficients,
    mf_energy_per_qubit,
    mf_fidelity,
    self_consistent_roots,
    solve_self_consistent,
)
from graphfid.stabilizer import NoiseModel, fidelity_exact
from graphfid.transfer import fidelity_1d

P_GRID = [round(0.05 * k, 2) for k in range(1, 15)]


def test_coefficients_fully_down():
    assert mf_coefficients(4, -1.0)[0] == pytest.approx(2.5)


def test_coefficients_zero_magnetization():
    for k in (2, 4, 6):
        assert mf_coefficients(k, 0.0) == (0.25, 0.75)


def test_coefficients_fully_up():
    b, d = mf_coefficients(4, 1.0)
    assert b == pytest.approx(0.5) and d == pytest.approx(0.5)


def test_unsupported_degree():
    with pytest.raises(ValueError):
        mf_coefficients(3, 0.1)


@settings(max_examples=60, deadline=None)
@given(k=st.sampled_from([2, 4, 6]), p=st.floats(0.005, 0.745))
def test_roots_are_self_consistent(k, p):
    beta = depolarizing_beta(p)
    for s in self_consistent_roots(k, beta):
        assert abs(s) <= 1.0
        assert abs(s + math.tanh(beta * mf_coefficients(k, s)[0])) < 1e-10


@pytest.mark.parametrize("k", [2, 4, 6])
def test_selected_branch_minimizes(k):
    for p in np.linspace(0.3, 0.7, 41):
        beta = depolarizing_beta(float(p))
        sol = solve_self_consistent(k, beta)
        for s in sol.roots:
            b, d = mf_coefficients(k, s)
            f = d - math.log(2 * math.cosh(beta * b)) / beta
            assert sol.free_energy <= f + 1e-12


def test_low_noise_ground_state():
    for k in (2, 4, 6):
        assert solve_self_consistent(k, depolarizing_beta(1e-4)).magnetization == pytest.approx(-1.0, abs=1e-6)


def _magnetization_jumps(k):
    ps = np.linspace(0.01, 0.74, 500)
    m = np.array([solve_self_consistent(k, depolarizing_beta(float(p))).magnetization for p in ps])
    return int(np.sum(np.abs(np.diff(m)) > 0.2))


def test_jump_counts():
    assert _magnetization_jumps(2) == 0
    assert _magnetization_jumps(4) == 1
    assert _magnetization_jumps(6) == 1


def test_singularity_locations():
    assert locate_mf_singularity(2) is None
    assert locate_mf_singularity(4) == pytest.approx(0.538, abs=0.002)
    assert locate_mf_singularity(6) == pytest.approx(0.535, abs=0.002)


def test_fidelity_above_transition_by_definition():
    k, p = 6, 0.6
    beta = depolarizing_beta(p)
    roots = self_consistent_roots(k, beta)
    best = None
    for s in roots:
        b = 0.25 - 0.25 * k * s ** (k - 1) + 0.25 * (k + 1) * s**k
        d = 0.75 + 0.25 * (k - 1) * s**k - 0.25 * k * s ** (k + 1)
        f = (1 - p) * math.exp(-beta * d) * 2 * math.cosh(beta * b)
        best = f if best is None else max(best, f)
    assert mf_fidelity(k, p) == pytest.approx(best, rel=1e-10)


@pytest.mark.parametrize("k", [4, 6])
def test_linear_below_transition(k):
    ps = np.linspace(0.02, 0.4, 20)
    f = np.array([mf_fidelity(k, float(p)) for p in ps])
    assert np.max(np.abs(f - (1 - ps))) < 0.01


def test_endpoints():
    for k in (2, 4, 6):
        assert mf_fidelity(k, 0.0) == 1.0
        assert mf_fidelity(k, 0.75) == 0.5


@pytest.mark.parametrize("g,k", [(build_ring(4), 2), (build_ring(8), 2), (build_ring(12), 2),
                                 (build_2d_regular(4, 3, 3), 4), (build_2d_regular(4, 3, 4), 4)],
                         ids=lambda x: getattr(x, "descriptor", str(x)))
def test_lower_bound_exact(g, k):
    for p in P_GRID:
        ex = fidelity_exact(g, NoiseModel.depolarizing(p)) ** (1 / g.n)
        assert mf_fidelity(k, p) <= ex + 1e-9


def test_lower_bound_transfer():
    for p in np.linspace(0.01, 0.74, 74):
        assert mf_fidelity(2, float(p)) <= fidelity_1d(1000, float(p)).per_qubit + 1e-9


def test_energy_at_solution():
    sol = solve_self_consistent(4, depolarizing_beta(0.7))
    assert mf_energy_per_qubit(sol) == pytest.approx(sol.D + sol.B * sol.magnetization)
    assert 0 < mf_energy_per_qubit(sol) <= 0.75 + 1e-12
