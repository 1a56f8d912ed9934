import math
from itertools import permutations

import numpy as np
import pytest

from otcurv import mms_core as mc
from otcurv.oracles import LineBlocks, RadialOracle, radial_eval, unit_sphere_area


def test_sphere_areas():
    assert unit_sphere_area(2) == pytest.approx(2 * math.pi)
    assert unit_sphere_area(3) == pytest.approx(4 * math.pi)


def test_radial_quantities():
    o = RadialOracle(2, 2.0)
    assert radial_eval(o, "ratio", ell=0.0, s=0.25, t=0.75) == pytest.approx(0.6)
    assert radial_eval(o, "Phi", r=2.0, s=0.5, t=0.5) == pytest.approx(-3.0)
    assert radial_eval(o, "h", n=3, ell=0.0, s=0.5, t=0.5) == pytest.approx(1.0)
    assert radial_eval(o, "dPhi_dt") == pytest.approx(4.0)
    assert radial_eval(o, "T", r=1.0) == pytest.approx(3.0)
    assert radial_eval(o, "W") == pytest.approx(2.0)


def test_radial_eval_errors():
    o = RadialOracle(2, 2.0)
    with pytest.raises(ValueError, match="unknown quantity"):
        radial_eval(o, "nope")
    with pytest.raises(ValueError, match="missing argument"):
        radial_eval(o, "ratio", s=0.1, t=0.2)
    with pytest.raises(ValueError, match="outside"):
        radial_eval(o, "ratio", ell=0.0, s=0.1, t=1.7)


def test_radial_potential_pair_is_tight_on_the_map():
    # phi(x) + phi_c(T x) = d(x, Tx)^q / q on the source annulus
    for q in (1.5, 2.0, 3.0):
        o = RadialOracle(2, q)
        for r in np.linspace(1.0, 2.0, 9):
            lhs = o.phi(r) + o.phi_c(r + 2.0)
            assert lhs == pytest.approx(2.0 ** q / q, rel=1e-12)


def test_radial_potential_feasible_everywhere():
    # phi(x) + phi_c(y) <= |x-y|^q / q for radial pairs (both signs of alignment)
    for q in (1.5, 2.0, 3.0):
        o = RadialOracle(2, q)
        for rx in np.linspace(0.1, 5.0, 21):
            for ry in np.linspace(0.1, 5.0, 21):
                bound = abs(rx - ry) ** q / q
                assert o.phi(rx) + o.phi_c(ry) <= bound + 1e-12


def test_radial_phi_t_matches_hopf_lax_definition():
    # brute-force the infimum defining the interpolating potential on a fine
    # 1-D radial grid and compare with the closed form
    q = 2.0
    o = RadialOracle(2, q)
    ys = np.linspace(0.0, 8.0, 16001)
    phi_y = -(2 ** (q - 1)) * ys
    for t in (0.3, 0.5):
        for r in (0.4, 1.0, 2.0, 3.0):
            val = -np.min(np.abs(r - ys) ** q / (q * t ** (q - 1.0)) - phi_y)
            assert val == pytest.approx(o.phi_t(r, t), abs=5e-7)
    # the quoted spot value: q=2, t=1/2, |x|=2 on the outer branch
    assert o.phi_t(2.0, 0.5) == pytest.approx(-3.0)


def test_radial_density_self_consistency():
    # rho_t integrates to 1 over the time-t annulus by cell quadrature
    o = RadialOracle(2, 2.0)
    t = 0.4
    n_cells = 4000
    edges = np.linspace(1 + 2 * t, 2 + 2 * t, n_cells + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    widths = np.diff(edges)
    # rho_t at gamma_t with |gamma_0| = r - 2t; area element 2 pi r dr
    total = sum(o.rho_t(r - 2 * t, t) * 2 * math.pi * r * w for r, w in zip(mids, widths))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_radial_change_of_variables_identity():
    # dPhi / ell^q / h  ==  density ratio, all in closed form
    for n in (2, 3):
        o = RadialOracle(n, 2.0)
        for ell in (0.0, 0.5, 1.0):
            for s, t in [(0.25, 0.75), (0.4, 0.6)]:
                lhs = o.density_ratio(ell, s, t)
                rhs = (o.propagated_potential_rate() / 2.0 ** o.q
                       / o.conditional_density(ell, s, t))
                assert lhs == pytest.approx(rhs, rel=1e-12)


def test_line_blocks_translation_and_expansion():
    tr = LineBlocks(0.0, 1.0, 2.0, 1.0)
    assert tr.density_t(1.5, 0.5) == pytest.approx(1.0)
    assert tr.support_t(0.5) == (1.0, 2.0)
    ex = LineBlocks(0.0, 1.0, 0.0, 2.0)
    assert ex.density_t(0.7, 0.5) == pytest.approx(2.0 / 3.0)
    assert ex.support_t(0.5) == (0.0, 1.5)
    assert ex.density_t(0.2, 0.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        LineBlocks(0.0, 0.0, 1.0, 1.0)


def test_monotone_plan_is_brute_force_optimal_on_line():
    rng = np.random.default_rng(5)
    for trial in range(12):
        k = int(rng.integers(2, 7))
        xs = np.sort(rng.uniform(0, 1, k))
        ys = np.sort(rng.uniform(2, 3, k))
        for p in (1.5, 2.0, 3.0):
            mono = sum(abs(xs[i] - ys[i]) ** p for i in range(k))
            best = min(
                sum(abs(xs[i] - ys[perm[i]]) ** p for i in range(k))
                for perm in permutations(range(k))
            )
            assert mono == pytest.approx(best, abs=1e-12)
