"""Acceptance suite: every criterion at its stated tolerance, one pass/fail
line per criterion (run with -v to see them; each test prints its margin
summary as well)."""

import json
import math
import time

import numpy as np
import pytest

from otcurv import cdcheck as cd
from otcurv import changevar as cv
from otcurv import hopflax as hl
from otcurv import mms_core as mc
from otcurv import needle as nd
from otcurv import transport as tp
from otcurv.cli import main, run_radial_verification
from otcurv.distortion import DistortionParams, sigma
from otcurv.oracles import RadialOracle


@pytest.fixture(scope="module")
def radial_results():
    t0 = time.time()
    res = run_radial_verification(q=2.0, n_radial=50, n_angular=64, K=0.0, N=2.0)
    res["elapsed"] = time.time() - t0
    return res


@pytest.fixture(scope="module")
def line_pipeline():
    M = 60
    xs = (np.arange(M) + 0.5) / M
    sp = mc.build_space(coords=xs, measure=np.full(M, 1 / M))
    w0 = np.zeros(M)
    w0[:15] = 1 / 15
    w1 = np.zeros(M)
    w1[45:] = 1 / 15
    mu0, mu1 = mc.measure_on(sp, w0), mc.measure_on(sp, w1)
    plan, pot = tp.solve_wp(sp, mu0, mu1, 2.0)
    t_grid = [k / 15 for k in range(16)]
    family = hl.interpolating_potentials(sp, pot, t_grid)
    nu = tp.dynamical_plan(sp, plan, t_grid)
    ledger = cv.build_ledger(sp, nu, family, [5 / 15, 10 / 15])
    return sp, nu, family, ledger


def _report(name, ok, detail):
    line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def test_criterion_01_radial_end_to_end(radial_results):
    r = radial_results
    comparisons = {
        "W_q": r["W_err"],
        "phi_c": r["phi_c_err"],
        "rho_t": r["rho_err"],
        "Phi_s^t": r["Phi_err"],
        "h": r["h_err"],
        "density ratio": r["ratio_err"],
        "dPhi/dt = 2^q": r["dPhi_err"],
    }
    worst = max(comparisons.values())
    ok = worst <= 0.02 and r["elapsed"] <= 60.0
    detail = ", ".join(f"{k} {v:.3%}" for k, v in comparisons.items())
    _report("criterion 1 (radial end-to-end, <=2%, <=60s)",
            ok, detail + f", elapsed {r['elapsed']:.1f}s")


def test_criterion_02_transport_oracle_equivalence():
    rng = np.random.default_rng(42)
    t0 = time.time()
    worst_cost, worst_gap = 0.0, 0.0
    for inst in range(200):
        k = int(rng.integers(2, 7))
        pts = rng.normal(size=(2 * k, 2)) * 2.0
        sp = mc.build_space(coords=pts, measure=np.full(2 * k, 1 / (2 * k)))
        w0 = np.zeros(2 * k)
        w0[:k] = 1.0 / k
        w1 = np.zeros(2 * k)
        w1[k:] = 1.0 / k
        mu0, mu1 = mc.measure_on(sp, w0), mc.measure_on(sp, w1)
        p = (1.5, 2.0, 3.0)[inst % 3]
        plan, pot = tp.solve_wp(sp, mu0, mu1, p)
        bf = tp.brute_force_cost(sp, range(k), range(k, 2 * k), p)
        worst_cost = max(worst_cost, abs(plan.total_cost - bf))
        worst_gap = max(worst_gap, abs(pot.dual_gap))
    elapsed = time.time() - t0
    ok = worst_cost <= 1e-9 and worst_gap <= 1e-8 and elapsed <= 10.0
    _report("criterion 2 (200 brute-force instances)", ok,
            f"cost diff {worst_cost:.2e}, gap {worst_gap:.2e}, {elapsed:.2f}s")


def test_criterion_03_hopf_lax_derivative_law():
    n = 400
    xs = np.linspace(0, 10, n)
    sp = mc.build_space(coords=xs, measure=np.full(n, 1 / n))
    rng = np.random.default_rng(7)
    C = 80.0
    orders, max_err = [], {0.02: 0.0, 0.01: 0.0}
    bound_ok = True
    for trial in range(20):
        nodes = np.sort(rng.uniform(0, 10, 6))
        vals = rng.normal(size=6) * 2
        f = np.interp(xs, nodes, vals)
        for p in (1.5, 2.0, 3.0):
            x = int(rng.integers(50, 350))
            t = float(rng.uniform(0.3, 0.7))
            errs = []
            for h in (0.02, 0.01):
                chk = hl.time_derivative_check(sp, f, x, t, p, h=h)
                err = max(abs(chk["left"] - chk["predicted_left"]),
                          abs(chk["right"] - chk["predicted_right"]))
                errs.append(err)
                max_err[h] = max(max_err[h], err)
                bound_ok = bound_ok and err <= C * h
            if errs[0] > 1e-10:   # degenerate samples carry no order signal
                orders.append(math.log2(errs[0] / max(errs[1], 1e-17)))
    median_order = float(np.median(orders))
    ok = bound_ok and median_order >= 0.9 and len(orders) >= 40
    _report("criterion 3 (derivative law, order >= 0.9)", ok,
            f"median order {median_order:.3f}, max err {max_err[0.02]:.3f}/{max_err[0.01]:.3f}, "
            f"C h bound {C * 0.02:.2f}/{C * 0.01:.2f}")


def test_criterion_04_speed_sandwich(radial_results, line_pipeline):
    margins = [radial_results["speed_sandwich_margin"]]
    sp, nu, family, ledger = line_pipeline
    interior = [k for k, t in enumerate(family.t_grid) if 0 < t < 1]
    ts = family.t_grid[interior]
    ell = ledger.profile.ell()
    iu, ju = np.triu_indices(len(ts), k=1)
    for e in ledger.entries:
        ells = ell[interior, e.point_idx[interior]]
        ratio = ells[iu] / ells[ju]
        margins.append(float((ratio - (1 - ts[ju]) / (1 - ts[iu])).min()))
        margins.append(float((ts[ju] / ts[iu] - ratio).min()))
    ok = min(margins) >= -1e-6
    _report("criterion 4 (speed sandwich on every retained geodesic)", ok,
            f"min margin {min(margins):.2e}")


def test_criterion_05_density_checker_1d():
    worst = {}
    ok = True
    grid = (np.arange(256) + 0.5) / 256
    for n in (2, 3, 5):
        h = grid ** (n - 1)
        for N in (float(n), float(n + 1), float(2 * n)):
            rep = cd.check_density_1d(cd.density_profile(grid, h, 0.0, N), tol=1e-9)
            ok = ok and rep.verdict == "PASS"
        rep = cd.check_density_1d(cd.density_profile(grid, h, 0.0, n - 0.5), tol=1e-9)
        ok = ok and rep.verdict == "FAIL"
        worst[f"r^{n-1}"] = rep.min_margin
    for N in (2.0, 3.0):
        eps = 0.05
        g2 = np.linspace(-math.pi / 2 + eps, math.pi / 2 - eps, 256)
        h2 = np.cos(g2) ** (N - 1.0)
        rep = cd.check_density_1d(cd.density_profile(g2, h2, N - 1.0, N), tol=1e-4)
        ok = ok and rep.verdict == "PASS" and abs(rep.min_margin) <= 1e-4
        worst[f"cos^{N-1:g}"] = rep.min_margin
    _report("criterion 5 (1-D density checker ladders)", ok,
            ", ".join(f"{k}: {v:.2e}" for k, v in worst.items()))


def test_criterion_06_flat_space_cdp():
    M = 200
    xs = (np.arange(M) + 0.5) / M
    sp = mc.build_space(coords=xs, measure=np.full(M, 1 / M))
    w0 = np.zeros(M)
    w0[(xs > 0.0) & (xs < 0.25)] = 1.0 / 50
    w1 = np.zeros(M)
    w1[(xs > 0.75) & (xs < 1.0)] = 1.0 / 50
    mu0, mu1 = mc.measure_on(sp, w0), mc.measure_on(sp, w1)
    t_grid = [0.2, 0.4, 0.6, 0.8]
    ok = True
    details = []
    for p in (1.5, 2.0, 3.0):
        plan, _ = tp.solve_wp(sp, mu0, mu1, p)
        nu = tp.dynamical_plan(sp, plan, t_grid)
        rep = cd.check_cdp(sp, nu, mu0, mu1, 0.0, 1.0, [1.0, 2.0, 5.0, 10.0],
                           t_grid, tol=1e-9)
        rep5 = cd.check_cdp(sp, nu, mu0, mu1, 5.0, 1.0, [1.0, 2.0, 5.0, 10.0],
                            t_grid, tol=1e-9, plan_unique=True)
        ok = ok and rep.verdict == "PASS" and rep5.verdict == "FAIL" and rep5.witness
        details.append(f"p={p}: K=0 margin {rep.min_margin:.1e}, K=5 {rep5.verdict}")
    _report("criterion 6 (flat-line entropy convexity)", ok, "; ".join(details))


def test_criterion_07_change_of_variables(radial_results, line_pipeline):
    r = radial_results
    sp, nu, family, ledger = line_pipeline
    rep = cv.change_of_variables_residual(sp, ledger, 5 / 15, 10 / 15)
    tol_1d = 0.2 * (1.0 / sp.n + 1.0 / 15)
    ok = (r["cov_residual"] <= 0.02 and r["cov_skipped_fraction"] <= 0.05
          and rep["max_residual"] <= tol_1d and rep["skipped_fraction"] <= 0.05)
    _report("criterion 7 (change of variables)", ok,
            f"radial {r['cov_residual']:.3%} (skip {r['cov_skipped_fraction']:.1%}), "
            f"line {rep['max_residual']:.2e} <= {tol_1d:.2e}")


def test_criterion_08_ly_factorization(radial_results, line_pipeline):
    r = radial_results
    sp, nu, family, ledger = line_pipeline
    ok = (r["L_concavity_margin"] >= -1e-6 and r["LY_product_residual"] <= 1e-9
          and r["Y_cd_pass"])
    worst_line = math.inf
    for e in ledger.entries:
        z = cv.extract_z(e)
        ly = cv.ly_factorize(e, z["t"], z["z"], 0.0, 2.0, 2.0)
        ok = ok and ly.y_report.verdict == "PASS" and ly.product_residual <= 1e-9
        worst_line = min(worst_line, ly.concavity_margin / max(ly.concavity_scale, 1e-300))
    ok = ok and worst_line >= -1e-6
    # synthetic equality case: z solving the rearranged ODE makes L affine
    t = np.linspace(0.05, 0.95, 4001)
    z = 1.0 / (2.0 - t)
    entry = cv.GeodesicLedgerEntry(index=0, ell=1.0, t_grid=t,
                                   point_idx=np.zeros(len(t), dtype=int),
                                   rho=np.ones(len(t)))
    ly = cv.ly_factorize(entry, t, z, 0.0, 3.0, 2.0)
    d2 = np.abs(ly.L[2:] - 2 * ly.L[1:-1] + ly.L[:-2]).max()
    ok = ok and d2 <= 1e-6 * np.abs(ly.L).max()
    _report("criterion 8 (L.Y factorization)", ok,
            f"radial L margin {r['L_concavity_margin']:.2e}, product {r['LY_product_residual']:.1e}, "
            f"line L margin {worst_line:.2e}, synthetic |L''| {d2:.1e}")


def test_criterion_09_third_order(radial_results):
    r = radial_results
    ok = r["third_order_geomean_margin"] >= -1e-8
    # synthetic equality case of the slope ODE sits at zero margin
    p, ell, c0 = 3.0, 1.2, 2.0
    c = (p - 1.0) * ell ** p
    t = np.linspace(0.1, 0.9, 4001)
    z = c / (c0 - t)
    rep = hl.third_order_check(t, z, p, ell)
    ok = ok and rep["geomean_margin"] >= -1e-9 and rep["ode_margin_abs_max"] <= 1e-6
    _report("criterion 9 (third-order bounds)", ok,
            f"radial geomean margin {r['third_order_geomean_margin']:.2e}, "
            f"synthetic |ode margin| {rep['ode_margin_abs_max']:.1e}")


def test_criterion_10_cd_chain_and_scaling(radial_results, line_pipeline):
    r = radial_results
    ok = r["cd_chain_margin"] >= -1e-8
    sp, nu, family, ledger = line_pipeline
    for e in ledger.entries:
        rep = cv.cd_chain_verify(e, 0.0, 2.0, rho_end0=float(e.rho[0]),
                                 rho_end1=float(e.rho[-1]))
        ok = ok and rep.min_margin >= -1e-8
    # scaling identity over 10^4 random draws, exact to 1e-12
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(10_000):
        K = rng.uniform(-5.0, 5.0)
        NN = rng.uniform(0.5, 10.0)
        ell = rng.uniform(0.1, 3.0)
        tpar = rng.uniform(0.0, 1.0)
        theta = rng.uniform(0.0, 2.0)
        if K > 0 and theta * ell * math.sqrt(K / NN) > math.pi - 0.1:
            continue
        a = sigma(DistortionParams(K * ell ** 2, NN, tpar, theta))
        b = sigma(DistortionParams(K, NN, tpar, theta * ell))
        assert a.is_infinite == b.is_infinite
        if not a.is_infinite:
            worst = max(worst, abs(a.value - b.value))
    ok = ok and worst <= 1e-12
    _report("criterion 10 (per-geodesic chain + scaling identity)", ok,
            f"radial chain margin {r['cd_chain_margin']:.2e}, scaling diff {worst:.1e}")


def test_criterion_11_needle_reconstruction():
    # commensurate disc: rays hold 160 points, 5 cells per arclength bin
    sp = mc.sample_disc(163, 16, 0.0, 1.0)
    r = np.linalg.norm(sp.coords, axis=1)
    st = nd.build_transport_structure(sp, r)
    deco = nd.disintegrate(sp, nd.extract_rays(sp, st), n_bins=32)
    recon = nd.reconstruction_residual(sp, deco)
    ray = deco.rays[0]
    r_top = r[ray.indices[0]]
    edges_r = r_top - ray.bin_edges
    width = ray.bin_edges[1] - ray.bin_edges[0]
    total = edges_r[0] ** 2 - edges_r[-1] ** 2
    l1 = sum(abs(ray.h_bins[k] - (edges_r[k] ** 2 - edges_r[k + 1] ** 2) / total / width) * width
             for k in range(32))
    masses = []
    for n_radial in (64, 128, 256):
        sp2 = mc.sample_disc(n_radial, 16, 0.0, 1.0)
        st2 = nd.build_transport_structure(sp2, np.linalg.norm(sp2.coords, axis=1))
        masses.append(st2.branch_mass(sp2))
    ok = recon <= 1e-9 and l1 <= 0.01 and masses[0] > masses[1] > masses[2]
    _report("criterion 11 (needle reconstruction)", ok,
            f"bookkeeping {recon:.1e}, h=2r L1 error {l1:.3%}, "
            f"branch masses {masses[0]:.2e} > {masses[1]:.2e} > {masses[2]:.2e}")


def test_criterion_12_determinism(tmp_path):
    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / f"{name}.csv"
        code = main(["verify-all", "--n-radial", "20", "--n-angular", "16",
                     "--time-den", "13", "--seed", "3", "--out", str(out)])
        outs.append((code, out.read_bytes()))
    ok = outs[0][1] == outs[1][1] and outs[0][0] == outs[1][0]
    _report("criterion 12 (byte-identical verify-all reruns)", ok,
            f"{len(outs[0][1])} bytes, exit {outs[0][0]}")
