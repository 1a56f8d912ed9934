import json
import math

import numpy as np
import pytest

from otcurv import mms_core as mc
from otcurv.cli import main


@pytest.fixture()
def line_files(tmp_path):
    M = 60
    xs = (np.arange(M) + 0.5) / M
    sp = mc.build_space(coords=xs, measure=np.full(M, 1 / M))
    space = tmp_path / "space.json"
    mc.dump_space(sp, space)
    w0 = np.zeros(M)
    w0[:15] = 1 / 15
    w1 = np.zeros(M)
    w1[45:] = 1 / 15
    mu0 = tmp_path / "mu0.json"
    mu0.write_text(json.dumps({"weights": w0.tolist()}))
    mu1 = tmp_path / "mu1.json"
    mu1.write_text(json.dumps({"weights": w1.tolist()}))
    return tmp_path, space, mu0, mu1


def test_distortion_prints_value(capsys):
    assert main(["distortion", "--K", "0", "--N", "3", "--t", "0.4", "--theta", "1"]) == 0
    assert capsys.readouterr().out.strip() == "0.4"
    assert main(["distortion", "--K", "1", "--N", "1", "--t", "0.5",
                 "--theta", str(math.pi), "--kind", "sigma"]) == 0
    assert capsys.readouterr().out.strip() == "inf"
    assert main(["distortion", "--K", "-1", "--N", "2", "--t", "0.5",
                 "--theta", "1", "--kind", "tau"]) == 0
    out = float(capsys.readouterr().out)
    assert out == pytest.approx(math.sqrt(0.5 * math.sinh(0.5) / math.sinh(1.0)))


def test_wasserstein_report(line_files, capsys):
    tmp, space, mu0, mu1 = line_files
    out = tmp / "report.csv"
    assert main(["wasserstein", "--space", str(space), "--mu0", str(mu0),
                 "--mu1", str(mu1), "--p", "2", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    assert any("seed" in h for h in header)
    cols = lines[len(header)].split(",")
    assert cols == ["cost", "W_p", "gap", "n_atoms"]
    vals = lines[len(header) + 1].split(",")
    assert float(vals[1]) == pytest.approx(0.75, abs=1e-12)
    assert out.with_suffix(".png").exists()


def test_hopflax_subcommand(line_files, tmp_path, capsys):
    tmp, space, mu0, mu1 = line_files
    field = tmp_path / "field.json"
    field.write_text(json.dumps({"values": [0.0] * 60}))
    out = tmp_path / "hl.csv"
    assert main(["hopflax", "--space", str(space), "--field", str(field),
                 "--t", "0.5", "--p", "2", "--out", str(out)]) == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert rows[0] == "point,value,D_plus,D_minus"
    assert all(float(r.split(",")[1]) == 0.0 for r in rows[1:])
    # negative time of a constant field is the constant
    field.write_text(json.dumps({"values": [2.5] * 60}))
    assert main(["hopflax", "--space", str(space), "--field", str(field),
                 "--t", "0.5", "--negative"]) == 0
    out_lines = capsys.readouterr().out.splitlines()
    assert all(float(l.split(",")[1]) == 2.5 for l in out_lines)


def test_hj_diagnose(line_files, tmp_path):
    tmp, space, mu0, mu1 = line_files
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"space": str(space), "mu0": str(mu0),
                                "mu1": str(mu1), "p": 2.0, "geodesic": 3}))
    out = tmp_path / "diag.csv"
    assert main(["hj-diagnose", "--plan", str(plan), "--grid", "5",
                 "--out", str(out)]) == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert rows[0].split(",") == ["t", "q_minus", "q_plus", "r_minus", "r_plus",
                                  "z", "margin_geomean", "margin_ode"]
    assert len(rows) == 6
    assert out.with_suffix(".png").exists()


def test_needle_subcommand(tmp_path):
    sp = mc.sample_disc(40, 8, 0.0, 1.0)
    space = tmp_path / "disc.json"
    mc.dump_space(sp, space)
    field = tmp_path / "u.json"
    field.write_text(json.dumps({
        "values": list(np.linalg.norm(sp.coords, axis=1))}))
    out = tmp_path / "rays.csv"
    assert main(["needle", "--space", str(space), "--u-from-field", str(field),
                 "--out", str(out), "--bins", "8"]) == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert rows[0].split(",") == ["ray_id", "arclength", "h_value", "q_weight"]
    assert len(rows) == 1 + 8 * 8     # 8 rays x 8 bins
    assert (tmp_path / "rays.remainder.csv").exists()


def test_cd_check_exit_codes(line_files, tmp_path):
    tmp, space, mu0, mu1 = line_files
    out = tmp_path / "cd.csv"
    assert main(["cd-check", "--space", str(space), "--mu0", str(mu0),
                 "--mu1", str(mu1), "--p", "2", "--K", "0", "--N", "1",
                 "--t-grid", "0.2,0.4,0.6,0.8", "--out", str(out)]) == 0
    assert main(["cd-check", "--space", str(space), "--mu0", str(mu0),
                 "--mu1", str(mu1), "--p", "2", "--K", "5", "--N", "1",
                 "--t-grid", "0.2,0.4,0.6,0.8", "--out", str(out)]) == 1


def test_ly_decompose(line_files, tmp_path):
    tmp, space, mu0, mu1 = line_files
    out = tmp_path / "ly.csv"
    assert main(["ly-decompose", "--space", str(space), "--mu0", str(mu0),
                 "--mu1", str(mu1), "--q", "2", "--K", "0", "--N", "2",
                 "--time-den", "15", "--out", str(out)]) == 0
    rows = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert rows[0].split(",") == ["geodesic_id", "t", "rho", "h", "z", "L", "Y",
                                  "margin_L_concavity", "margin_Y_cd"]
    assert out.with_suffix(".png").exists()


def test_radial_oracle_subcommand(capsys):
    assert main(["radial-oracle", "--n", "2", "--q", "2", "--quantity", "ratio",
                 "ell=0", "s=0.25", "t=0.75"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.6)


def test_missing_file_exit_2(capsys):
    code = main(["wasserstein", "--space", "/nonexistent/space.json",
                 "--mu0", "x", "--mu1", "y", "--out", "r.csv"])
    assert code == 2
    assert "/nonexistent/space.json" in capsys.readouterr().err


def test_byte_identical_reports(line_files, tmp_path):
    tmp, space, mu0, mu1 = line_files
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    for out in (out1, out2):
        assert main(["cd-check", "--space", str(space), "--mu0", str(mu0),
                     "--mu1", str(mu1), "--p", "2", "--K", "0", "--N", "1",
                     "--t-grid", "0.2,0.4,0.6,0.8", "--seed", "7",
                     "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
