"""Acceptance criteria, each at its stated tolerance.

The ladder runs go through ``cmd_suite`` exactly as the command line does.
Every test appends one PASS/FAIL line that is printed in the terminal summary.
"""

import math

import numpy as np
import pytest

from willmore_lab.cli import cmd_suite
from willmore_lab.config import load_config
from willmore_lab.functionals import evaluate
from willmore_lab.sphere import make_grid
from willmore_lab.suite import fit_rates
from willmore_lab.surface import Surface, geometry, simons_residual, sup_norm

from conftest import SKEWED_PHI, acceptance_line, ellipsoid

pytestmark = pytest.mark.acceptance

SKEWED = "{" + ", ".join(f'"{",".join(map(str, k))}": {v}' for k, v in SKEWED_PHI.items()) + "}"


@pytest.fixture(scope="module")
def morse_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("morse")
    cfg = load_config(None, [f"output={out}"])
    res = cmd_suite(cfg, jobs=1)
    return out, res["records"]


@pytest.fixture(scope="module")
def skewed_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("skewed")
    cfg = load_config(None, [f"output={out}", f"metric.phi={SKEWED}"])
    res = cmd_suite(cfg, jobs=1)
    return out, res["records"]


def _fits(records):
    return {f.name: f for f in fit_rates(records)}


def test_c1_flat_exactness(flat, grid16):
    r = 0.3
    s = Surface.sphere([0.1, -0.05, 0.2], r, 16)
    rep = evaluate(flat, s, grid16)
    f = geometry(flat, s, grid16)
    errs = {
        "W": abs(rep.W - 4 * math.pi) / (4 * math.pi),
        "H": float(np.max(np.abs(f.H - 2 / r))) / (2 / r),
        "Acirc": sup_norm(f, f.Acirc),
        "lambda": abs(rep.lambda_opt),
        "el": rep.el_l2,
    }
    tol = {"W": 1e-8, "H": 1e-8, "Acirc": 1e-8, "lambda": 1e-10, "el": 1e-7}
    ok = all(errs[k] <= tol[k] for k in tol)
    acceptance_line("1 flat-space exactness", ok, ", ".join(f"{k} {v:.1e}<={tol[k]:.0e}" for k, v in errs.items()))
    assert ok, errs


def test_c2_space_form_oracle(sphere3, grid16):
    r = 0.2
    s = Surface.sphere(np.zeros(3), r, 16)
    rep = evaluate(sphere3, s, grid16)
    f = geometry(sphere3, s, grid16)
    errs = {
        "H": float(np.max(np.abs(f.H - 2 / math.tan(r)))),
        "area": abs(rep.area - 4 * math.pi * math.sin(r) ** 2),
        "lambda": abs(rep.lambda_opt + 2.0),
        "gb": abs(rep.gb_residual),
        "W+|V|": abs(rep.W + abs(rep.V) - 4 * math.pi),
    }
    ok = errs["gb"] <= 1e-7 and errs["W+|V|"] <= 1e-7 and max(errs["H"], errs["area"], errs["lambda"]) <= 1e-7
    acceptance_line("2 space-form oracle", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + " (tol 1e-7)")
    assert ok, errs


def test_c3_gauss_bonnet_on_suite_surfaces(morse_run, skewed_run):
    recs = [r for r in morse_run[1] + skewed_run[1] if r.ok]
    worst = max(abs(r.gb_residual) for r in recs)
    ok = worst <= 1e-6 and len(recs) > 0
    acceptance_line("3 Gauss-Bonnet residual", ok, f"max {worst:.1e} <= 1e-6 over {len(recs)} converged surfaces")
    assert ok


def test_c4_simons_refinement(flat):
    res = []
    for n in (16, 24):
        grid = make_grid(2 * n, 4 * n, n)
        res.append(simons_residual(flat, ellipsoid(grid, (0.3, 0.26, 0.22)), grid))
    factor = res[0] / res[1]
    ok = factor >= 4
    acceptance_line("4 Simons identity refinement", ok, f"L16 {res[0]:.2e} -> L24 {res[1]:.2e}, factor {factor:.3g} >= 4")
    assert ok


CRITERION5 = ("H_dev", "Acirc_linf", "Acirc_l2", "H2_dev", "gradH_omega", "Acirc_corr", "lambda_dev", "gradSc_p0", "dist_band", "dist_ratio")


def test_c5_rate_fits(morse_run, skewed_run):
    recs = morse_run[1]
    n_ok = sum(r.ok for r in recs)
    fits = _fits(recs)
    skew = _fits(skewed_run[1])
    parts, ok = [], n_ok >= 5
    for name in CRITERION5:
        f = fits[name]
        if f.status == "N/A":
            # vanishes identically on this metric: the rate is measured on the skewed ladder
            s = skew[name]
            good = s.status == "PASS"
            parts.append(f"{name} N/A (skewed {s.slope:.2f}/{s.exponent:g})")
        else:
            good = f.status == "PASS"
            parts.append(f"{name} {f.slope:.2f}/{f.exponent:g}")
        ok = ok and good
    acceptance_line("5 rate fits (slope/exponent)", ok, f"{n_ok} levels; " + ", ".join(parts))
    assert ok, [fits[n].to_dict() for n in CRITERION5]


def test_c6_center_of_mass_moments(morse_run, skewed_run):
    recs = [r for r in morse_run[1] if r.ok]
    worst = max(r.moment_g_rel for r in recs)
    fit = _fits(morse_run[1])["odd3_ratio"]
    skew = _fits(skewed_run[1])["odd3_ratio"]
    bounded = fit.status == "PASS" or (fit.status == "N/A" and skew.status == "PASS")
    ok = worst <= 1e-6 and bounded
    detail = (
        f"max |int y dmu_g|/area {worst:.1e} <= 1e-6; odd3 ratio {fit.status} on Morse, "
        f"skewed slope {skew.slope:.2f} constant {skew.constant:.2e}"
    )
    acceptance_line("6 centre-of-mass moments", ok, detail)
    assert ok


def test_c7_enclosed_critical_point(morse_run):
    recs = sorted(morse_run[1], key=lambda r: r.R)[:2]
    ok = all(r.ok and r.enclosed == "true" and r.margin >= r.R / 2 for r in recs)
    detail = ", ".join(f"level {r.level}: margin {r.margin / r.R:.3f} R" for r in recs)
    acceptance_line("7 enclosed critical point", ok, detail + " (need >= 0.5 R)")
    assert ok


def test_c8_determinism(morse_run, tmp_path):
    first = (morse_run[0] / "records.csv").read_bytes()
    cfg = load_config(None, [f"output={tmp_path}"])
    cmd_suite(cfg, jobs=2)
    second = (tmp_path / "records.csv").read_bytes()
    ok = first == second
    acceptance_line("8 determinism", ok, f"records.csv byte-identical across runs (jobs 1 vs 2, {len(first)} bytes)")
    assert ok
