"""Acceptance criteria, one test each. A PASS/FAIL line per criterion is printed at the end of the session."""

import csv
import json
import time

import numpy as np
import pytest

from oselab.cli import main
from oselab.cocycle import cocycle, constant_generator
from oselab.dynamics import CAT_MAP, circle_rotation, evaluate_map, sample_points, toral_automorphism
from oselab.lyapunov_norms import LyapunovNormField, LyapunovNormParams, d_epsilon, default_params
from oselab.oseledets import lyapunov_spectrum
from oselab.scenario import load_scenario
from oselab.subspaces import Subspace, gap, hausdorff_bracket

RESULTS = {}

CAT_RATE = np.log((3 + np.sqrt(5)) / 2)
DRIVER_RUNS = {
    "splitting_cat": ("splitting", "cat_coboundary"),
    "splitting_doubling": ("splitting", "doubling_coboundary"),
    "regular_set": ("regular-set", "cat_coboundary"),
    "verify_rotation": ("verify", "rotation_conjugated"),
    "verify_coboundary": ("verify", "cat_coboundary"),
    "filtration": ("filtration", "doubling_coboundary"),
    "lemma_lab": ("lemma-lab", "lemma_lab"),
    "spectrum": ("spectrum", "cat_constant"),
}


def record(name, ok, detail):
    RESULTS[name] = (bool(ok), detail)


class DriverRun:
    def __init__(self, out, code, seconds):
        self.out, self.code, self.seconds = out, code, seconds

    def json(self, name):
        return json.loads((self.out / name).read_text())

    def rows(self, name):
        with open(self.out / name, newline="") as fh:
            return list(csv.DictReader(fh))

    def files(self):
        return {p.name: p.read_bytes() for p in sorted(self.out.iterdir()) if p.name != "timings.json"}


def run_driver(root, key, command, scenario, workers):
    out = root / f"{key}_w{workers}"
    t0 = time.perf_counter()
    code = main([command, "--scenario", scenario, "--out", str(out), "--threads", str(workers)])
    return DriverRun(out, code, time.perf_counter() - t0)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    return {key: run_driver(root, key, cmd, scen, 1) for key, (cmd, scen) in DRIVER_RUNS.items()}, root


def test_c1_cocycle_algebra():
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("cat_constant", "cat_coboundary", "rotation_conjugated", "truncated_compact",
                 "diagonal_constant"):
        scen = load_scenario(name)
        system, gen = scen.build_system(), scen.build_generator()
        rng = np.random.default_rng(1)
        pts = sample_points(system, "iid_uniform", 100, 2).points
        for x in pts:
            n, k = (int(v) for v in rng.integers(-16, 17, size=2))
            outer = cocycle(gen, system, evaluate_map(system, x, k), n)
            inner = cocycle(gen, system, x, k)
            scale = max(1.0, np.linalg.norm(outer, 2) * np.linalg.norm(inner, 2))
            law = np.max(np.abs(cocycle(gen, system, x, n + k) - outer @ inner)) / scale
            fwd = cocycle(gen, system, evaluate_map(system, x, -n), n)
            back = cocycle(gen, system, x, -n)
            scale = max(1.0, np.linalg.norm(fwd, 2) * np.linalg.norm(back, 2))
            inv = np.max(np.abs(fwd @ back - np.eye(gen.dimension))) / scale
            worst = max(worst, law, inv)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5
    record("C1 cocycle algebra", ok, f"worst relative residual {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_c2_spectrum_oracle():
    t0 = time.perf_counter()
    cat = toral_automorphism(CAT_MAP)
    gen = constant_generator(np.array(CAT_MAP, dtype=float))
    pts = sample_points(cat, "iid_uniform", 4, 3).points
    cat_dev = max(np.max(np.abs(np.array(lyapunov_spectrum(gen, cat, x, 4096).exponents) - [CAT_RATE, -CAT_RATE]))
                  for x in pts)
    rot = circle_rotation(0.37)
    diag_dev = 0.0
    for d in ([np.e ** 2, 1.0, 1 / np.e], [3.0, 0.5], [5.0, 2.0, 1.0, 0.1]):
        sp = lyapunov_spectrum(constant_generator(np.diag(d)), rot, rot.point([0.2]), 4096)
        diag_dev = max(diag_dev, float(np.max(np.abs(np.array(sp.exponents) - np.log(d)))))
    elapsed = time.perf_counter() - t0
    ok = cat_dev <= 1e-3 and diag_dev <= 1e-12 and elapsed < 10
    record("C2 spectrum oracle", ok, f"cat deviation {cat_dev:.2e}, diagonal deviation {diag_dev:.2e}, "
                                     f"{elapsed:.1f} s")
    assert ok


def test_c3_splitting_oracle(runs):
    r, _ = runs
    cat, dbl = r["splitting_cat"], r["splitting_doubling"]
    sc, sd = cat.json("splitting_summary.json"), dbl.json("splitting_summary.json")
    elapsed = cat.seconds + dbl.seconds
    ok = (cat.code == dbl.code == 0 and sc["points"] == sd["points"] == 100 and sc["horizon"] == 1024
          and sc["oracle_max_dhat"] <= 1e-6 and sd["oracle_max_dhat"] <= 1e-6 and elapsed < 60)
    record("C3 splitting oracle", ok, f"splitting {sc['oracle_max_dhat']:.2e}, filtration "
                                      f"{sd['oracle_max_dhat']:.2e}, {elapsed:.1f} s")
    assert ok


def test_c4_gap_inequalities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_l2, worst_poly, bad = 0.0, 0.0, 0
    for j in range(1000):
        d = int(rng.integers(2, 7))
        E = Subspace.span(rng.standard_normal((d, int(rng.integers(1, d)))))
        F = Subspace.span(rng.standard_normal((d, int(rng.integers(1, d)))))
        g, h = gap(E, F), hausdorff_bracket(E, F).value
        worst_l2 = max(worst_l2, g - h, h - 2 * g)
        kind = "l1" if j % 2 else "linf"
        d = int(rng.integers(2, 5))
        k = int(rng.integers(1, d))
        E = Subspace.span(rng.standard_normal((d, k)), kind)
        F = Subspace.span(rng.standard_normal((d, k)), kind)
        g, b = gap(E, F), hausdorff_bracket(E, F)
        # the true distance lies in [lower, upper]; the inequalities must be compatible with it
        worst_poly = max(worst_poly, g - b.upper, b.lower - 2 * g)
        bad += not (b.lower <= b.value <= b.upper)
    elapsed = time.perf_counter() - t0
    ok = worst_l2 <= 1e-12 and worst_poly <= 1e-12 and bad == 0 and elapsed < 30
    record("C4 gap inequalities", ok, f"l2 worst excess {worst_l2:.1e}, l1/linf worst excess {worst_poly:.1e}, "
                                      f"{elapsed:.1f} s")
    assert ok


def test_c5_comparison_lemma_lab(runs):
    r, _ = runs
    lab = r["lemma_lab"]
    s = lab.json("lemma_lab.json")
    dims = {int(row["dims"]) for row in lab.rows("lemma_lab.csv")}
    ok = (lab.code == 0 and s["instances"] == 100 and s["complete"] and s["all_passed"]
          and dims == {2, 3, 4, 6} and lab.seconds < 30)
    record("C5 comparison lemma lab", ok, f"{s['instances']} instances, worst bound ratio "
                                          f"{s['worst_bound_ratio']:.3f}, worst cone ratio "
                                          f"{s['worst_cone_ratio']:.3f}, {lab.seconds:.1f} s")
    assert ok


def _norm_range(field, D, rng, count=256):
    U = rng.standard_normal((count, field.bases[0].shape[1]))
    ratios = field.norms(U) / np.linalg.norm(U, axis=1)
    return float(ratios.min()), float(ratios.max() / D)


def test_c6_lyapunov_norm_laws(runs):
    r, _ = runs
    reg = r["regular_set"]
    s = reg.json("regular_set.json")
    checks = reg.rows("norm_checks.csv")
    slack = max(max(float(c["D_slack"]), float(c["K_slack"])) for c in checks)
    growth = max(max(float(c["sandwich_worst_lower"]), float(c["sandwich_worst_upper"])) for c in checks)
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    lo, hi = np.inf, 0.0
    scen = load_scenario("cat_coboundary")
    system, gen = scen.build_system(), scen.build_generator()
    x = system.point([0.3, 0.7])
    sp = lyapunov_spectrum(gen, system, x, 4096)
    diag = constant_generator(np.diag([np.e ** 2, 1.0, 1 / np.e]))
    for g in (gen, diag):
        spec = sp if g is gen else lyapunov_spectrum(g, system, x, 1024)
        field = LyapunovNormField(g, system, x, default_params(spec), radius=16, buffer=1024)
        D = d_epsilon(field, horizon=8)
        a, b = _norm_range(field, D.value, rng)
        lo, hi = min(lo, a), max(hi, b)
    elapsed = reg.seconds + time.perf_counter() - t0
    ok = (reg.code == 0 and s["norm_checks"]["passed"] and growth <= 1e-8 and slack <= 1e-6
          and lo >= 1 - 1e-12 and hi <= 1 + 1e-12 and elapsed < 60)
    record("C6 Lyapunov norm laws", ok, f"min |u|_x/|u| {lo:.3f}, max |u|_x/(D|u|) {hi:.3f}, growth excess "
                                        f"{growth:.1e}, temperedness slack {slack:.1e}, {elapsed:.1f} s")
    assert ok


def test_c7_holder_propagation(runs):
    r, _ = runs
    v = r["verify_rotation"]
    s = v.json("verify_summary.json")["cocycle_holder"]
    rows = v.rows("cocycle_holder.csv")
    ok = (v.code == 0 and s["passed"] and s["pairs"] == len(rows) == 200 and s["steps"] == 20
          and v.seconds < 30)
    record("C7 Holder propagation", ok, f"{len(rows)} pairs, worst ratio {s['worst_ratio']:.3f}, "
                                        f"{v.seconds:.1f} s")
    assert ok


def test_c8_main_pipeline(runs):
    r, _ = runs
    v = r["verify_coboundary"]
    s = v.json("verify_summary.json")
    rows = v.rows("verify_pairs.csv")
    levels = s["levels"]
    problems = []
    for lv, info in levels.items():
        if info["certified"] == 0 or info["failures"] or not info["fit_passed"]:
            problems.append(lv)
        cert = [row for row in rows if row["level"] == lv and row["status"] == "checked"
                and float(row["distance"]) < float(info["threshold"])]
        for row in cert:
            flags = [k for k in row if k.startswith("pass_") and row[k] != ""]
            if not all(row[k] in ("True", "1") for k in flags):
                problems.append(lv)
    slopes = ", ".join(f"{lv}: {info['fit']['fitted_exponent']:.2f} >= {info['nu_bound']:.3f}"
                       for lv, info in sorted(levels.items()))
    ok = v.code == 0 and s["gamma"] == 0.1 and set(levels) == {"1", "2", "3"} and not problems \
        and v.seconds < 300
    record("C8 main pipeline", ok, f"levels {slopes}; {v.seconds:.1f} s")
    assert ok


def test_c9_filtration_pipeline(runs):
    r, _ = runs
    f = r["filtration"]
    s = f.json("filtration_summary.json")
    b = s["blocks"]
    levels = s["levels"]
    ok = (f.code == 0 and b["steps"] == 64 and b["recursion_steps"] == 8 and b["identity_max"] <= 1e-10
          and b["recursion_max"] <= 1e-10
          and all(info["certified"] > 0 and info["failures"] == 0 for info in levels.values())
          and f.seconds < 120)
    cert = ", ".join(f"level {lv}: {info['certified']} certified" for lv, info in sorted(levels.items()))
    record("C9 filtration pipeline", ok, f"block identity {b['identity_max']:.1e}, recursion "
                                         f"{b['recursion_max']:.1e}; {cert}; {f.seconds:.1f} s")
    assert ok


def test_c10_determinism(runs):
    r, root = runs
    differing = []
    rerun = run_driver(root, "spectrum_rerun", "spectrum", "cat_constant", 1)
    if rerun.files() != r["spectrum"].files():
        differing.append("spectrum rerun")
    for key, (cmd, scen) in DRIVER_RUNS.items():
        again = run_driver(root, key, cmd, scen, 8)
        if again.code != r[key].code or again.files() != r[key].files():
            differing.append(key)
    ok = not differing
    record("C10 determinism", ok, f"{len(DRIVER_RUNS)} drivers byte-identical across 1 vs 8 workers"
           if ok else f"differences in {', '.join(differing)}")
    assert ok
