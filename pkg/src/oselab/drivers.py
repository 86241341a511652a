"""Run drivers behind the command line subcommands.

Every driver takes a parsed :class:`~oselab.scenario.Scenario` and a
:class:`RunContext`, writes its tables and summaries through the context and
returns an exit status (0 or 3). Work is split into fixed-size chunks that do
not depend on the worker count, so outputs are identical for any number of
workers.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from ._version import __version__
from .cocycle import scenario_growth_constant, verify_cocycle_holder
from .dynamics import BaseSystem, metric, nearby_lattice, sample_points
from .errors import (CertificateFailure, DegenerateDesign, HypothesisSynthesisFailure,
                     NegativeIterateOfNonInvertible, PairOutsideRegularSet, PairTooFar)
from .holder import (FiltrationContext, VerificationContext, assemble_filtration_regular_set,
                     check_lemma_l5, discover_threshold, filtration_constants, filtration_entries,
                     filtration_levels, fit_holder_exponent, main_bound_exponent, main_rule,
                     synthesize_l5_instance, verify_filtration_holder, verify_main)
from .lyapunov_norms import (LyapunovNormField, LyapunovNormParams, RegularityFunctions,
                             build_regular_set, d_epsilon, default_epsilon, default_truncation,
                             k_temperedness, lyapunov_sandwich_check, regularity_levels,
                             regularity_values)
from .oseledets import (LyapunovSpectrum, alpha_estimates, analytic_exponents, block_cocycle,
                        coboundary_oracle, default_grouping_tol, filtrations_at, qr_exponents,
                        spectrum_from_raw, splittings_at)
from .scenario import Scenario, log_uniform_distances
from .subspaces import certified_distance

MANIFEST = "manifest.json"
TIMINGS = "timings.json"

# offsets that give each stage its own reproducible stream
SEED_OFFSETS = {"spectrum": 0, "splitting": 1, "norms": 2, "pairs": 3, "filtration": 4,
                "filtration_pairs": 5, "cocycle_pairs": 6, "lemma_lab": 7, "blocks": 8}


def stage_seed(scen: Scenario, stage: str) -> int:
    return int(scen.seed) + 1000 * SEED_OFFSETS[stage]


# serialization

def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def lattice_text(lat) -> str:
    return " ".join(str(int(v)) for v in lat)


class RunContext:
    """Output directory, deterministic writers, timings and the manifest."""

    def __init__(self, scenario: Scenario, out_dir, command: str, workers: int = 1):
        self.scenario = scenario
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.workers = max(1, int(workers))
        self.files: list[str] = []
        self.timings: dict[str, float] = {}

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text, encoding="utf-8")
        if name not in self.files:
            self.files.append(name)
        return path

    def write_csv(self, name: str, rows, fieldnames=None) -> Path:
        rows = list(rows)
        if fieldnames is None:
            fieldnames = []
            for r in rows:
                fieldnames.extend(k for k in r if k not in fieldnames)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([format_value(r.get(k)) for k in fieldnames])
        return self._write(name, buf.getvalue())

    def write_json(self, name: str, obj) -> Path:
        return self._write(name, json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n")

    def write_plot(self, name: str, xs, ys, header: str) -> Path:
        lines = [f"# {header}"]
        lines += [f"{format_value(float(a))} {format_value(float(b))}" for a, b in zip(xs, ys)]
        return self._write(name, "\n".join(lines) + "\n")

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0

    def digests(self) -> dict:
        return {n: hashlib.sha256((self.out / n).read_bytes()).hexdigest() for n in sorted(self.files)}

    def finish(self, status: int) -> dict:
        """Write ``manifest.json`` and ``timings.json``; wall times stay out of the digests."""
        manifest = {
            "artifact_version": __version__,
            "command": self.command,
            "scenario": self.scenario.name,
            "scenario_digest": self.scenario.digest,
            "seed": self.scenario.seed,
            "status": int(status),
            "files": self.digests(),
            "timings_file": TIMINGS,
        }
        (self.out / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        (self.out / TIMINGS).write_text(json.dumps(jsonable(self.timings), sort_keys=True, indent=2) + "\n")
        return manifest


# process fan-out

def parallel_map(func, tasks, workers: int = 1) -> list:
    """Ordered map; inline when ``workers <= 1``."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(func, tasks))


def chunked(seq, size: int) -> list:
    return [seq[i:i + size] for i in range(0, len(seq), size)]


_OBJECTS: dict = {}


def _objects(scen_dict):
    """Scenario, system and generator rebuilt inside a worker, cached per process."""
    key = json.dumps(scen_dict["sections"], sort_keys=True)
    if key not in _OBJECTS:
        _OBJECTS.clear()
        scen = Scenario.from_dict(scen_dict)
        _OBJECTS[key] = (scen, scen.build_system(), scen.build_generator())
    return _OBJECTS[key]


def _chunk_size(scen: Scenario) -> int:
    return max(1, scen.get_int("run", "chunk", 16))


def _require_invertible(system: BaseSystem, what: str):
    if not system.invertible:
        raise NegativeIterateOfNonInvertible(f"{what} needs an invertible base map")


# spectrum

def _spectrum_task(task):
    scen_d, lat, N, frame_seed, checkpoints = task
    _, system, gen = _objects(scen_d)
    raw, at, mats = qr_exponents(gen, system, lat, N, frame_seed, checkpoints)
    return raw, at, alpha_estimates(gen, mats, N)


def scenario_spectrum(scen: Scenario, workers: int = 1):
    """Pooled spectrum over the ``[spectrum]`` sample, plus the per-point data."""
    system, gen = scen.build_system(), scen.build_generator()
    N = scen.get_int("spectrum", "horizon", 4096)
    count = scen.get_int("spectrum", "points", 8)
    scheme = scen.get_str("spectrum", "sampling", "iid_uniform")
    frame_seed = scen.get_int("spectrum", "frame_seed", 0)
    tol = scen.get_float("spectrum", "grouping_tol", None)
    tol = default_grouping_tol(gen) if tol is None else tol
    samples = sample_points(system, scheme, count, stage_seed(scen, "spectrum"))
    checkpoints = tuple(sorted({N // 2} | {2 ** j for j in range(4, 31) if 2 ** j <= N}))
    tasks = [(scen.to_dict(), lat, N, frame_seed, checkpoints)
             for lat in chunked(samples.lattice, _chunk_size(scen))]
    results = parallel_map(_spectrum_task, tasks, workers)
    raw = np.concatenate([r[0] for r in results])
    at = {c: np.concatenate([r[1][c] for r in results]) for c in checkpoints}
    alpha = np.concatenate([r[2] for r in results])
    spectrum = spectrum_from_raw(raw.mean(axis=0), at[N // 2].mean(axis=0), float(alpha.max()), N, tol,
                                 gen.dimension)
    return spectrum, {"samples": samples, "raw": raw, "at": at, "alpha": alpha, "grouping_tol": tol}


def run_spectrum(scen: Scenario, rc: RunContext) -> int:
    with rc.stage("spectrum"):
        spectrum, data = scenario_spectrum(scen, rc.workers)
    gen = scen.build_generator()
    raw = data["raw"]
    d = raw.shape[1]
    rows = []
    for p, (pt, r, al) in enumerate(zip(data["samples"].points, raw, data["alpha"])):
        row = {"point": p, "x": lattice_text(pt.lattice), "alpha": al}
        row.update({f"raw_{j + 1}": r[j] for j in range(d)})
        rows.append(row)
    pooled = {"point": "pooled", "x": "", "alpha": spectrum.alpha_floor}
    pooled.update({f"raw_{j + 1}": v for j, v in enumerate(raw.mean(axis=0))})
    rows.append(pooled)
    rc.write_csv("spectrum_points.csv", rows, ["point", "x"] + [f"raw_{j + 1}" for j in range(d)] + ["alpha"])
    analytic = analytic_exponents(gen)
    summary = {
        "spectrum": spectrum.to_json(),
        "pooled_raw": raw.mean(axis=0),
        "dispersion": raw.std(axis=0),
        "points": raw.shape[0],
        "horizon": spectrum.horizon,
        "grouping_tol": data["grouping_tol"],
        "analytic": analytic,
        "max_analytic_deviation": None if analytic is None else float(np.max(np.abs(raw.mean(axis=0) - analytic))),
    }
    rc.write_json("spectrum.json", summary)
    cps = sorted(data["at"])
    rc.write_plot("spectrum_convergence.txt", cps, [data["at"][c].mean(axis=0)[0] for c in cps],
                  "horizon pooled_top_exponent")
    return 0


# splitting

def _splitting_task(task):
    scen_d, spec_json, lat, N, frame_seed = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    oracle = gen.field_kind == "coboundary"
    rows = []
    if system.invertible:
        for s in splittings_at(gen, system, lat, spectrum, N, frame_seed):
            row = {"x": lattice_text(s.at.lattice), "kind": "splitting",
                   "equivariance_max": max(s.certificates["equivariance"]),
                   "transversality_min": min(s.certificates["transversality"], default=float("nan"))}
            if oracle:
                ref, _ = coboundary_oracle(gen.conjugator, gen.diagonal, system, s.at, gen.norm)
                for i, (E, O) in enumerate(zip(s.parts.parts, ref.parts.parts), start=1):
                    row[f"oracle_dhat_{i}"] = certified_distance(E, O)
            rows.append(row)
    else:
        for f in filtrations_at(gen, system, lat, spectrum, N, frame_seed):
            row = {"x": lattice_text(f.at.lattice), "kind": "filtration"}
            if oracle:
                _, ref = coboundary_oracle(gen.conjugator, gen.diagonal, system, f.at, gen.norm)
                for j in range(1, len(f.spaces)):
                    if f.spaces[j].dim:
                        row[f"oracle_dhat_{j + 1}"] = certified_distance(f.spaces[j], ref.spaces[j])
            rows.append(row)
    return rows


def run_splitting(scen: Scenario, rc: RunContext) -> int:
    system = scen.build_system()
    with rc.stage("spectrum"):
        spectrum, _ = scenario_spectrum(scen, rc.workers)
    N = scen.get_int("splitting", "horizon", 1024)
    count = scen.get_int("splitting", "points", 100)
    tol = scen.get_float("splitting", "oracle_tol", 1e-6)
    samples = sample_points(system, scen.get_str("splitting", "sampling", "iid_uniform"), count,
                            stage_seed(scen, "splitting"))
    tasks = [(scen.to_dict(), spectrum.to_json(), lat, N, scen.get_int("spectrum", "frame_seed", 0))
             for lat in chunked(samples.lattice, _chunk_size(scen))]
    with rc.stage("splitting"):
        rows = [r for part in parallel_map(_splitting_task, tasks, rc.workers) for r in part]
    for p, r in enumerate(rows):
        r["point"] = p
    rc.write_csv("splitting_points.csv", rows, None)
    oracle_vals = [v for r in rows for k, v in r.items() if k.startswith("oracle_dhat_")]
    oracle_max = max(oracle_vals) if oracle_vals else None
    passed = oracle_max is None or oracle_max <= tol
    summary = {"points": len(rows), "horizon": N, "kind": rows[0]["kind"] if rows else None,
               "spectrum": spectrum.to_json(), "oracle_max_dhat": oracle_max, "oracle_tol": tol,
               "oracle_available": bool(oracle_vals), "passed": passed}
    if system.invertible:
        summary["equivariance_max"] = max(r["equivariance_max"] for r in rows)
    rc.write_json("splitting_summary.json", summary)
    return 0 if passed else CertificateFailure.exit_code


# regular set

def _regularity_task(task):
    scen_d, spec_json, lat, eps, horizon, buffer = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    C, K, _ = regularity_values(gen, system, lat, spectrum, eps, horizon, buffer)
    return C, K


def _regularity(scen, spectrum, eps, lattices, workers):
    horizon = scen.get_int("norms", "regularity_horizon", 256)
    buffer = scen.get_int("norms", "buffer", 1024)
    tasks = [(scen.to_dict(), spectrum.to_json(), lat, eps, horizon, buffer)
             for lat in chunked(np.asarray(lattices, dtype=np.int64), _chunk_size(scen))]
    res = parallel_map(_regularity_task, tasks, workers)
    return np.concatenate([r[0] for r in res]), np.concatenate([r[1] for r in res]), horizon


def _norm_epsilon(scen: Scenario, spectrum: LyapunovSpectrum) -> float:
    eps = scen.get_float("norms", "epsilon", None)
    return default_epsilon(spectrum) if eps is None else eps


def _regular_set(scen, spectrum, eps, points, C, K, horizon):
    funcs = RegularityFunctions(tuple(points), regularity_levels(spectrum), C, K,
                                np.full(len(points), np.nan), horizon, eps)
    ell = scen.get_float("norms", "ell", None)
    gamma = None if ell is not None else scen.get_float("norms", "gamma", 0.1)
    return funcs, build_regular_set(funcs, ell=ell, gamma=gamma)


def _field_task(task):
    scen_d, spec_json, lat, eps, truncation, radius, buffer, steps, probes, d_horizon, k_horizon, k_shift = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    x = system.from_lattice(lat)
    params = LyapunovNormParams(eps, truncation, spectrum)
    field = LyapunovNormField(gen, system, x, params, radius, buffer)
    sw = lyapunov_sandwich_check(field, steps)
    D = d_epsilon(field, probes, d_horizon)
    ks = [k_temperedness(gen, system, x, spectrum, i, eps, k_horizon, k_shift, buffer)
          for i in regularity_levels(spectrum)]
    return {"x": lattice_text(lat), "sandwich_worst_lower": sw.worst_lower,
            "sandwich_worst_upper": sw.worst_upper, "sandwich_worst_slow": sw.worst_slow,
            "sandwich_passed": sw.passed, "sandwich_checks": sw.checks, "D_eps": D.value,
            "D_exact": D.exact, "D_slack": D.temperedness_slack, "D_same_horizon_slack": D.same_horizon_slack,
            "K_max": max(k["K"] for k in ks), "K_slack": max(k["slack"] for k in ks),
            "K_same_horizon_slack": max(k["same_horizon_slack"] for k in ks)}


def run_regular_set(scen: Scenario, rc: RunContext) -> int:
    system = scen.build_system()
    _require_invertible(system, "the regular set")
    with rc.stage("spectrum"):
        spectrum, _ = scenario_spectrum(scen, rc.workers)
    eps = _norm_epsilon(scen, spectrum)
    samples = sample_points(system, scen.get_str("norms", "sampling", "iid_uniform"),
                            scen.get_int("norms", "samples", 200), stage_seed(scen, "norms"))
    with rc.stage("regularity"):
        C, K, horizon = _regularity(scen, spectrum, eps, samples.lattice, rc.workers)
    funcs, rs = _regular_set(scen, spectrum, eps, samples.points, C, K, horizon)
    values = funcs.regularity()
    rows = []
    for p, x in enumerate(samples.points):
        for a, i in enumerate(funcs.levels):
            rows.append({"point": p, "x": lattice_text(x.lattice), "level": i, "C": C[p, a], "K": K[p, a],
                         "regularity": values[p], "member": bool(values[p] <= rs.ell)})
    rc.write_csv("regularity.csv", rows, ["point", "x", "level", "C", "K", "regularity", "member"])
    grid = sorted({1.0, max(1.0, rs.ell / 2), rs.ell, 2 * rs.ell, 4 * rs.ell})
    masks = [rs.members_at(e) for e in grid]
    nested = all(bool(np.all(masks[j] <= masks[j + 1])) for j in range(len(masks) - 1))
    # Lyapunov-norm checks on the first few sample points
    nf = scen.get_int("norms", "field_points", 4)
    radius = scen.get_int("norms", "field_radius", 32)
    steps = scen.get_int("norms", "sandwich_steps", 16)
    truncation = scen.get_int("norms", "truncation", None) or default_truncation(eps)
    tasks = [(scen.to_dict(), spectrum.to_json(), lat, eps, truncation, radius,
              scen.get_int("norms", "buffer", 1024), steps, scen.get_int("norms", "probe_count", None),
              scen.get_int("norms", "d_horizon", radius // 2), scen.get_int("norms", "k_horizon", 64),
              scen.get_int("norms", "k_shift", 64))
             for lat in samples.lattice[:nf]]
    with rc.stage("norm_checks"):
        checks = parallel_map(_field_task, tasks, rc.workers)
    slack_tol = scen.get_float("norms", "slack_tol", 1e-6)
    if checks:
        rc.write_csv("norm_checks.csv", checks, None)
    checks_ok = all(c["sandwich_passed"] and c["D_slack"] <= slack_tol and c["K_slack"] <= slack_tol
                    for c in checks)
    srt = np.sort(values)
    rc.write_plot("regularity_cdf.txt", srt, np.arange(1, len(srt) + 1) / len(srt), "regularity fraction_at_most")
    summary = {"ell": rs.ell, "gamma": rs.gamma_target, "measure_estimate": rs.measure_estimate,
               "members": len(rs.members), "samples": len(samples), "epsilon": eps, "horizon": horizon,
               "truncation": truncation, "levels": funcs.levels, "spectrum": spectrum.to_json(),
               "nesting": {"grid": grid, "fractions": [float(m.mean()) for m in masks], "nested": nested},
               "norm_checks": {"points": len(checks), "passed": checks_ok, "slack_tol": slack_tol}}
    rc.write_json("regular_set.json", summary)
    ok = nested and checks_ok and (rs.gamma_target is None or rs.measure_estimate > 1 - rs.gamma_target)
    return 0 if ok else CertificateFailure.exit_code


# pair verification

def _cocycle_holder_task(task):
    scen_d, pairs, n_max, a = task
    _, system, gen = _objects(scen_d)
    rows = []
    for lx, ly in pairs:
        x, y = system.from_lattice(lx), system.from_lattice(ly)
        rep = verify_cocycle_holder(gen, system, x, y, n_max, a)
        rows.append({"x": lattice_text(lx), "y": lattice_text(ly), "distance": rep.distance,
                     "worst_ratio": rep.worst, "passed": rep.passed})
    return rows


def _verify_task(task):
    scen_d, spec_json, eps, ell, a, horizon, levels, pairs = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    members = {}
    pts = []
    for lx, ly, ymember in pairs:
        members[tuple(int(v) for v in lx)] = True
        members.setdefault(tuple(int(v) for v in ly), bool(ymember))
        pts += [system.from_lattice(lx), system.from_lattice(ly)]
    ctx = VerificationContext(gen, system, spectrum, eps, ell, a, horizon, members=members)
    ctx.prepare(pts)
    rows = []
    for j in range(len(pairs)):
        x, y = pts[2 * j], pts[2 * j + 1]
        d = metric(system, x, y)
        for i in levels:
            base = {"x": lattice_text(x.lattice), "y": lattice_text(y.lattice), "level": i, "distance": d}
            try:
                rep = verify_main(x, y, i, ctx)
            except PairOutsideRegularSet:
                rows.append(dict(base, status="outside", passed=0))
                continue
            except PairTooFar:
                rows.append(dict(base, status="too_far", passed=0))
                continue
            row = rep.row()
            row["status"] = "checked"
            for k, v in rep.passes.items():
                row[f"pass_{k}"] = v
            rows.append(row)
    return rows


def _threshold_summary(rows, levels, bound_exponent):
    """Closest too-far pair per level, certified pairs below it, and the exponent fits."""
    out = {}
    for i in levels:
        lv = [r for r in rows if r["level"] == i and r["status"] != "outside"]
        dist = [r["distance"] for r in lv]
        ok = [r["status"] == "checked" for r in lv]
        thr = discover_threshold(dist, ok)
        cert = [r for r in lv if r["status"] == "checked" and r["distance"] < thr]
        failures = [r for r in cert if not r["passed"]]
        nu_bound = bound_exponent(i)
        try:
            fit = fit_holder_exponent(distances=[r["distance"] for r in cert],
                                      measured=[r["measured_dhat"] for r in cert])
            fit_json = {"fitted_exponent": fit.fitted_exponent, "intercept": fit.intercept,
                        "r_squared": fit.r_squared, "pair_count": fit.pair_count}
            fit_ok = fit.fitted_exponent >= nu_bound
        except DegenerateDesign as exc:
            fit_json, fit_ok = {"error": str(exc)}, None
        out[i] = {"threshold": thr, "pairs": len(lv), "certified": len(cert), "failures": len(failures),
                  "pass_fraction": (len(cert) - len(failures)) / len(cert) if cert else None,
                  "fit": fit_json, "nu_bound": nu_bound, "fit_passed": fit_ok,
                  "passed": not failures and fit_ok is not False}
    return out


def _pairs_near(system, base_lattices, count, scen, section, stage, rng=None):
    rng = np.random.default_rng(stage_seed(scen, stage)) if rng is None else rng
    dist = log_uniform_distances(count, scen.get_float(section, "min_log10_distance", -12.0),
                                 scen.get_float(section, "max_log10_distance", -1.0), rng,
                                 scen.get_int(section, "bins", 8))
    idx = rng.integers(0, len(base_lattices), size=count)
    xs = [np.asarray(base_lattices[j], dtype=np.int64) for j in idx]
    ys = [nearby_lattice(system, x, float(dd), rng) for x, dd in zip(xs, dist)]
    return xs, ys


def _levels(scen, section, default):
    raw = scen.get_str(section, "levels", None)
    if raw is None:
        return tuple(default)
    if raw.strip().lower() == "none":
        return ()
    return tuple(int(v) for v in raw.replace(",", " ").split())


def run_verify(scen: Scenario, rc: RunContext) -> int:
    system, gen = scen.build_system(), scen.build_generator()
    _require_invertible(system, "pair verification")
    a = scenario_growth_constant(gen, system, scen.get_float("verify", "a1", None))
    status = 0
    summary = {"a": a, "nu": gen.holder_exponent}
    cp = scen.get_int("verify", "cocycle_pairs", 0)
    if cp:
        samples = sample_points(system, "iid_uniform", cp, stage_seed(scen, "cocycle_pairs"))
        xs, ys = _pairs_near(system, samples.lattice, cp, scen, "verify", "cocycle_pairs")
        n_max = scen.get_int("verify", "cocycle_steps", 20)
        tasks = [(scen.to_dict(), ch, n_max, a) for ch in chunked(list(zip(xs, ys)), _chunk_size(scen))]
        with rc.stage("cocycle_holder"):
            crow = [r for part in parallel_map(_cocycle_holder_task, tasks, rc.workers) for r in part]
        rc.write_csv("cocycle_holder.csv", crow, ["x", "y", "distance", "worst_ratio", "passed"])
        ok = all(r["passed"] for r in crow)
        summary["cocycle_holder"] = {"pairs": cp, "steps": n_max, "passed": ok,
                                     "worst_ratio": max(r["worst_ratio"] for r in crow)}
        status = status or (0 if ok else CertificateFailure.exit_code)
    with rc.stage("spectrum"):
        spectrum, _ = scenario_spectrum(scen, rc.workers)
    levels = _levels(scen, "verify", range(1, spectrum.k + 1))
    npairs = scen.get_int("verify", "pairs", 200)
    summary["spectrum"] = spectrum.to_json()
    if not levels or not npairs:
        rc.write_json("verify_summary.json", summary)
        return status
    eps = _norm_epsilon(scen, spectrum)
    samples = sample_points(system, scen.get_str("norms", "sampling", "iid_uniform"),
                            scen.get_int("norms", "samples", 200), stage_seed(scen, "norms"))
    with rc.stage("regularity"):
        C, K, horizon = _regularity(scen, spectrum, eps, samples.lattice, rc.workers)
    funcs, rs = _regular_set(scen, spectrum, eps, samples.points, C, K, horizon)
    if not rs.members:
        raise CertificateFailure("the regular set has no sampled members")
    xs, ys = _pairs_near(system, [m.lattice for m in rs.members], npairs, scen, "verify", "pairs")
    with rc.stage("regularity"):
        Cy, Ky, _ = _regularity(scen, spectrum, eps, ys, rc.workers)
    y_member = np.maximum(Cy.max(axis=1), Ky.max(axis=1)) <= rs.ell
    pairs = list(zip(xs, ys, y_member))
    vh = scen.get_int("verify", "horizon", 1024)
    tasks = [(scen.to_dict(), spectrum.to_json(), eps, rs.ell, a, vh, levels, ch)
             for ch in chunked(pairs, _chunk_size(scen))]
    with rc.stage("verify"):
        rows = [r for part in parallel_map(_verify_task, tasks, rc.workers) for r in part]
    ctx = VerificationContext(gen, system, spectrum, eps, rs.ell, a, vh)
    per_level = _threshold_summary(rows, levels, lambda i: main_bound_exponent(i, ctx))
    for i in levels:
        per_level[i]["rule"] = main_rule(i, spectrum)
        per_level[i]["constants"] = ctx.constants(i).to_json()
        cert = sorted((r["distance"], r["measured_dhat"]) for r in rows
                      if r["level"] == i and r["status"] == "checked" and r["distance"] < per_level[i]["threshold"])
        rc.write_plot(f"verify_level{i}.txt", [c[0] for c in cert], [c[1] for c in cert], "distance dhat")
    rc.write_csv("verify_pairs.csv", rows, None)
    passed = all(v["passed"] for v in per_level.values())
    summary.update({"epsilon": eps, "ell": rs.ell, "gamma": rs.gamma_target,
                    "measure_estimate": rs.measure_estimate, "pairs": npairs,
                    "pairs_in_set": int(np.sum(y_member)), "levels": per_level,
                    "delta": min(v["threshold"] for v in per_level.values()), "passed": passed})
    rc.write_json("verify_summary.json", summary)
    return status or (0 if passed else CertificateFailure.exit_code)


# filtration branch

def _entries_task(task):
    scen_d, spec_json, lat, eps, levels, horizon, buffer = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    return {i: filtration_entries(gen, system, lat, spectrum, i, eps, horizon, buffer) for i in levels}


def _filtration_task(task):
    scen_d, spec_json, eps, a, regular, horizon, levels, pairs = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    ctx = FiltrationContext(gen, system, spectrum, eps, a, regular, horizon)
    pts = [system.from_lattice(v) for pair in pairs for v in pair]
    ctx.prepare(pts)
    rows = []
    for j in range(len(pairs)):
        x, y = pts[2 * j], pts[2 * j + 1]
        d = metric(system, x, y)
        for i in levels:
            base = {"x": lattice_text(x.lattice), "y": lattice_text(y.lattice), "level": i, "distance": d}
            try:
                rep = verify_filtration_holder(x, y, i, ctx)
            except PairOutsideRegularSet:
                rows.append(dict(base, status="outside", passed=0))
                continue
            except PairTooFar:
                rows.append(dict(base, status="too_far", passed=0))
                continue
            row = rep.row()
            row["status"] = "checked"
            for k, v in rep.passes.items():
                row[f"pass_{k}"] = v
            rows.append(row)
    return rows


def _block_task(task):
    scen_d, spec_json, lat, levels, steps, rec_steps, horizon = task
    _, system, gen = _objects(scen_d)
    spectrum = LyapunovSpectrum.from_json(spec_json)
    x = system.from_lattice(lat)
    rows = []
    ns = sorted({n for n in (2 ** j for j in range(0, 31)) if n <= steps} | set(range(1, rec_steps + 1)))
    for i in levels:
        for n in ns:
            b = block_cocycle(gen, system, x, i, n, horizon, spectrum)
            rows.append({"x": lattice_text(lat), "level": i, "steps": n, "identity_residual": b.identity_residual,
                         "recursion_residual": b.recursion_residual if n <= rec_steps else None,
                         "one_step_residual": b.one_step_residual, "leakage": b.leakage,
                         "b_injectivity": b.b_injectivity})
    return rows


def run_filtration(scen: Scenario, rc: RunContext) -> int:
    system, gen = scen.build_system(), scen.build_generator()
    a = scenario_growth_constant(gen, system, scen.get_float("verify", "a1", None))
    with rc.stage("spectrum"):
        spectrum, _ = scenario_spectrum(scen, rc.workers)
    levels = _levels(scen, "filtration", filtration_levels(spectrum))
    eps = scen.get_float("filtration", "epsilon", None)
    eps = spectrum.min_gap / 4 if eps is None else eps
    gamma = scen.get_float("filtration", "gamma", 0.1)
    cert_h = scen.get_int("filtration", "certificate_horizon", 256)
    buffer = scen.get_int("filtration", "buffer", 1024)
    N = scen.get_int("filtration", "horizon", 1024)
    samples = sample_points(system, scen.get_str("filtration", "sampling", "iid_uniform"),
                            scen.get_int("filtration", "samples", 100), stage_seed(scen, "filtration"))
    npairs = scen.get_int("filtration", "pairs", 100)
    xs, ys = _pairs_near(system, samples.lattice, npairs, scen, "filtration", "filtration_pairs")
    allpts = list(samples.points) + [system.from_lattice(y) for y in ys]
    lat_all = np.array([p.lattice for p in allpts], dtype=np.int64)
    tasks = [(scen.to_dict(), spectrum.to_json(), lat, eps, levels, cert_h, buffer)
             for lat in chunked(lat_all, _chunk_size(scen))]
    with rc.stage("certificates"):
        parts = parallel_map(_entries_task, tasks, rc.workers)
    regular = {}
    for i in levels:
        entry = np.concatenate([p[i][0] for p in parts])
        ells = np.concatenate([p[i][1] for p in parts])
        regular[i] = assemble_filtration_regular_set(i, allpts, len(samples), entry, ells, gamma, cert_h)
    vtasks = [(scen.to_dict(), spectrum.to_json(), eps, a, regular, N, levels, ch)
              for ch in chunked(list(zip(xs, ys)), _chunk_size(scen))]
    with rc.stage("verify"):
        rows = [r for part in parallel_map(_filtration_task, vtasks, rc.workers) for r in part]
    nu = gen.holder_exponent
    per_level = _threshold_summary(
        rows, levels, lambda i: filtration_constants(i, spectrum, eps, regular[i].ell, a, nu)[1])
    for i in levels:
        reg = regular[i]
        C, v = filtration_constants(i, spectrum, eps, reg.ell, a, nu)
        per_level[i].update({"n0": reg.n0, "ell": reg.ell, "measure_estimate": reg.measure_estimate,
                             "C": C, "nu_bound": v})
        cert = sorted((r["distance"], r["measured_dhat"]) for r in rows
                      if r["level"] == i and r["status"] == "checked" and r["distance"] < per_level[i]["threshold"])
        rc.write_plot(f"filtration_level{i}.txt", [c[0] for c in cert], [c[1] for c in cert], "distance dhat")
    rc.write_csv("filtration_pairs.csv", rows, None)
    # block decomposition audit
    nb = scen.get_int("filtration", "block_points", 4)
    steps = scen.get_int("filtration", "block_steps", 64)
    rec_steps = scen.get_int("filtration", "recursion_steps", 8)
    block_tol = scen.get_float("filtration", "block_tol", 1e-10)
    btasks = [(scen.to_dict(), spectrum.to_json(), lat, levels, steps, rec_steps, N)
              for lat in samples.lattice[:nb]]
    with rc.stage("blocks"):
        brows = [r for part in parallel_map(_block_task, btasks, rc.workers) for r in part]
    if brows:
        rc.write_csv("block_audit.csv", brows, None)
    ident = max((r["identity_residual"] for r in brows), default=0.0)
    recur = max((r["recursion_residual"] for r in brows if r["recursion_residual"] is not None), default=0.0)
    blocks_ok = ident <= block_tol and recur <= block_tol
    passed = all(v["passed"] for v in per_level.values()) and blocks_ok
    rc.write_json("filtration_summary.json", {
        "a": a, "epsilon": eps, "gamma": gamma, "spectrum": spectrum.to_json(), "levels": per_level,
        "blocks": {"points": nb, "steps": steps, "recursion_steps": rec_steps, "identity_max": ident,
                   "recursion_max": recur, "tol": block_tol, "passed": blocks_ok},
        "passed": passed})
    return 0 if passed else CertificateFailure.exit_code


# comparison laboratory

def _lemma_task(task):
    seed, attempts, cfg = task
    rows = []
    for j in attempts:
        rng = np.random.default_rng([seed, j])
        dims = cfg["dims"][j % len(cfg["dims"])]
        alpha1 = float(rng.uniform(*cfg["alpha1"]))
        alpha2 = float(rng.uniform(*cfg["alpha2"]))
        ell = float(rng.uniform(1.0, cfg["ell_max"]))
        pert = float(10 ** rng.uniform(*cfg["perturbation"]))
        try:
            inst = synthesize_l5_instance(int(rng.integers(2 ** 31)), dims, alpha1, alpha2, ell, pert,
                                          norm=cfg["norm"])
        except HypothesisSynthesisFailure:
            rows.append(None)
            continue
        rep = check_lemma_l5(inst)
        rows.append({"attempt": j, "dims": dims, "dim_E": inst.E.dim, "alpha1": alpha1, "alpha2": alpha2,
                     "ell": ell, "a": inst.a, "perturbation": pert, "n": inst.n_star, "delta": inst.delta,
                     "measured": rep.measured, "bound": rep.bound, "passed": rep.passed,
                     "deviation_F_E": rep.deviations[0], "deviation_E_F": rep.deviations[1],
                     "deviation_bound": rep.deviation_bound, "deviation_passed": rep.deviation_passed,
                     "cone_ratio": rep.cone_ratio, "cone_probe_ratio": rep.cone_probe_ratio,
                     "cone_passed": rep.cone_passed})
    return rows


def _range(scen, key, default):
    raw = scen.get_str("lemma_lab", key, None)
    vals = tuple(float(v) for v in raw.split()) if raw else default
    return vals


def run_lemma_lab(scen: Scenario, rc: RunContext) -> int:
    want = scen.get_int("lemma_lab", "instances", 100)
    cfg = {"dims": tuple(int(v) for v in scen.get_str("lemma_lab", "dims", "2 3 4 6").split()),
           "alpha1": _range(scen, "alpha1_range", (1.5, 3.0)),
           "alpha2": _range(scen, "alpha2_range", (0.3, 0.8)),
           "ell_max": scen.get_float("lemma_lab", "ell_max", 3.0),
           "perturbation": _range(scen, "log10_perturbation_range", (-6.0, -2.0)),
           "norm": scen.get_str("lemma_lab", "norm", "l2")}
    max_attempts = scen.get_int("lemma_lab", "max_attempts", 20 * want)
    seed = stage_seed(scen, "lemma_lab")
    batch = _chunk_size(scen)
    rows, failures, next_attempt = [], 0, 0
    with rc.stage("lemma_lab"):
        while len(rows) < want and next_attempt < max_attempts:
            # a round sized from the remaining need keeps the attempt sequence independent of workers
            stop = min(max_attempts, next_attempt + max(batch, 2 * (want - len(rows))))
            attempts = list(range(next_attempt, stop))
            tasks = [(seed, ch, cfg) for ch in chunked(attempts, batch)]
            for r in (r for part in parallel_map(_lemma_task, tasks, rc.workers) for r in part):
                if r is None:
                    failures += 1
                elif len(rows) < want:
                    rows.append(r)
            next_attempt = stop
    rc.write_csv("lemma_lab.csv", rows, None)
    ok = bool(rows) and all(r["passed"] and r["cone_passed"] and r["deviation_passed"] for r in rows)
    complete = len(rows) == want
    rc.write_json("lemma_lab.json", {
        "instances": len(rows), "requested": want, "synthesis_failures": failures, "attempts": next_attempt,
        "config": cfg, "all_passed": ok, "complete": complete,
        "worst_bound_ratio": max((r["measured"] / r["bound"] for r in rows), default=None),
        "worst_cone_ratio": max((r["cone_ratio"] for r in rows), default=None),
        "dims_covered": sorted({r["dims"] for r in rows})})
    return 0 if ok and complete else CertificateFailure.exit_code


DRIVERS = {
    "spectrum": run_spectrum,
    "splitting": run_splitting,
    "regular-set": run_regular_set,
    "verify": run_verify,
    "filtration": run_filtration,
    "lemma-lab": run_lemma_lab,
}
