"""Command-line harness: ``nsjump <suite> [options]``.

Every run writes into ``--out``:

* ``manifest.json``: suite, config hash, seed, versions, per-check results, status
* ``timing.json``: wall-clock seconds (kept apart so numeric artifacts are
  byte-identical across reruns)
* suite artifacts (CSV curves, JSON reports, JSONL paths)

While a run is in progress an ``INCOMPLETE`` marker sits in the directory;
an exception replaces it with ``FAILED``.  The exit code is 0 iff every
check of the run passed.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config

SUITES = ("simulate", "energy", "tangent", "malliavin", "couple", "genset", "acceptance")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    return x


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")


def versions() -> dict:
    import numba
    import scipy

    from ._kernels import USE_NUMBA
    return {"nsjump": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "numba_enabled": bool(USE_NUMBA)}


def pool_map(fn, items, workers: int):
    """Ordered map over a bounded process pool (serial for ``workers <= 1``)."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# ---------------------------------------------------------------------------
# record persistence
# ---------------------------------------------------------------------------

def _noise_for(cfg: ExperimentConfig, path, stream, breakpoints=()):
    from .levy import sample_noise_increments
    integ = cfg.section("integrator")
    return sample_noise_increments(path, cfg.model().d, cfg.seed, h_max=integ["h_max"],
                                   breakpoints=tuple(breakpoints), stream=stream)


def save_record(out: Path, cfg: ExperimentConfig, rec, stream, breakpoints) -> None:
    """``record.json`` (config, seed, stream) plus ``path.jsonl`` (atoms with increments)."""
    nz = rec.noise
    write_json(out / "record.json", {"config": cfg.raw, "config_hash": cfg.hash(), "seed": cfg.seed,
                                     "stream": list(stream), "breakpoints": list(breakpoints),
                                     "steps": nz.n_steps, "horizon": nz.horizon})
    rec.path.to_jsonl(out / "path.jsonl", nz.atom_inc)


def load_record(where):
    """Rebuild a stored trajectory by re-integrating its saved path and seed."""
    from .integrator import simulate
    from .levy import SubordinatorPath
    where = Path(where)
    meta_file = where / "record.json" if where.is_dir() else where
    meta = json.loads(meta_file.read_text())
    cfg = ExperimentConfig(meta["config"])
    path, g = SubordinatorPath.from_jsonl(meta_file.parent / "path.jsonl")
    noise = _noise_for(cfg, path, tuple(meta["stream"]), meta.get("breakpoints", ()))
    if g is not None:
        if not np.array_equal(noise.atom_inc, g):
            raise ValueError("stored atom increments do not match the regenerated noise path")
    lat = cfg.lattice()
    rec = simulate(cfg.initial(lat), cfg.model(), noise, lat, ceiling=cfg.section("integrator")["ceiling"])
    return cfg, rec


def parse_direction(spec: str, lattice, seed: int = 0) -> np.ndarray:
    """``mode:k1,k2[;k1,k2...]``, ``random[:seed]`` or a field CSV path."""
    from .spectral import VorticityField, random_field
    if spec.startswith("mode:"):
        v = np.zeros(lattice.n)
        for part in spec[5:].split(";"):
            a, b = (int(x) for x in part.split(","))
            v[lattice.index((a, b))] += 1.0
    elif spec.startswith("random"):
        s = int(spec.split(":")[1]) if ":" in spec else seed
        v = random_field(lattice, np.random.default_rng([s, 0xD1]))
    else:
        f = VorticityField.from_csv(spec)
        if f.lattice != lattice:
            raise ValueError("direction lattice does not match the record")
        v = f.coef
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _snapshot_times(noise, times):
    return [t for t in times if 0 <= t <= noise.horizon]


def run_simulate(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .integrator import NoCrossingError, advance_clock, simulate
    from .levy import sample_subordinator
    from .spectral import VorticityField
    integ = cfg.section("integrator")
    model, sub, lat = cfg.model(), cfg.subordinator(), cfg.lattice()
    stream = (0,)
    snaps = [float(t) for t in integ["snapshots"]]
    path = sample_subordinator(sub, integ["horizon"], cfg.seed, stream=stream)
    noise = _noise_for(cfg, path, stream, snaps)
    rec = simulate(cfg.initial(lat), model, noise, lat, ceiling=integ["ceiling"])
    save_record(out, cfg, rec, stream, snaps)
    snapdir = out / "snapshots"
    snapdir.mkdir(exist_ok=True)
    for t in [0.0] + _snapshot_times(noise, snaps):
        VorticityField(lat, rec.state_at(t)).to_csv(snapdir / f"w_t{t:g}.csv")
    write_csv(out / "energy.csv", ["t", "energy", "dissipation", "work", "noise_energy"],
              zip(rec.grid, rec.energy, rec.dissipation, rec.work, rec.noise_energy))
    try:
        clock = advance_clock(rec, cfg.kappa()).to_json()
        clock["status"] = "ok"
    except NoCrossingError as exc:
        clock = {"kappa": cfg.kappa(), "status": "no_crossing", "message": str(exc)}
    write_json(out / "clock.json", clock)
    resid = rec.energy_residual()
    return {"energy_residual": resid <= 1e-3, "_report": {"energy_residual": resid, "steps": noise.n_steps,
                                                          "atoms": path.n_atoms}}


def _energy_member(job):
    raw, i = job
    from .integrator import simulate
    from .levy import sample_subordinator
    cfg = ExperimentConfig(raw)
    integ = cfg.section("integrator")
    model, lat = cfg.model(), cfg.lattice()
    times = [float(t) for t in integ["snapshots"]]
    path = sample_subordinator(cfg.subordinator(), integ["horizon"], cfg.seed, stream=(1, i))
    noise = _noise_for(cfg, path, (1, i), times)
    rec = simulate(cfg.initial(lat), model, noise, lat, store=False, ceiling=integ["ceiling"])
    idx = [noise.index_of(t) for t in times]
    return rec.energy[idx], rec.dissipation[idx], rec.work[idx], rec.energy[0], rec.energy_residual(), rec.final


def run_energy(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .integrator import EnsembleResult, energy_stats
    from .levy import energy_injection_rate
    B = int(cfg.section("ensemble")["size"])
    res = pool_map(_energy_member, [(cfg.raw, i) for i in range(B)], args.workers)
    e, d, w, e0, r, f = (np.array(x) for x in zip(*res))
    times = np.array(cfg.section("integrator")["snapshots"], float)
    ens = EnsembleResult(times, e, d, w, e0, r, f)
    model = cfg.model()
    rep = energy_stats(ens, energy_injection_rate(cfg.subordinator(), model), model.nu)
    write_json(out / "energy_stats.json", rep)
    write_csv(out / "energy_curves.csv",
              ["t", "mean_energy", "se_energy", "mean_dissipation", "se_dissipation", "balance_mean", "balance_se"],
              zip(rep["times"], rep["mean_energy"], rep["se_energy"], rep["mean_dissipation"],
                  rep["se_dissipation"], rep["balance_mean"], rep["balance_se"]))
    write_csv(out / "path_residuals.csv", ["member", "residual"], enumerate(r))
    return {"path_residual": rep["max_path_residual"] <= 1e-3, "balance_3se": rep["balance_ok"],
            "a3_bound": rep["a3_ok"]}


def run_tangent(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .spectral import VorticityField, inner
    from .variational import TangentSolveSpec, adjoint, tangent
    cfg, rec = load_record(args.record)
    lat = rec.lattice
    xi = parse_direction(args.dir, lat, cfg.seed)
    phi = parse_direction(args.phi, lat, cfg.seed + 1)
    T = rec.horizon
    J = tangent(TangentSolveSpec(rec, 0.0, T, xi))
    K = adjoint(TangentSolveSpec(rec, 0.0, T, phi))
    dual = abs(inner(J, phi) - inner(xi, K))
    mid = rec.grid[len(rec.grid) // 2]
    J2 = tangent(TangentSolveSpec(rec, mid, T, tangent(TangentSolveSpec(rec, 0.0, mid, xi))))
    semi = float(np.linalg.norm(J2 - J) / max(np.linalg.norm(J), 1e-300))
    VorticityField(lat, J).to_csv(out / "tangent.csv")
    VorticityField(lat, K).to_csv(out / "adjoint.csv")
    write_json(out / "tangent.json", {"horizon": T, "norm_J_xi": float(np.linalg.norm(J)),
                                      "norm_K_phi": float(np.linalg.norm(K)), "duality_residual": dual,
                                      "semigroup_split": float(mid), "semigroup_residual": semi,
                                      "direction": args.dir, "terminal": args.phi})
    return {"duality": dual <= 1e-6, "semigroup": semi <= 1e-6}


def run_malliavin(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .malliavin import NondegeneracyProbe, assemble_gram, gram_two_path, nondegeneracy_inf, r_epsilon_statistic
    checks = {}
    mal = cfg.section("malliavin")
    if args.record:
        cfg, rec = load_record(args.record)
        mal = cfg.section("malliavin")
        s, t = (float(x) for x in (args.window or f"0,{rec.horizon}").split(","))
        # windows snap to the nearest substep boundaries of the stored grid
        gs, gt = (float(rec.grid[np.argmin(np.abs(rec.grid - x))]) for x in (s, t))
        n_obs = args.nobs if args.nobs is not None else mal["N_obs"]
        g = assemble_gram(rec, gs, gt, n_obs)
        G2 = gram_two_path(rec, gs, gt, n_obs)
        scale = max(np.linalg.norm(g.G, 2), 1e-300)
        two = float(np.linalg.norm(G2 - g.G, 2) / scale)
        X = nondegeneracy_inf(g, mal["alpha"], min(mal["N"], n_obs)) if g.G.any() else None
        g.to_csv(out / "gram.csv")
        ev = g.eigvalsh()
        write_json(out / "gram.json", {
            "window": [gs, gt], "requested_window": [s, t], "N_obs": n_obs, "size": g.size,
            "events": int(len(g.dl)), "eig_min": float(ev[0]), "eig_max": float(ev[-1]),
            "psd_floor": g.psd_floor(), "two_path_rel": two,
            "X": None if X is None else {"alpha": mal["alpha"], "N": mal["N"], "value": X.value,
                                         "lower": X.lower, "upper": X.upper}})
        checks.update({"psd": g.psd_floor() >= -1e-10, "two_path": two <= 1e-8})
    if args.probe:
        lat = cfg.lattice()
        probe = NondegeneracyProbe(alpha=mal["alpha"], N=mal["N"], eps_grid=tuple(mal["eps_grid"]),
                                   samples=int(mal["samples"]), kappa=cfg.kappa(), N_obs=mal["N_obs"],
                                   half_window=bool(mal["half_window"]),
                                   h_max=cfg.section("integrator")["h_max"], seed=cfg.seed)
        rep = r_epsilon_statistic(probe, cfg.model(), lat, cfg.subordinator())
        X = rep.pop("X")
        write_csv(out / "r_eps.csv", ["eps", "r", "ci_low", "ci_high"],
                  zip(rep["eps"], rep["r"], rep["ci_low"], rep["ci_high"]))
        write_csv(out / "probe_X.csv", ["design", "sample", "X"],
                  ((i, j, X[i, j]) for i in range(X.shape[0]) for j in range(X.shape[1])))
        write_json(out / "probe.json", rep)
        r = np.array(rep["r"])
        width = max(rep["ci_high"][0] - rep["ci_low"][0], rep["ci_high"][-1] - rep["ci_low"][-1])
        checks.update({"X_positive": rep["X_min"] > 0, "nonincreasing": rep["nonincreasing"],
                       "drop_exceeds_ci": r[0] - r[-1] > width})
    if not checks:
        raise ValueError("malliavin needs --record and/or --probe")
    return checks


def _couple_member(job):
    raw, i = job
    from .coupling import prepare_sample
    cfg = ExperimentConfig(raw)
    lat, model = cfg.lattice(), cfg.model()
    cp = cfg.section("coupling")
    return prepare_sample(cfg.initial(lat), model, lat, cfg.subordinator(), kappa=cfg.kappa(),
                          n_windows=int(cp["n_windows"]), seed=cfg.seed, stream=(7, i), h_max=cp["h_max"],
                          extra_times=tuple(cp.get("grad_times", ())))


def run_couple(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .coupling import Observable, build_control, gradient_experiment, residual_decay_experiment
    cp = cfg.section("coupling")
    lat = cfg.lattice()
    xi = np.zeros(lat.n)
    for k in cp["xi"]:
        xi[lat.index(tuple(k))] += 1.0
    xi /= np.linalg.norm(xi)
    B = int(cfg.section("ensemble")["size"])
    samples = pool_map(_couple_member, [(cfg.raw, i) for i in range(B)], args.workers)
    mal = cfg.section("malliavin")
    rep = residual_decay_experiment(samples, xi, tuple(cp["betas"]), tuple(cp["Ns"]), alpha=mal["alpha"],
                                    eps_grid=tuple(mal["eps_grid"]), seed=cfg.seed)
    beta, N = rep["tuned"]["beta"], rep["tuned"]["N"]
    ident = recur = 0.0
    idle = True
    for s in samples:
        st = build_control(s, xi, beta, N)
        ident = max(ident, float(np.max(st.identity_residual)))
        recur = max(recur, float(np.max(st.recursion_residual)))
        idle &= st.idle_zero
    rep.update({"identity_max": ident, "recursion_max": recur, "idle_zero": idle})
    rows = []
    for g in rep["grid"]:
        for n, m, lo, hi in zip(rep["n"], g["median"], g["q10"], g["q90"]):
            rows.append((g["beta"], g["N"], n, m, lo, hi))
    write_csv(out / "decay.csv", ["beta", "N", "n", "median", "q10", "q90"], rows)
    write_csv(out / "null_baseline.csv", ["n", "median"], zip(rep["n"], rep["null_median"]))
    checks = {"pathwise_identity": ident <= 1e-6, "recursion": recur <= 1e-6, "idle_zero": idle,
              "geometric_decay": rep["tuned_report"]["geometric_decay"]}
    times = [t for t in cp.get("grad_times", ()) if all(t < s.ticks[-1] for s in samples)]
    if times:
        grads = {}
        for o in cfg.raw.get("observables", []):
            f = Observable.from_config(o)
            grads[f.name] = gradient_experiment(f, samples, cfg.initial(lat), xi, times, beta=beta, N=N)
        rep["gradient"] = grads
        checks["gradient_pathwise"] = all(g["pathwise_tangent_vs_control"] <= 1e-6 for g in grads.values())
    write_json(out / "couple.json", rep)
    return checks


def run_genset(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .genset import parse_z0, saturate
    z0 = parse_z0(args.z0) if args.z0 else [tuple(k) for k in cfg.section("model")["z0"]]
    rep = saturate(z0, args.cutoff, args.max_levels)
    data = rep.to_json()
    data["levels"] = [[list(k) for k in lvl] for lvl in rep.levels]
    write_json(out / "genset.json", data)
    return {"condition": rep.flags.ok, "saturated": rep.saturated}


def run_acceptance_suite(cfg: ExperimentConfig, args, out: Path) -> dict:
    from .acceptance import run_acceptance
    only = [int(x) for x in args.only.split(",")] if args.only else None
    results = run_acceptance(only, echo=lambda s: print(s, flush=True))
    write_json(out / "acceptance.json", [r.to_json() for r in results])
    (out / "acceptance.txt").write_text("\n".join(r.line() for r in results) + "\n")
    # wall-clock goes to timing.json, not the numeric report
    args._extra_timing = {f"criterion_{r.number}": r.seconds for r in results}
    return {f"criterion_{r.number}": r.passed for r in results}


RUNNERS = {"simulate": run_simulate, "energy": run_energy, "tangent": run_tangent, "malliavin": run_malliavin,
           "couple": run_couple, "genset": run_genset, "acceptance": run_acceptance_suite}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsjump", description="Stochastic Navier-Stokes simulator and checks")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (default runs/<suite>)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
    sub = p.add_subparsers(dest="suite", required=True)
    sub.add_parser("simulate", parents=[common], help="one trajectory: snapshots, energy, clock")
    sub.add_parser("energy", parents=[common], help="ensemble energy balance")
    t = sub.add_parser("tangent", parents=[common], help="tangent and adjoint along a stored record")
    t.add_argument("--record", required=True, help="directory or record.json written by simulate")
    t.add_argument("--dir", required=True, help="direction: mode:k1,k2[;...] | random[:seed] | field CSV")
    t.add_argument("--phi", default="random", help="terminal condition for the adjoint (same syntax)")
    m = sub.add_parser("malliavin", parents=[common], help="Gram matrix on a window and the r(eps) probe")
    m.add_argument("--record", help="directory or record.json written by simulate")
    m.add_argument("--window", help="s,t (snapped to the substep grid)")
    m.add_argument("--nobs", type=float, help="observation cutoff N_obs")
    m.add_argument("--probe", action="store_true", help="run the X / r(eps) probe from the config")
    sub.add_parser("couple", parents=[common], help="control construction and residual decay")
    g = sub.add_parser("genset", parents=[common], help="generator condition and Z_n saturation")
    g.add_argument("--z0", help='forcing set, e.g. "(1,0),(-1,0),(1,1),(-1,-1)"')
    g.add_argument("--cutoff", type=float, default=8.0)
    g.add_argument("--max-levels", type=int, default=32)
    a = sub.add_parser("acceptance", parents=[common], help="run the acceptance criteria")
    a.add_argument("--only", help="comma-separated criterion numbers")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or Path("runs") / args.suite)
    out.mkdir(parents=True, exist_ok=True)
    for marker in ("FAILED", "INCOMPLETE"):
        (out / marker).unlink(missing_ok=True)
    try:
        cfg = load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
        cfg.validate("energy" if args.suite == "energy" else None)
    except ConfigError as exc:
        (out / "FAILED").write_text(str(exc) + "\n")
        print(str(exc), file=sys.stderr)
        return 2
    (out / "INCOMPLETE").write_text("run in progress\n")
    args._extra_timing = {}
    t0 = time.perf_counter()
    manifest = {"suite": args.suite, "config_hash": cfg.hash(), "seed": cfg.seed, "versions": versions()}
    try:
        checks = RUNNERS[args.suite](cfg, args, out)
    except Exception as exc:
        manifest.update({"status": "failed", "error": f"{type(exc).__name__}: {exc}"})
        write_json(out / "manifest.json", manifest)
        (out / "FAILED").write_text(traceback.format_exc())
        (out / "INCOMPLETE").unlink(missing_ok=True)
        print(f"{args.suite} failed: {exc}", file=sys.stderr)
        return 1
    report = checks.pop("_report", None)
    checks = {k: bool(v) for k, v in checks.items()}
    ok = all(checks.values())
    manifest.update({"checks": checks, "status": "passed" if ok else "checks_failed"})
    if report is not None:
        manifest["report"] = report
    write_json(out / "manifest.json", manifest)
    write_json(out / "timing.json", {"total_s": time.perf_counter() - t0, **args._extra_timing})
    (out / "INCOMPLETE").unlink(missing_ok=True)
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
