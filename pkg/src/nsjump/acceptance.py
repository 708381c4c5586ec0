"""Desk-scale acceptance suite.

Each criterion is a function returning a :class:`CriterionResult`.  A
criterion passes only if every numerical check holds *and* it finishes
inside its runtime budget.  The sizes below (lattice cutoffs, ensemble
sizes, step caps) are the desk configurations; they are recorded in every
result so a report is self-describing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .coupling import (Observable, build_control, eproperty_probe, irreducibility_probe,
                       prepare_sample, residual_decay_experiment)
from .genset import check_condition, saturate
from .integrator import EnsembleResult, clock_from_path, energy_stats, simulate
from .levy import (SubordinatorConfig, SubordinatorPath, energy_injection_rate, make_rng,
                   sample_noise_increments, sample_subordinator)
from .malliavin import (NondegeneracyProbe, assemble_gram, design_set, gram_two_path,
                        nondegeneracy_inf, probe_sample, r_epsilon_statistic, resolvent_cutoff)
from .spectral import ModelConfig, WavenumberLattice, inner, norm, random_field, spectral_ops
from .variational import TangentSolveSpec, adjoint, second_variation, tangent

__all__ = ["CriterionResult", "CRITERIA", "run_acceptance"]


@dataclass
class CriterionResult:
    number: int
    name: str
    checks: dict
    seconds: float
    budget: float
    summary: str = ""
    details: dict = field(default_factory=dict)

    @property
    def within_budget(self) -> bool:
        return self.seconds <= self.budget

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.within_budget

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.checks.items() if not v]
        if not self.within_budget:
            failed.append("runtime")
        why = f" failed: {', '.join(failed)}" if failed else ""
        return (f"[{tag}] criterion {self.number:2d} {self.name}: {self.summary} "
                f"({self.seconds:.1f}s / {self.budget:.0f}s){why}")

    def to_json(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "checks": dict(self.checks), "within_budget": self.within_budget,
                "budget_s": self.budget, "summary": self.summary, "details": self.details}


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def _timed(number, name, budget, fn):
    t0 = time.perf_counter()
    checks, summary, details = fn()
    return CriterionResult(number, name, {k: bool(v) for k, v in checks.items()},
                           time.perf_counter() - t0, budget, summary, details)


DEFAULT_MODEL = ModelConfig()
DEFAULT_SUB = SubordinatorConfig()


# ---------------------------------------------------------------------------
# 1. spectral identities
# ---------------------------------------------------------------------------

def criterion_1(seed: int = 0, triples: int = 1000, cutoff: int = 32) -> CriterionResult:
    def body():
        lat = WavenumberLattice(cutoff)
        ops = spectral_ops(lat)
        rng = make_rng(seed, 1)
        skew = energy = iso = 0.0
        chunk = 100
        for start in range(0, triples, chunk):
            m = min(chunk, triples - start)
            x, v, w = (random_field(lat, rng, m) for _ in range(3))
            u = ops.biot_savart(x)
            b_uv = ops.bilinear(*u, v)
            b_uw = ops.bilinear(*u, w)
            scale = norm(u, 1, lat) * norm(v, 1, lat) * norm(w, 0, lat)
            skew = max(skew, float(np.max(np.abs(inner(b_uv, w) + inner(b_uw, v)) / scale)))
            kw = ops.biot_savart(w)
            e_scale = norm(kw, 1, lat) * norm(w, 1, lat) * norm(w, 0, lat)
            energy = max(energy, float(np.max(np.abs(inner(ops.nonlinear(w), w)) / e_scale)))
            for a in (-1.0, 0.0, 0.5, 1.0, 2.0):
                ref = norm(w, a - 1, lat)
                iso = max(iso, float(np.max(np.abs(norm(kw, a, lat) - ref) / ref)))
        checks = {"skew_symmetry": skew <= 1e-12, "energy_conservation": energy <= 1e-12,
                  "isometry": iso <= 1e-13}
        return checks, f"skew {skew:.1e}, energy {energy:.1e}, isometry {iso:.1e}", {
            "cutoff": cutoff, "triples": triples, "max_skew": skew, "max_energy": energy, "max_isometry": iso}
    return _timed(1, "spectral identities", 10.0, body)


# ---------------------------------------------------------------------------
# 2. energy balance
# ---------------------------------------------------------------------------

def criterion_2(seed: int = 0, trajectories: int = 500, cutoff: int = 4, h_max: float = 1e-3,
                T: float = 5.0, times=(1.0, 2.0, 5.0)) -> CriterionResult:
    def body():
        model, sub, lat = DEFAULT_MODEL, DEFAULT_SUB, WavenumberLattice(cutoff)
        w0 = np.zeros(lat.n)
        t = np.asarray(times, float)
        en, di, wk, res, fin = [], [], [], [], []
        for i in range(trajectories):
            path = sample_subordinator(sub, T, seed, stream=(2, i))
            noise = sample_noise_increments(path, model.d, seed, h_max=h_max, breakpoints=tuple(t), stream=(2, i))
            rec = simulate(w0, model, noise, lat, store=False)
            idx = [noise.index_of(x) for x in t]
            en.append(rec.energy[idx])
            di.append(rec.dissipation[idx])
            wk.append(rec.work[idx])
            res.append(rec.energy_residual())
            fin.append(rec.final)
        ens = EnsembleResult(times=t, energy=np.array(en), dissipation=np.array(di), work=np.array(wk),
                             energy0=np.zeros(trajectories), residual=np.array(res), final=np.array(fin))
        C = energy_injection_rate(sub, model)
        rep = energy_stats(ens, C, model.nu)
        checks = {"path_residual": rep["max_path_residual"] <= 1e-3, "balance_3se": rep["balance_ok"]}
        z = ", ".join(f"{v:+.2f}" for v in rep["balance_z"])
        return checks, f"max residual {rep['max_path_residual']:.1e}, balance z = [{z}]", {
            "cutoff": cutoff, "h_max": h_max, "trajectories": trajectories, **rep}
    return _timed(2, "energy balance", 300.0, body)


# ---------------------------------------------------------------------------
# 3. tangent / adjoint / second variation
# ---------------------------------------------------------------------------

def criterion_3(seed: int = 0, cutoff: int = 8, T: float = 1.0, h_max: float = 1e-2,
                trajectories: int = 5) -> CriterionResult:
    def body():
        model, sub, lat = DEFAULT_MODEL, DEFAULT_SUB, WavenumberLattice(cutoff)
        rng = make_rng(seed, 3)
        ratios, duality, j2_ratios, j2_err = [], [], [], []
        for i in range(trajectories):
            path = sample_subordinator(sub, T, seed, stream=(3, i))
            noise = sample_noise_increments(path, model.d, seed, h_max=h_max, stream=(3, i))
            w0 = _unit(random_field(lat, rng))
            xi, phi, psi = (_unit(random_field(lat, rng)) for _ in range(3))
            rec = simulate(w0, model, noise, lat)
            J = tangent(TangentSolveSpec(rec, 0.0, T, xi))
            K = adjoint(TangentSolveSpec(rec, 0.0, T, phi))
            duality.append(abs(inner(J, phi) - inner(xi, K)))
            err = [np.linalg.norm(J - (simulate(w0 + h * xi, model, noise, lat, store=False).final - rec.final) / h)
                   for h in (1e-3, 1e-4)]
            ratios.append(err[0] / err[1])
            Z = second_variation(TangentSolveSpec(rec, 0.0, T, xi, psi))

            def f(a, b):
                return simulate(w0 + a * xi + b * psi, model, noise, lat, store=False).final
            e2 = []
            for h in (1e-2, 1e-3):
                fd = (f(h, h) - f(h, 0) - f(0, h) + rec.final) / h ** 2
                e2.append(np.linalg.norm(fd - Z) / np.linalg.norm(Z))
            j2_ratios.append(e2[0] / e2[1])
            j2_err.append(e2[1])
        ratios, j2_ratios = np.array(ratios), np.array(j2_ratios)
        checks = {
            "fd_first_order": bool(np.all(np.abs(ratios - 10) <= 3)),
            "duality": max(duality) <= 1e-6,
            "second_variation_converges": bool(np.all(j2_ratios >= 7)) and max(j2_err) <= 1e-2,
        }
        return checks, (f"FD ratios {ratios.min():.2f}..{ratios.max():.2f}, duality {max(duality):.1e}, "
                        f"J2 ratios {j2_ratios.min():.2f}..{j2_ratios.max():.2f}"), {
            "cutoff": cutoff, "fd_ratios": ratios.tolist(), "duality": duality,
            "j2_ratios": j2_ratios.tolist(), "j2_rel_err_h1e-3": j2_err}
    return _timed(3, "tangent and adjoint", 120.0, body)


# ---------------------------------------------------------------------------
# 4. Malliavin Gram
# ---------------------------------------------------------------------------

def heat_gram_oracle(model: ModelConfig, lattice: WavenumberLattice, N_obs, r: float, dl: float, t: float):
    """Closed-form Gram for the zero trajectory and a single atom at ``r``."""
    obs = lattice.observation_indices(N_obs)
    G = np.zeros((len(obs), len(obs)))
    pos = {int(o): a for a, o in enumerate(obs)}
    for k, b in zip(model.z0, model.b):
        j = lattice.index(k)
        if j in pos:
            a = pos[j]
            G[a, a] += dl * b * b * np.exp(-2 * model.nu * lattice.k2norm[j] * (t - r))
    return G


def heat_gram_case(model: ModelConfig, lattice: WavenumberLattice, N_obs=8, r=0.3, dl=0.7, t=1.0,
                   h_max=1e-2):
    path = SubordinatorPath(t, np.array([r]), np.array([dl]), 0.0)
    noise = sample_noise_increments(path, model.d, 0, h_max=h_max).silenced()
    rec = simulate(np.zeros(lattice.n), model, noise, lattice)
    return assemble_gram(rec, 0.0, t, N_obs).G, heat_gram_oracle(model, lattice, N_obs, r, dl, t)


def criterion_4(seed: int = 0, windows: int = 100, cutoff: int = 8, N_obs: float = 8,
                h_max: float = 1e-2) -> CriterionResult:
    def body():
        model, sub, lat = DEFAULT_MODEL, DEFAULT_SUB, WavenumberLattice(cutoff)
        rng = make_rng(seed, 4)
        floors, asym, agree = [], [], []
        for i in range(windows):
            s = float(rng.uniform(0.0, 0.6))
            t = s + float(rng.uniform(0.05, 0.3))
            path = sample_subordinator(sub, t, seed, stream=(4, i))
            noise = sample_noise_increments(path, model.d, seed, h_max=h_max, breakpoints=(s,), stream=(4, i))
            rec = simulate(_unit(random_field(lat, rng)), model, noise, lat)
            g = assemble_gram(rec, s, t, N_obs)
            G2 = gram_two_path(rec, s, t, N_obs)
            scale = np.linalg.norm(g.G, 2)
            floors.append(g.psd_floor())
            asym.append(float(np.linalg.norm(G2 - G2.T, 2) / scale))
            agree.append(float(np.linalg.norm(G2 - g.G, 2) / scale))
        hm = ModelConfig(b=(1.0, 0.5, 2.0, 1.5))
        G, ref = heat_gram_case(hm, lat, N_obs)
        heat = float(np.max(np.abs(G - ref)) / np.max(np.abs(ref)))
        checks = {"symmetric": max(asym) <= 1e-8, "psd_floor": min(floors) >= -1e-10,
                  "two_path": max(agree) <= 1e-8, "heat_oracle": heat <= 1e-8}
        return checks, (f"floor {min(floors):.1e}, two-path {max(agree):.1e}, "
                        f"asym {max(asym):.1e}, heat {heat:.1e}"), {
            "cutoff": cutoff, "N_obs": N_obs, "windows": windows, "size": int(G.shape[0]),
            "min_floor": min(floors), "max_two_path": max(agree), "max_asym": max(asym), "heat_rel_err": heat}
    return _timed(4, "Malliavin Gram", 300.0, body)


# ---------------------------------------------------------------------------
# 5. non-degeneracy
# ---------------------------------------------------------------------------

C5_PROBE = NondegeneracyProbe(alpha=0.5, N=4, radius=1.0, samples=63, N_obs=None, half_window=True,
                              h_max=1e-2, horizon=200.0, seed=0)


def criterion_5(probe: NondegeneracyProbe = C5_PROBE, cutoff: int = 4) -> CriterionResult:
    def body():
        lat = WavenumberLattice(cutoff)
        rep = r_epsilon_statistic(probe, DEFAULT_MODEL, lat, DEFAULT_SUB)
        r = np.array(rep["r"])
        lo, hi = np.array(rep["ci_low"]), np.array(rep["ci_high"])
        width = max(hi[0] - lo[0], hi[-1] - lo[-1])
        checks = {"X_positive": rep["X_min"] > 0, "nonincreasing": rep["nonincreasing"],
                  "drop_exceeds_ci": r[0] - r[-1] > width}
        X = rep.pop("X")
        rep.update({"X_quantiles": np.quantile(X, [0.0, 0.1, 0.5, 0.9, 1.0]).tolist(),
                    "total_samples": int(X.size), "cutoff": cutoff})
        rs = ", ".join(f"{v:.3f}" for v in r)
        return checks, f"X_min {rep['X_min']:.2e}, X_median {np.median(X):.2e}, r = [{rs}]", rep
    return _timed(5, "non-degeneracy", 900.0, body)


# ---------------------------------------------------------------------------
# 6. operator norms
# ---------------------------------------------------------------------------

def criterion_6(seed: int = 0, samples: int = 40, cutoff: int = 4, betas=(1e-4, 1e-2),
                alpha: float = 0.5, N: float = 4, eps_grid=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6)) -> CriterionResult:
    def body():
        lat = WavenumberLattice(cutoff)
        probe = NondegeneracyProbe(alpha=alpha, N=N, N_obs=None, half_window=True, h_max=1e-2, seed=seed)
        design = design_set(lat, 1.0, seed)
        ok_astar = ok_inv = ok_lemma = True
        worst_astar = worst_inv = 0.0
        checked = 0
        margins = []
        for i in range(samples):
            smp = probe_sample(design[i % len(design)], DEFAULT_MODEL, lat, DEFAULT_SUB, probe, seed, stream=(6, i))
            g, X = smp["gram"], smp["X_lower"]
            for beta in betas:
                rr = resolvent_cutoff(g, beta, N)
                ok_astar &= rr.ok_astar
                ok_inv &= rr.ok_inv_sqrt
                worst_astar = max(worst_astar, rr.astar_norm)
                worst_inv = max(worst_inv, rr.inv_sqrt_norm * np.sqrt(beta))
                for eps in [e for e in eps_grid if X >= e] + ([X] if X > 0 else []):
                    bound = max(alpha, np.sqrt(beta / eps))
                    checked += 1
                    margins.append(bound - rr.norm_R_low)
                    ok_lemma &= rr.norm_R_low <= bound * (1 + 1e-9)
        checks = {"astar_bound": ok_astar, "inv_sqrt_bound": ok_inv, "cutoff_bound": ok_lemma}
        return checks, (f"max ||A*(G+b)^-1/2|| {worst_astar:.6f}, max sqrt(b)||(G+b)^-1/2|| {worst_inv:.6f}, "
                        f"cutoff bound checked {checked}x"), {
            "cutoff": cutoff, "samples": samples, "betas": list(betas), "max_astar": worst_astar,
            "max_scaled_inv_sqrt": worst_inv, "lemma_checks": checked,
            "min_lemma_margin": float(min(margins)) if margins else None}
    return _timed(6, "operator norms", 120.0, body)


# ---------------------------------------------------------------------------
# 7. coupling construction
# ---------------------------------------------------------------------------

def coupling_direction(lattice: WavenumberLattice) -> np.ndarray:
    return _unit(lattice.basis((1, 0)) + lattice.basis((2, 1)))


def criterion_7(seed: int = 0, samples: int = 100, cutoff: int = 4, n_windows: int = 6,
                betas=(1e-4, 1e-3, 1e-2, 1e-1), Ns=(4, 8), n_boot: int = 2000) -> CriterionResult:
    def body():
        model, lat = DEFAULT_MODEL, WavenumberLattice(cutoff)
        kappa = 1e-3 * model.nu / model.B0
        xi = coupling_direction(lat)
        S = [prepare_sample(np.zeros(lat.n), model, lat, DEFAULT_SUB, kappa=kappa, n_windows=n_windows,
                            seed=seed, stream=(7, i)) for i in range(samples)]
        rep = residual_decay_experiment(S, xi, betas, Ns, n_boot=n_boot, seed=seed)
        beta, N = rep["tuned"]["beta"], rep["tuned"]["N"]
        ident = recur = 0.0
        idle = True
        for s in S:
            st = build_control(s, xi, beta, N)
            ident = max(ident, float(np.max(st.identity_residual)))
            recur = max(recur, float(np.max(st.recursion_residual)))
            idle &= st.idle_zero
        tr = rep["tuned_report"]
        checks = {"pathwise_identity": ident <= 1e-6, "recursion": recur <= 1e-6, "idle_zero": idle,
                  "geometric_decay": tr["geometric_decay"]}
        med = ", ".join(f"{m:.3g}" for m in tr["median"])
        skipped = [n for n in Ns if n > lat.cutoff]
        return checks, (f"identity {ident:.1e}, recursion {recur:.1e}, tuned beta={beta:g} N={N:g}, "
                        f"median [{med}], slope CI [{tr['slope_ci'][0]:.3f}, {tr['slope_ci'][1]:.3f}]"), {
            "cutoff": cutoff, "samples": samples, "identity_max": ident, "recursion_max": recur,
            "N_skipped_above_cutoff": skipped, **rep}
    return _timed(7, "coupling construction", 1200.0, body)


# ---------------------------------------------------------------------------
# 8. stopping-time moments
# ---------------------------------------------------------------------------

def criterion_8(seed: int = 0, paths: int = 10_000, horizon: float = 40.0) -> CriterionResult:
    def body():
        model = DEFAULT_MODEL
        kappa = 1e-3 * model.nu / model.B0
        vals = np.empty(paths)
        for i in range(paths):
            p = sample_subordinator(DEFAULT_SUB, horizon, seed, stream=(8, i))
            sigma = clock_from_path(p, kappa, model, max_ticks=1).sigma[0]
            vals[i] = np.exp(10 * model.nu * sigma)
        running = np.cumsum(vals) / np.arange(1, paths + 1)
        tail = running[paths // 2:]
        spread = float((tail.max() - tail.min()) / running[-1])
        checks = {"finite": bool(np.all(np.isfinite(vals))), "stable": spread < 0.05}
        return checks, f"E exp(10 nu sigma1) ~ {running[-1]:.5g}, last-half spread {spread:.2e}", {
            "kappa": kappa, "paths": paths, "estimate": float(running[-1]), "spread": spread,
            "sigma_mean": float(np.mean(np.log(vals) / (10 * model.nu)))}
    return _timed(8, "stopping-time moments", 60.0, body)


# ---------------------------------------------------------------------------
# 9. weak irreducibility
# ---------------------------------------------------------------------------

C9_SUB = SubordinatorConfig(eps=1e-2)


def criterion_9(seed: int = 0, samples: int = 10_000, cutoff: int = 2, h_max: float = 1e-2,
                sub: SubordinatorConfig = C9_SUB) -> CriterionResult:
    def body():
        lat = WavenumberLattice(cutoff)
        rep = irreducibility_probe(DEFAULT_MODEL, lat, sub, C=1.0, gamma=0.1, samples=samples, seed=seed,
                                   h_max=h_max)
        checks = {"ball_hit_positive": rep["positive"], "small_noise_positive": rep["small_noise_positive"]}
        return checks, (f"T={rep['T']:.1f}, hits {sum(rep['hits'])}/{len(rep['hits']) * rep['samples_per_design']}, "
                        f"worst-design CI low {rep['ci_low']:.2e}, min ||w_T|| {rep['norm_quantiles'][0]:.3f}, "
                        f"log small-noise bound {rep['log_p_small_noise']:.2f}"), {
            "cutoff": cutoff, "eps_S": sub.eps, "h_max": h_max, **rep}
    return _timed(9, "weak irreducibility", 600.0, body)


# ---------------------------------------------------------------------------
# 10. e-property
# ---------------------------------------------------------------------------

def criterion_10(seed: int = 0, samples: int = 200, cutoff: int = 4, h_max: float = 1e-2) -> CriterionResult:
    def body():
        lat = WavenumberLattice(cutoff)
        w0 = design_set(lat, 1.0, seed)[1]
        rep = eproperty_probe(DEFAULT_MODEL, lat, DEFAULT_SUB, w0s=[w0], samples=samples, seed=seed,
                              h_max=h_max, observables=[Observable("sin_mode", (1, 0), 1.0)])
        r = rep["reports"][0]
        checks = {"decreasing_in_delta": r["decreasing_in_delta"], "no_upward_trend": r["no_upward_trend"],
                  "lipschitz_bound": r["bound_ok"]}
        sups = ", ".join(f"{v:.2e}" for v in r["sup_diff"])
        ps = ", ".join(f"{p:.2f}" for p in r["mk_p_up"])
        return checks, f"sup diff [{sups}], MK p(up) [{ps}]", {"cutoff": cutoff, **rep}
    return _timed(10, "e-property", 1800.0, body)


# ---------------------------------------------------------------------------
# 11. generator saturation
# ---------------------------------------------------------------------------

EXAMPLE_Z0 = [(1, 0), (-1, 0), (1, 1), (-1, -1)]
NEGATIVE_Z0 = {"collinear": [(1, 0), (-1, 0)], "equal_moduli": [(1, 1), (-1, -1), (1, -1), (-1, 1)]}


def criterion_11(N: float = 8, max_levels: int = 32) -> CriterionResult:
    def body():
        rep = saturate(EXAMPLE_Z0, N, max_levels)
        neg = {k: saturate(z, N, max_levels) for k, z in NEGATIVE_Z0.items()}
        checks = {"example_flags": rep.flags.ok, "example_saturates": rep.saturated,
                  "negatives_fail_flags": all(not r.flags.ok for r in neg.values()),
                  "negatives_never_saturate": all(not r.saturated for r in neg.values())}
        return checks, f"example saturates |k|<={N:g} at level {rep.saturation_level}", {
            "example": rep.to_json(), "negatives": {k: r.to_json() for k, r in neg.items()},
            "flags": {k: check_condition(z).to_json() for k, z in NEGATIVE_Z0.items()}}
    return _timed(11, "generator saturation", 1.0, body)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
            7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11}


def run_acceptance(only=None, echo=print) -> list[CriterionResult]:
    """Run the selected criteria (all by default), echoing one line each."""
    numbers = sorted(CRITERIA) if not only else sorted(set(int(k) for k in only))
    out = []
    for k in numbers:
        res = CRITERIA[k]()
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
