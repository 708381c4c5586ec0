"""Jump-adapted ETD2RK integration, energy diagnostics and the stopping clock.

Each substep advances the deterministic part with the two-stage exponential
Runge-Kutta scheme (heat flow exact per mode) and then adds the forced
increment ``Q * dL`` of the events ending that substep.  Ensembles run in
lockstep as one batch; members with fewer substeps are padded with
zero-length steps, which leave the state unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .levy import NoisePath, SubordinatorPath, energy_injection_rate, forcing_Q
from .spectral import ModelConfig, SpectralOps, WavenumberLattice, spectral_ops

__all__ = [
    "BlowUpError",
    "NoCrossingError",
    "TrajectoryRecord",
    "EnsembleResult",
    "StoppingClock",
    "step_flow",
    "simulate",
    "simulate_ensemble",
    "energy_stats",
    "advance_clock",
    "clock_from_path",
    "kappa_cap",
]

DEFAULT_H_MAX = 1e-3
DEFAULT_CEILING = 1e6


class BlowUpError(RuntimeError):
    """The state norm exceeded the configured ceiling."""


class NoCrossingError(RuntimeError):
    """The clock criterion never exceeded 1 within the horizon."""


def linear_rates(model: ModelConfig, lattice: WavenumberLattice) -> np.ndarray:
    return -model.nu * lattice.k2norm


def _etd(L, delta):
    """Coefficients for a batch of step sizes: arrays of shape ``delta.shape + (n,)``."""
    return _kernels.etd_coeffs_np(L, np.asarray(delta, dtype=float)[..., None])


def _deterministic(ops: SpectralOps, w, E, p1, p2):
    Nw = ops.nonlinear(w)
    a = E * w + p1 * Nw
    Na = ops.nonlinear(a)
    return a + p2 * (Na - Nw)


def step_flow(w, delta: float, dL, model: ModelConfig, lattice: WavenumberLattice, *,
              h_max: float = DEFAULT_H_MAX, ceiling: float = DEFAULT_CEILING) -> np.ndarray:
    """One substep: ETD2RK deterministic flow, then ``+ Q dL`` if given."""
    if not 0 < delta <= h_max * (1 + 1e-12):
        raise ValueError(f"substep {delta} outside (0, h_max={h_max}]")
    ops = spectral_ops(lattice)
    E, p1, p2 = _etd(linear_rates(model, lattice), delta)
    out = _deterministic(ops, np.asarray(w, float), E, p1, p2)
    if dL is not None:
        out = out + forcing_Q(dL, model, lattice)
    nrm = np.sqrt(np.sum(out * out, axis=-1))
    if np.any(~np.isfinite(nrm)) or np.any(nrm > ceiling):
        raise BlowUpError(f"state norm {np.max(nrm):.3e} exceeds ceiling {ceiling:.1e}")
    return out


@dataclass
class TrajectoryRecord:
    """States on the substep grid of a noise path, with energy bookkeeping.

    ``states[s]`` is the state at ``grid[s]`` after the events of that time.
    ``energy``, ``dissipation`` (``2 nu int ||w||_1^2``) and ``work``
    (``sum 2<w_->, Q g> + ||Q g||^2``) are cumulative per grid point.
    """

    model: ModelConfig
    lattice: WavenumberLattice
    noise: NoisePath
    states: np.ndarray | None
    energy: np.ndarray
    dissipation: np.ndarray
    work: np.ndarray
    noise_energy: np.ndarray
    final: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return self.noise.grid

    @property
    def deltas(self) -> np.ndarray:
        return self.noise.deltas

    @property
    def path(self) -> SubordinatorPath:
        return self.noise.path

    @property
    def horizon(self) -> float:
        return self.noise.horizon

    def index_of(self, t: float) -> int:
        return self.noise.index_of(t)

    def state_at(self, t: float) -> np.ndarray:
        if self.states is None:
            raise ValueError("record was produced without stored states")
        return self.states[self.index_of(t)]

    def energy_residual(self) -> float:
        """Relative residual of the discrete Ito energy identity over the run."""
        e0, eT = self.energy[0], self.energy[-1]
        resid = eT + self.dissipation[-1] - self.work[-1] - e0
        scale = e0 + eT + self.dissipation[-1] + self.noise_energy[-1]
        return float(abs(resid) / scale) if scale > 0 else float(abs(resid))


@dataclass
class EnsembleResult:
    """Per-member diagnostics sampled at fixed output times."""

    times: np.ndarray
    energy: np.ndarray          # (B, nt)
    dissipation: np.ndarray     # (B, nt)
    work: np.ndarray            # (B, nt)
    energy0: np.ndarray         # (B,)
    residual: np.ndarray        # (B,) relative Ito residual over the full run
    final: np.ndarray           # (B, n)
    records: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.energy0)


def _pad_schedule(noises, d):
    S = max(nz.n_steps for nz in noises)
    B = len(noises)
    deltas = np.zeros((S, B))
    incs = np.zeros((S, B, d))
    for b, nz in enumerate(noises):
        deltas[: nz.n_steps, b] = nz.deltas
        incs[: nz.n_steps, b] = nz.step_inc
    return deltas, incs


def _run_batch(w0, model, lattice, noises, *, store, ceiling, need_sq_noise=True):
    ops = spectral_ops(lattice)
    L = linear_rates(model, lattice)
    B = len(noises)
    d = model.d
    deltas, incs = _pad_schedule(noises, d)
    S = deltas.shape[0]
    k2 = lattice.k2norm
    w = np.array(w0, dtype=float).reshape(B, lattice.n)
    energy = np.zeros((S + 1, B))
    diss = np.zeros((S + 1, B))
    work = np.zeros((S + 1, B))
    noise_en = np.zeros((S + 1, B))
    energy[0] = np.sum(w * w, axis=1)
    states = np.empty((S + 1, B, lattice.n)) if store else None
    if store:
        states[0] = w
    fidx = model.forcing_indices(lattice)
    bvec = np.asarray(model.b)
    common = np.median(deltas[:, 0]) if S else 0.0
    E0, p10, p20 = _etd(L, common)
    h1 = np.sum(k2 * w * w, axis=1)
    for s in range(S):
        delta = deltas[s]
        E = np.broadcast_to(E0, (B, lattice.n)).copy()
        p1 = np.broadcast_to(p10, (B, lattice.n)).copy()
        p2 = np.broadcast_to(p20, (B, lattice.n)).copy()
        odd = np.flatnonzero(delta != common)
        if len(odd):
            E[odd], p1[odd], p2[odd] = _etd(L, delta[odd])
        wd = _deterministic(ops, w, E, p1, p2)
        h1_new = np.sum(k2 * wd * wd, axis=1)
        diss[s + 1] = diss[s] + model.nu * delta * (h1 + h1_new)
        q = incs[s] * bvec
        cross = np.sum(wd[:, fidx] * q, axis=1)
        qq = np.sum(q * q, axis=1)
        work[s + 1] = work[s] + 2.0 * cross + qq
        noise_en[s + 1] = noise_en[s] + qq
        wd[:, fidx] += q
        w = wd
        en = np.sum(w * w, axis=1)
        energy[s + 1] = en
        if not np.all(np.isfinite(en)) or np.any(en > ceiling * ceiling):
            bad = int(np.argmax(np.where(np.isfinite(en), en, np.inf)))
            raise BlowUpError(
                f"member {bad}: state norm exceeded ceiling {ceiling:.1e} at step {s + 1}")
        h1 = np.sum(k2 * w * w, axis=1)
        if store:
            states[s + 1] = w
    return w, energy, diss, work, noise_en, states


DENSE_LIMIT = 320


def _simulate_dense(w0, model, noise, lattice, store, ceiling):
    out = _kernels.integrate_dense(
        w0, noise.deltas, np.ascontiguousarray(noise.step_inc), linear_rates(model, lattice), lattice.k2norm,
        model.nu, model.forcing_indices(lattice), np.asarray(model.b), store, ceiling,
        lattice.n_plus, *_kernels.lattice_tables(lattice)[:5])
    w, states, en, di, wk, ne, status = out
    if status >= 0:
        raise BlowUpError(f"state norm exceeded ceiling {ceiling:.1e} at step {status}")
    return TrajectoryRecord(model, lattice, noise, states if store else None, en, di, wk, ne, w)


def simulate(w0, model: ModelConfig, noise: NoisePath, lattice: WavenumberLattice, *,
             store: bool = True, ceiling: float = DEFAULT_CEILING, method: str = "auto") -> TrajectoryRecord:
    """Integrate one trajectory over the grid of ``noise``.

    ``method='dense'`` runs the compiled triad-sum integrator (small
    lattices), ``'fft'`` the pseudo-spectral one; ``'auto'`` picks dense when
    numba is active and the lattice has at most ``DENSE_LIMIT`` modes.
    """
    w0 = np.asarray(w0, dtype=float)
    if w0.shape != (lattice.n,):
        raise ValueError("initial condition does not match the lattice")
    if noise.d != model.d:
        raise ValueError("noise dimension differs from the number of forcing modes")
    if method == "auto":
        method = "dense" if (_kernels.USE_NUMBA and lattice.n <= DENSE_LIMIT) else "fft"
    if method == "dense":
        return _simulate_dense(w0, model, noise, lattice, store, ceiling)
    if method != "fft":
        raise ValueError("method must be 'auto', 'dense' or 'fft'")
    w, en, di, wk, ne, st = _run_batch(w0[None], model, lattice, [noise], store=store, ceiling=ceiling)
    return TrajectoryRecord(model, lattice, noise, None if st is None else st[:, 0], en[:, 0], di[:, 0],
                            wk[:, 0], ne[:, 0], w[0])


def simulate_ensemble(w0s, model: ModelConfig, noises: list[NoisePath], lattice: WavenumberLattice, *,
                      times=None, store: bool = False, ceiling: float = DEFAULT_CEILING) -> EnsembleResult:
    """Integrate a batch of trajectories in lockstep.

    ``w0s`` is ``(B, n)`` or a single ``(n,)`` state shared by all members.
    Diagnostics are sampled at ``times`` (grid points of every member).
    """
    B = len(noises)
    w0s = np.asarray(w0s, dtype=float)
    if w0s.ndim == 1:
        w0s = np.broadcast_to(w0s, (B, lattice.n))
    w, en, di, wk, ne, st = _run_batch(w0s, model, lattice, noises, store=store, ceiling=ceiling)
    times = np.atleast_1d(np.asarray(times if times is not None else [noises[0].horizon], float))
    nt = len(times)
    out_e = np.zeros((B, nt))
    out_d = np.zeros((B, nt))
    out_w = np.zeros((B, nt))
    resid = np.zeros(B)
    records = []
    for b, nz in enumerate(noises):
        S = nz.n_steps
        idx = [nz.index_of(t) for t in times]
        out_e[b], out_d[b], out_w[b] = en[idx, b], di[idx, b], wk[idx, b]
        e0, eT = en[0, b], en[S, b]
        r = eT + di[S, b] - wk[S, b] - e0
        scale = e0 + eT + di[S, b] + ne[S, b]
        resid[b] = abs(r) / scale if scale > 0 else abs(r)
        if store:
            records.append(TrajectoryRecord(model, lattice, nz, st[: S + 1, b].copy(), en[: S + 1, b],
                                            di[: S + 1, b], wk[: S + 1, b], ne[: S + 1, b], w[b]))
    return EnsembleResult(times, out_e, out_d, out_w, en[0].copy(), resid, w, records)


def energy_stats(ens: EnsembleResult, C: float, nu: float, *, noise_off: bool = False) -> dict:
    """Monte Carlo energy curves and the exact balance check.

    Balance: ``E||w_t||^2 + 2 nu int E||w||_1^2 - ||w_0||^2 - C t`` should be
    zero; the z-score divides by the Monte Carlo standard error.
    """
    B = ens.size
    if B < 2:
        raise ValueError("need at least two trajectories")
    t = ens.times
    se = lambda x: x.std(axis=0, ddof=1) / np.sqrt(B)
    bal = ens.energy + ens.dissipation - ens.energy0[:, None] - C * t[None, :]
    bal_mean, bal_se = bal.mean(axis=0), se(bal)
    z = np.where(bal_se > 0, bal_mean / np.where(bal_se > 0, bal_se, 1.0), np.where(bal_mean == 0, 0.0, np.inf))
    a3_lhs = ens.dissipation / 4.0
    a3_rhs = ens.energy0.mean() + 0.5 * C * t
    report = {
        "n_trajectories": B,
        "times": t.tolist(),
        "mean_energy": ens.energy.mean(axis=0).tolist(),
        "se_energy": se(ens.energy).tolist(),
        "mean_dissipation": ens.dissipation.mean(axis=0).tolist(),
        "se_dissipation": se(ens.dissipation).tolist(),
        "C": C,
        "balance_mean": bal_mean.tolist(),
        "balance_se": bal_se.tolist(),
        "balance_z": z.tolist(),
        "balance_ok": bool(np.all(np.abs(z) <= 3.0)),
        "a3_lhs": a3_lhs.mean(axis=0).tolist(),
        "a3_rhs": np.atleast_1d(a3_rhs).tolist(),
        "a3_ok": bool(np.all(a3_lhs.mean(axis=0) - 3 * se(a3_lhs) <= a3_rhs)),
        "max_path_residual": float(ens.residual.max()),
    }
    if noise_off:
        bound = np.exp(-nu * t) * ens.energy0.mean()
        report["poincare_bound"] = bound.tolist()
        report["poincare_ok"] = bool(np.all(ens.energy.mean(axis=0) <= bound * (1 + 1e-12)))
    return report


# ---------------------------------------------------------------------------
# stopping clock
# ---------------------------------------------------------------------------

@dataclass
class StoppingClock:
    """Clock ticks ``sigma_1 < sigma_2 < ...`` and the per-interval statistics."""

    kappa: float
    sigma: np.ndarray      # excludes sigma_0 = 0
    X: np.ndarray
    Y: np.ndarray
    theta_running: np.ndarray

    @property
    def ticks(self) -> np.ndarray:
        return np.concatenate([[0.0], self.sigma])

    @property
    def theta(self) -> float:
        return float(self.theta_running[-1]) if len(self.theta_running) else float("nan")

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "sigma": self.sigma.tolist(),
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "theta_running": self.theta_running.tolist(),
            "theta": self.theta,
        }


def kappa_cap(model: ModelConfig, drift: float) -> float:
    """Largest kappa for which the criterion still increases between atoms."""
    return np.inf if drift <= 0 else model.nu / (8.0 * model.B0 * drift)


def clock_from_path(path: SubordinatorPath, kappa: float, model: ModelConfig,
                    max_ticks: int = 100_000) -> StoppingClock:
    """Clock ticks from the subordinator alone (exact affine roots between atoms)."""
    cap = kappa_cap(model, path.drift)
    if not 0 < kappa <= cap:
        raise ValueError(f"clock precondition violated: kappa must lie in (0, {cap:.4g}], got {kappa}")
    g = 8.0 * model.B0 * kappa
    sigma = _kernels.clock_scan(path.times, path.sizes, path.drift, path.horizon, model.nu, g, max_ticks)
    sigma = np.asarray(sigma)
    if len(sigma) == 0:
        raise NoCrossingError(f"no clock crossing within horizon {path.horizon}")
    ticks = np.concatenate([[0.0], sigma])
    X = np.asarray(_kernels.x_integrals(ticks, path.times, path.sizes, path.drift, model.nu, 2.0 * g))
    ell = path.ell(ticks)
    Y = np.diff(ell)
    n = np.arange(1, len(X) + 1)
    theta = np.maximum.accumulate(np.cumsum(X) / n) + np.maximum.accumulate(np.cumsum(Y) / n)
    return StoppingClock(float(kappa), sigma, X, Y, theta)


def advance_clock(record: TrajectoryRecord, kappa: float, max_ticks: int = 100_000) -> StoppingClock:
    """Clock of the subordinator path underlying ``record``."""
    return clock_from_path(record.path, kappa, record.model, max_ticks)


def default_energy_constant(sub_cfg, model) -> float:
    return energy_injection_rate(sub_cfg, model)
