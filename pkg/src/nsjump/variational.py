"""Tangent, adjoint and second-variation solves along a stored trajectory.

The discrete tangent is the exact derivative of one ETD2RK substep, and the
adjoint is its exact transpose (discretize-then-transpose), so the duality
``<J xi, phi> = <xi, K phi>`` holds to round-off.  Noise enters additively
and therefore drops out of all linearisations.

Two interchangeable back ends exist: FFT sweeps (any lattice) and dense
triad-matrix sweeps compiled in :mod:`nsjump._kernels` (small lattices).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import _kernels
from .integrator import TrajectoryRecord, linear_rates, simulate
from .levy import forcing_Q
from .spectral import norm, project, spectral_ops

__all__ = [
    "TangentSolveSpec",
    "tangent",
    "adjoint",
    "second_variation",
    "malliavin_direction",
    "tabulate_direction",
    "highmode_decay_check",
    "growth_bound_fit",
    "RecordResolutionError",
]

DENSE_LIMIT = 320


class RecordResolutionError(ValueError):
    """A substep in the requested window is wider than the record's h_max."""


@dataclass
class TangentSolveSpec:
    """A solve request on ``[s, t]`` along ``record``."""

    record: TrajectoryRecord
    s: float
    t: float
    direction: np.ndarray
    second: np.ndarray | None = None

    def window(self) -> tuple[int, int]:
        return window_indices(self.record, self.s, self.t)


def window_indices(record: TrajectoryRecord, s: float, t: float) -> tuple[int, int]:
    if record.states is None:
        raise ValueError("variational solves need a record with stored states")
    if not 0 <= s <= t <= record.horizon + 1e-12:
        raise ValueError(f"window [{s}, {t}] outside the record horizon {record.horizon}")
    i0, i1 = record.index_of(s), record.index_of(t)
    h_max = record.noise.h_max
    if i1 > i0 and np.max(record.deltas[i0:i1]) > h_max * (1 + 1e-9):
        raise RecordResolutionError("substep gap exceeds h_max in the requested window")
    return i0, i1


_tables = _kernels.lattice_tables


def _use_dense(record, method):
    if method == "auto":
        return record.lattice.n <= DENSE_LIMIT
    if method not in ("dense", "fft"):
        raise ValueError("method must be 'auto', 'dense' or 'fft'")
    return method == "dense"


def _step_grids(ops, L, w, delta):
    E, p1, p2 = _kernels.etd_coeffs_np(L, delta)
    gw = ops.grids(w)
    a = E * w + p1 * ops.nonlinear(w, gw)
    ga = ops.grids(a)
    return E, p1, p2, gw, a, ga


def injection_from_events(record: TrajectoryRecord, i0: int, i1: int, v: np.ndarray) -> np.ndarray:
    """Per-step forcing amplitudes ``sum_e dl_e b_j v_{e,j}``: shape ``(i1-i0, d, m)``.

    ``v`` has shape ``(n_ev, d)`` or ``(m, n_ev, d)`` over the window's events.
    """
    nz = record.noise
    e0, e1 = nz.ev_ptr[i0], nz.ev_ptr[i1]
    v = np.asarray(v, dtype=float)
    single = v.ndim == 2
    if single:
        v = v[None]
    if v.shape[1] != e1 - e0 or v.shape[2] != record.model.d:
        raise ValueError(f"direction must be tabulated on the {e1 - e0} events of the window")
    w = nz.ev_dl[e0:e1, None] * np.asarray(record.model.b)[None, :]
    contrib = v * w[None]  # (m, n_ev, d)
    out = np.zeros((i1 - i0, record.model.d, v.shape[0]))
    steps = nz.ev_step[e0:e1] - i0
    np.add.at(out, steps, np.transpose(contrib, (1, 2, 0)))
    return out, single


def _tangent_block(record, i0, i1, X, inj=None, method="auto"):
    """``J`` applied to rows of ``X`` (m, n), with optional per-step injection."""
    lat = record.lattice
    fidx = record.model.forcing_indices(lat)
    L = linear_rates(record.model, lat)
    if _use_dense(record, method):
        if inj is None:
            inj = np.zeros((0, len(fidx), X.shape[0]))
        out = _kernels.tangent_sweep(record.states, record.deltas, L, i0, i1,
                                     np.ascontiguousarray(X.T), np.ascontiguousarray(inj), fidx,
                                     lat.n_plus, *_tables(lat))
        return np.asarray(out).T.copy()
    ops = spectral_ops(lat)
    X = X.copy()
    for s in range(i0, i1):
        delta = record.deltas[s]
        if delta > 0:
            E, p1, p2, gw, a, ga = _step_grids(ops, L, record.states[s], delta)
            dw = ops.dn(gw, X)
            da = E * X + p1 * dw
            X = da + p2 * (ops.dn(ga, da) - dw)
        if inj is not None:
            X[:, fidx] += inj[s - i0].T
    return X


def _adjoint_block(record, i0, i1, Lam, method="auto"):
    """Backward sweep of rows of ``Lam``; returns ``(K Lam, traces)``.

    ``traces[e, m, j] = b_j <K_{r_e, t} Lam_m, e_j>`` for every event in the window.
    """
    lat = record.lattice
    model = record.model
    fidx = model.forcing_indices(lat)
    b = np.asarray(model.b)
    nz = record.noise
    L = linear_rates(model, lat)
    if _use_dense(record, method):
        lam, tr = _kernels.adjoint_sweep(record.states, record.deltas, L, i0, i1, np.ascontiguousarray(Lam),
                                         nz.ev_ptr, nz.ev_dl, fidx, b, lat.n_plus, *_tables(lat))
        return np.asarray(lam), np.asarray(tr)
    ops = spectral_ops(lat)
    e_lo = nz.ev_ptr[i0]
    traces = np.zeros((nz.ev_ptr[i1] - e_lo, Lam.shape[0], len(fidx)))
    lam = Lam.copy()
    for s in range(i1 - 1, i0 - 1, -1):
        lo, hi = nz.ev_ptr[s] - e_lo, nz.ev_ptr[s + 1] - e_lo
        if hi > lo:
            traces[lo:hi] = b * lam[:, fidx]
        delta = record.deltas[s]
        if delta <= 0:
            continue
        E, p1, p2, gw, a, ga = _step_grids(ops, L, record.states[s], delta)
        lp2 = p2 * lam
        abar = lam + ops.dn_transpose(ga, lp2)
        lam = E * abar + ops.dn_transpose(gw, p1 * abar - lp2)
    return lam, traces


def _as_block(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != n:
        raise ValueError("direction does not match the record lattice")
    return x, single


def tangent(spec: TangentSolveSpec, method: str = "auto") -> np.ndarray:
    """``J_{s,t} xi`` for one direction ``(n,)`` or a batch ``(m, n)``."""
    i0, i1 = spec.window()
    X, single = _as_block(spec.direction, spec.record.lattice.n)
    out = _tangent_block(spec.record, i0, i1, X, method=method)
    return out[0] if single else out


def adjoint(spec: TangentSolveSpec, method: str = "auto") -> np.ndarray:
    """``K_{s,t} phi``: the transpose of ``J_{s,t}`` applied to terminal data."""
    i0, i1 = spec.window()
    X, single = _as_block(spec.direction, spec.record.lattice.n)
    out, _ = _adjoint_block(spec.record, i0, i1, X, method=method)
    return out[0] if single else out


def second_variation(spec: TangentSolveSpec) -> np.ndarray:
    """``J2_{s,t}(phi, psi)``: exact second derivative of the discrete flow."""
    if spec.second is None:
        raise ValueError("second variation needs two directions")
    rec = spec.record
    i0, i1 = spec.window()
    lat = rec.lattice
    ops = spectral_ops(lat)
    L = linear_rates(rec.model, lat)
    xp = np.asarray(spec.direction, dtype=float).copy()
    xq = np.asarray(spec.second, dtype=float).copy()
    z = np.zeros(lat.n)
    for s in range(i0, i1):
        delta = rec.deltas[s]
        if delta <= 0:
            continue
        E, p1, p2, gw, a, ga = _step_grids(ops, L, rec.states[s], delta)
        dp, dq, dz = ops.dn(gw, xp), ops.dn(gw, xq), ops.dn(gw, z)
        d2 = ops.d2n(ops.grids(xp), ops.grids(xq))
        ap = E * xp + p1 * dp
        aq = E * xq + p1 * dq
        az = E * z + p1 * (dz + d2)
        d2a = ops.d2n(ops.grids(ap), ops.grids(aq))
        z = az + p2 * (ops.dn(ga, az) + d2a - dz - d2)
        xp = ap + p2 * (ops.dn(ga, ap) - dp)
        xq = aq + p2 * (ops.dn(ga, aq) - dq)
    return z


def tabulate_direction(record: TrajectoryRecord, v, s: float = 0.0, t: float | None = None) -> np.ndarray:
    """Event table of a noise-time function ``v(u) -> R^d`` on ``(l_s, l_t]``.

    Each event carries ``v`` at the midpoint of its noise-time interval, so
    ``dl_e * v_e`` approximates ``int v du`` over that interval.
    """
    t = record.horizon if t is None else t
    nz = record.noise
    i0, i1 = record.index_of(s), record.index_of(t)
    e0, e1 = nz.ev_ptr[i0], nz.ev_ptr[i1]
    ell = nz.ell_grid()[i0] + np.concatenate([[0.0], np.cumsum(nz.ev_dl[e0:e1])])
    mid = 0.5 * (ell[:-1] + ell[1:])
    return np.array([np.asarray(v(u), dtype=float) for u in mid]).reshape(e1 - e0, record.model.d)


def malliavin_direction(record: TrajectoryRecord, v, t: float | None = None, method: str = "auto") -> np.ndarray:
    """``D^v w_t = sum_r J_{r,t} Q int_{l_{r-}}^{l_r} v du`` over all events up to ``t``.

    ``v`` is an event table ``(n_ev, d)`` covering ``(0, l_t]`` or a callable
    of noise time.
    """
    t = record.horizon if t is None else t
    if callable(v):
        v = tabulate_direction(record, v, 0.0, t)
    i0, i1 = window_indices(record, 0.0, t)
    inj, single = injection_from_events(record, i0, i1, v)
    X = np.zeros((inj.shape[2], record.lattice.n))
    out = _tangent_block(record, i0, i1, X, inj=inj, method=method)
    return out[0] if single else out


def highmode_decay_check(records, xi: np.ndarray, Ns, t: float | None = None) -> dict:
    """``||J_{0,t} Q_N xi||^2 / ||xi||^2`` across ``N`` with a pooled Spearman trend."""
    Ns = [float(N) for N in Ns]
    rows = []
    for rec in records:
        lat = rec.lattice
        tt = rec.horizon if t is None else t
        X = np.array([project(xi, N, "high", lat) for N in Ns])
        J = tangent(TangentSolveSpec(rec, 0.0, tt, X))
        rows.append(np.sum(J * J, axis=1) / np.sum(xi * xi))
    ratios = np.array(rows)
    NN = np.broadcast_to(np.array(Ns), ratios.shape)
    rho, p = stats.spearmanr(NN.ravel(), ratios.ravel())
    tt = records[0].horizon if t is None else t
    nu = records[0].model.nu
    return {
        "N": Ns,
        "t": tt,
        "median_ratio": np.median(ratios, axis=0).tolist(),
        "heat_envelope": [float(np.exp(-2 * nu * N**2 * tt)) for N in Ns],
        "spearman_rho": float(rho),
        "spearman_p": float(p),
        "decreasing": bool(rho < 0 and p < 0.01),
        "ratios": ratios.tolist(),
    }


def growth_bound_fit(records, xi: np.ndarray, t: float | None = None) -> dict:
    """Fit ``log sup_t ||J_{0,t} xi||^2 <= log C0 + C0 int ||w||_1^{4/3}`` on an ensemble."""
    logs, forcing = [], []
    for rec in records:
        lat = rec.lattice
        tt = rec.horizon if t is None else t
        i1 = rec.index_of(tt)
        # sup over the grid via one forward sweep with checkpoints
        X = np.asarray(xi, float)[None]
        sup = float(np.sum(X * X))
        marks = np.unique(np.linspace(0, i1, 21).astype(int))
        for a, b in zip(marks[:-1], marks[1:]):
            X = _tangent_block(rec, a, b, X)
            sup = max(sup, float(np.sum(X * X)))
        h1 = np.sum(lat.k2norm * rec.states[: i1 + 1] ** 2, axis=1) ** (2.0 / 3.0)
        integral = float(np.sum(0.5 * (h1[1:] + h1[:-1]) * rec.deltas[:i1]))
        logs.append(np.log(sup / np.sum(np.asarray(xi) ** 2)))
        forcing.append(integral)
    logs = np.array(logs)
    forcing = np.array(forcing)
    # smallest C0 with log C0 + C0 * F >= log-ratio for every member
    grid = np.exp(np.linspace(np.log(1e-4), np.log(1e4), 2000))
    ok = np.array([np.all(np.log(c) + c * forcing >= logs) for c in grid])
    c0 = float(grid[np.argmax(ok)]) if ok.any() else float("inf")
    slope = float(np.polyfit(forcing, logs, 1)[0]) if len(set(forcing)) > 1 else float("nan")
    return {"C0": c0, "log_ratio": logs.tolist(), "integral": forcing.tolist(), "slope": slope}


def resimulate(record: TrajectoryRecord, w0: np.ndarray, noise=None) -> TrajectoryRecord:
    """Re-run the record's model on the same (or a given) noise path."""
    return simulate(w0, record.model, record.noise if noise is None else noise, record.lattice)


def forcing_field(record: TrajectoryRecord, z: np.ndarray) -> np.ndarray:
    return forcing_Q(z, record.model, record.lattice)


def norms(record: TrajectoryRecord, alpha: float = 0.0) -> np.ndarray:
    return norm(record.states, alpha, record.lattice)
