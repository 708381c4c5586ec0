"""Hot loops with a numba path and a pure-numpy fallback.

Set ``NSJUMP_DISABLE_NUMBA=1`` before import to run the numpy versions.
Both paths compute the same quantities; the benchmark in
``benchmarks/bench_kernels.py`` compares them.

Kernels:
  * triad tables and the dense linearisation ``DN(w)`` for small lattices,
  * whole-window dense tangent / adjoint sweeps used by the Gram assembly,
  * the stopping-clock crossing scan and the exact X_n segment integrals.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("NSJUMP_DISABLE_NUMBA", "0").strip().lower()
USE_NUMBA = _flag in ("", "0", "false", "no")

if USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover
        USE_NUMBA = False

JIT_OPTIONS = {"nogil": True, "cache": True, "fastmath": False}


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(**JIT_OPTIONS)(fn)
    return fn


# ---------------------------------------------------------------------------
# triad tables
# ---------------------------------------------------------------------------

def triad_table(lattice):
    """All (k plus, q, p = k - q) with k, q, p on the lattice.

    Returns index arrays ``(tk, tq, tp)`` and two weights: ``cross = p^perp . q``
    and ``inv_p = 1/|p|^2``; ``inv_q = 1/|q|^2`` is looked up from ``tq``.
    """
    h = lattice.n_plus
    kp = lattice.k[:h]
    kq = lattice.k
    p1 = kp[:, None, 0] - kq[None, :, 0]
    p2 = kp[:, None, 1] - kq[None, :, 1]
    ip = lattice.lookup(p1, p2)
    tk, tq = np.nonzero(ip >= 0)
    tp = ip[tk, tq]
    P = lattice.k[tp]
    Q = lattice.k[tq]
    cross = (-P[:, 1] * Q[:, 0] + P[:, 0] * Q[:, 1]).astype(float)
    return (tk.astype(np.int64), tq.astype(np.int64), tp.astype(np.int64), cross,
            1.0 / lattice.k2norm[tp], 1.0 / lattice.k2norm[tq])


def lattice_tables(lattice):
    """Cached :func:`triad_table` of a lattice."""
    cache = getattr(lattice, "_triads", None)
    if cache is None:
        cache = triad_table(lattice)
        lattice._triads = cache
    return cache


def _complex_amplitudes(w, h):
    what = np.empty(2 * h, dtype=np.complex128)
    for i in range(h):
        what[i] = 0.5 * (w[h + i] - 1j * w[i])
        what[h + i] = 0.5 * (w[h + i] + 1j * w[i])
    return what


def _complex_amplitudes_np(w, h):
    v = 0.5 * (w[h:] - 1j * w[:h])
    return np.concatenate([v, np.conj(v)])


def _dn_matrix_loop(w, h, tk, tq, tp, cross, inv_p, inv_q):
    n = 2 * h
    what = _complex_amplitudes(w, h)
    T = np.zeros((h, n), dtype=np.complex128)
    for t in range(tk.shape[0]):
        T[tk[t], tq[t]] = -what[tp[t]] * cross[t] * (inv_p[t] - inv_q[t])
    D = np.empty((n, n))
    for i in range(h):
        for j in range(h):
            t1 = T[i, j]
            t2 = T[i, h + j]
            D[i, j] = t1.real - t2.real
            D[i, h + j] = -(t1.imag + t2.imag)
            D[h + i, j] = t1.imag - t2.imag
            D[h + i, h + j] = t1.real + t2.real
    return D


def _dn_matrix_np(w, h, tk, tq, tp, cross, inv_p, inv_q):
    n = 2 * h
    what = _complex_amplitudes_np(w, h)
    T = np.zeros((h, n), dtype=np.complex128)
    T[tk, tq] = -what[tp] * cross * (inv_p - inv_q)
    T1, T2 = T[:, :h], T[:, h:]
    D = np.empty((n, n))
    D[:h, :h] = (T1 - T2).real
    D[:h, h:] = -(T1 + T2).imag
    D[h:, :h] = (T1 - T2).imag
    D[h:, h:] = (T1 + T2).real
    return D


def _triad_bilinear_loop(v, w, h, tk, tq, tp, cross, inv_p):
    vh = _complex_amplitudes(v, h)
    wh = _complex_amplitudes(w, h)
    f = np.zeros(h, dtype=np.complex128)
    for t in range(tk.shape[0]):
        f[tk[t]] -= cross[t] * inv_p[t] * vh[tp[t]] * wh[tq[t]]
    out = np.empty(2 * h)
    for i in range(h):
        out[i] = -2.0 * f[i].imag
        out[h + i] = 2.0 * f[i].real
    return out


def _triad_bilinear_np(v, w, h, tk, tq, tp, cross, inv_p):
    vh = _complex_amplitudes_np(v, h)
    wh = _complex_amplitudes_np(w, h)
    f = np.zeros(h, dtype=np.complex128)
    np.add.at(f, tk, -cross * inv_p * vh[tp] * wh[tq])
    return np.concatenate([-2.0 * f.imag, 2.0 * f.real])


if USE_NUMBA:
    _complex_amplitudes = _jit(_complex_amplitudes)
    dn_matrix = _jit(_dn_matrix_loop)
    triad_bilinear = _jit(_triad_bilinear_loop)
else:
    dn_matrix = _dn_matrix_np
    triad_bilinear = _triad_bilinear_np


# ---------------------------------------------------------------------------
# exponential integrator coefficients
# ---------------------------------------------------------------------------

def _etd_coeffs(L, delta):
    """``E = e^{L delta}``, ``delta*phi1``, ``delta*phi2`` with a series near 0."""
    n = L.shape[0]
    E = np.empty(n)
    p1 = np.empty(n)
    p2 = np.empty(n)
    for i in range(n):
        z = L[i] * delta
        if abs(z) < 1e-2:
            f1 = 1.0 + z * (0.5 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 + z / 720))))
            f2 = 0.5 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 + z * (1.0 / 720 + z / 5040))))
        else:
            em = np.expm1(z)
            f1 = em / z
            f2 = (em - z) / (z * z)
        E[i] = np.exp(z)
        p1[i] = delta * f1
        p2[i] = delta * f2
    return E, p1, p2


def etd_coeffs_np(L, delta):
    """Vectorised coefficients; ``L`` and ``delta`` broadcast together."""
    z = np.asarray(L) * np.asarray(delta)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    em = np.expm1(zs)
    f1 = np.where(small, 1.0 + z * (0.5 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 + z / 720)))), em / zs)
    f2 = np.where(small, 0.5 + z * (1.0 / 6 + z * (1.0 / 24 + z * (1.0 / 120 + z * (1.0 / 720 + z / 5040)))),
                  (em - zs) / (zs * zs))
    delta = np.asarray(delta)
    return np.exp(z), delta * f1, delta * f2


etd_coeffs = _jit(_etd_coeffs) if USE_NUMBA else etd_coeffs_np


# ---------------------------------------------------------------------------
# dense sweeps over a stored trajectory
# ---------------------------------------------------------------------------

def _adjoint_sweep(states, deltas, L, i0, i1, lam, ev_ptr, ev_dl, fidx, bvals,
                   h, tk, tq, tp, cross, inv_p, inv_q):
    """Propagate row block ``lam`` backward from step ``i1`` to ``i0``.

    Returns ``(lam_at_i0, traces)`` with ``traces[e, m, j] = b_j <K_{r_e,t} phi_m, e_j>``
    for every event ``e`` in the window, ordered by event index.
    """
    m = lam.shape[0]
    d = fidx.shape[0]
    e_lo = ev_ptr[i0]
    e_hi = ev_ptr[i1]
    traces = np.zeros((e_hi - e_lo, m, d))
    lam = lam.copy()
    for s in range(i1 - 1, i0 - 1, -1):
        for e in range(ev_ptr[s], ev_ptr[s + 1]):
            for j in range(d):
                for r in range(m):
                    traces[e - e_lo, r, j] = bvals[j] * lam[r, fidx[j]]
        delta = deltas[s]
        if delta <= 0.0:
            continue
        E, p1, p2 = etd_coeffs(L, delta)
        w = states[s]
        Dw = dn_matrix(w, h, tk, tq, tp, cross, inv_p, inv_q)
        a = E * w + p1 * (0.5 * (Dw @ w))
        Da = dn_matrix(a, h, tk, tq, tp, cross, inv_p, inv_q)
        lp2 = lam * p2
        abar = lam + lp2 @ Da
        lam = abar * E + (abar * p1 - lp2) @ Dw
    return lam, traces


def _tangent_sweep(states, deltas, L, i0, i1, phi, inj, fidx, h, tk, tq, tp, cross, inv_p, inv_q):
    """Propagate column block ``phi`` (n, m) forward from ``i0`` to ``i1``.

    After step ``s`` the forcing rows ``fidx`` receive ``inj[s - i0]`` (d, m).
    """
    phi = phi.copy()
    d = fidx.shape[0]
    use_inj = inj.shape[0] > 0
    for s in range(i0, i1):
        delta = deltas[s]
        if delta > 0.0:
            E, p1, p2 = etd_coeffs(L, delta)
            w = states[s]
            Dw = dn_matrix(w, h, tk, tq, tp, cross, inv_p, inv_q)
            a = E * w + p1 * (0.5 * (Dw @ w))
            Da = dn_matrix(a, h, tk, tq, tp, cross, inv_p, inv_q)
            dwp = Dw @ phi
            da = E.reshape(-1, 1) * phi + p1.reshape(-1, 1) * dwp
            phi = da + p2.reshape(-1, 1) * (Da @ da - dwp)
        if use_inj:
            for j in range(d):
                phi[fidx[j]] += inj[s - i0, j]
    return phi


def _integrate_dense(w0, deltas, incs, L, k2, nu, fidx, bvals, store, ceiling,
                     h, tk, tq, tp, cross, inv_p):
    """Whole-trajectory ETD2RK with the triad nonlinearity.

    Returns ``(final, states, energy, dissipation, work, noise_energy, status)``
    where ``status`` is -1 on success or the step index at which the ceiling
    was exceeded.
    """
    S = deltas.shape[0]
    n = w0.shape[0]
    d = fidx.shape[0]
    states = np.empty((S + 1 if store else 1, n))
    energy = np.zeros(S + 1)
    diss = np.zeros(S + 1)
    work = np.zeros(S + 1)
    noise_en = np.zeros(S + 1)
    w = w0.copy()
    states[0] = w
    energy[0] = np.sum(w * w)
    h1 = np.sum(k2 * w * w)
    status = -1
    for s in range(S):
        delta = deltas[s]
        if delta > 0.0:
            E, p1, p2 = etd_coeffs(L, delta)
            Nw = triad_bilinear(w, w, h, tk, tq, tp, cross, inv_p)
            a = E * w + p1 * Nw
            Na = triad_bilinear(a, a, h, tk, tq, tp, cross, inv_p)
            wd = a + p2 * (Na - Nw)
        else:
            wd = w.copy()
        h1_new = np.sum(k2 * wd * wd)
        diss[s + 1] = diss[s] + nu * delta * (h1 + h1_new)
        cr = 0.0
        qq = 0.0
        for j in range(d):
            q = bvals[j] * incs[s, j]
            cr += wd[fidx[j]] * q
            qq += q * q
            wd[fidx[j]] += q
        work[s + 1] = work[s] + 2.0 * cr + qq
        noise_en[s + 1] = noise_en[s] + qq
        w = wd
        en = np.sum(w * w)
        energy[s + 1] = en
        h1 = np.sum(k2 * w * w)
        if store:
            states[s + 1] = w
        if not (en <= ceiling * ceiling):
            status = s + 1
            break
    return w, states, energy, diss, work, noise_en, status


integrate_dense = _jit(_integrate_dense)
adjoint_sweep = _jit(_adjoint_sweep)
tangent_sweep = _jit(_tangent_sweep)


# ---------------------------------------------------------------------------
# stopping clock
# ---------------------------------------------------------------------------

def _clock_scan(times, sizes, drift, horizon, nu, g, max_ticks):
    """Crossing times of ``nu (t - s) - g (l_t - l_s) > 1``, restarting at each tick.

    Between atoms the criterion is affine with slope ``nu - g*drift``, so each
    crossing is the exact root on its segment.
    """
    out = np.empty(max_ticks)
    count = 0
    slope = nu - g * drift
    f = 0.0
    t = 0.0
    n_at = times.shape[0]
    i = 0
    while count < max_ticks:
        t_next = times[i] if i < n_at else horizon
        if t_next > horizon:
            t_next = horizon
        if slope > 0.0 and f + slope * (t_next - t) > 1.0:
            t = t + (1.0 - f) / slope
            out[count] = t
            count += 1
            f = 0.0
            continue
        f += slope * (t_next - t)
        t = t_next
        if i >= n_at or times[i] > horizon:
            break
        f -= g * sizes[i]
        i += 1
    return out[:count]


def _x_integrals(sigma, times, sizes, drift, nu, g2):
    """``X_n = int_{s_n}^{s_{n+1}} exp(2 nu (s_{n+1}-s) - g2 (l_{s_{n+1}} - l_s)) ds`` exactly.

    ``sigma`` includes ``s_0 = 0`` and ``g2 = 16 B0 kappa``.  On each segment
    between atoms the exponent is affine in ``s``, so the integral is closed form.
    """
    n_int = sigma.shape[0] - 1
    out = np.zeros(n_int)
    c = 2.0 * nu - g2 * drift
    n_at = times.shape[0]
    lo = 0
    for k in range(n_int):
        a = sigma[k]
        b = sigma[k + 1]
        while lo < n_at and times[lo] <= a:
            lo += 1
        hi = lo
        while hi < n_at and times[hi] <= b:
            hi += 1
        right = b
        jumps = 0.0
        total = 0.0
        for m in range(hi - 1, lo - 2, -1):
            left = times[m] if m >= lo else a
            x = c * (right - left)
            if abs(x) < 1e-12:
                seg = right - left
            else:
                seg = np.expm1(x) / c
            total += np.exp(c * (b - right) - g2 * jumps) * seg
            if m >= lo:
                jumps += sizes[m]
            right = left
        out[k] = total
    return out


clock_scan = _jit(_clock_scan)
x_integrals = _jit(_x_integrals)


def x_integrals_np(sigma, times, sizes, drift, nu, g2):
    """Vectorised reference for :func:`x_integrals` (fine trapezoid free, exact)."""
    out = np.zeros(len(sigma) - 1)
    slope = -2.0 * nu + g2 * drift
    for k in range(len(sigma) - 1):
        a, b = sigma[k], sigma[k + 1]
        sel = (times > a) & (times <= b)
        pts = np.concatenate([[a], times[sel], [b]])
        jumps_after = np.concatenate([np.cumsum(sizes[sel][::-1])[::-1], [0.0]])
        left, right = pts[:-1], pts[1:]
        # l_b - l_s on segment (left, right): drift*(b - s) + atoms in (s, b]
        # exponent(s) = 2 nu (b - s) - g2 (drift (b - s) + J) = slope*(s - b) - g2*J
        e_right = slope * (right - b) - g2 * jumps_after
        x = slope * (right - left)
        with np.errstate(divide="ignore", invalid="ignore"):
            seg = np.where(np.abs(x) < 1e-12, right - left, -np.expm1(-x) / np.where(slope == 0, 1.0, slope))
        out[k] = np.sum(np.exp(e_right) * seg)
    return out
