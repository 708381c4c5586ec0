"""Malliavin operators, the Gram matrix on an observation space, and probes.

Noise time is discretised by the events of the record: each event ``e`` has
weight ``dl_e`` (an atom size or a drift weight ``c_eps * delta``) and
happens at the end of its substep.  A noise-time function is therefore an
event table ``v`` of shape ``(n_ev, d)`` with inner product
``<v, v'> = sum_e dl_e v_e . v'_e``; with that convention ``A`` and ``A*``
are exact transposes and ``G = A A*`` on the observation space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .integrator import TrajectoryRecord, clock_from_path, simulate
from .levy import SubordinatorConfig, sample_noise_increments, sample_subordinator
from .spectral import ModelConfig, WavenumberLattice
from .variational import _adjoint_block, _tangent_block, injection_from_events, window_indices

__all__ = [
    "MalliavinGram",
    "EmptyWindowWarning",
    "InsufficientSamplesError",
    "assemble_gram",
    "apply_A",
    "apply_Astar",
    "gram_two_path",
    "ResolventReport",
    "resolvent_cutoff",
    "NondegeneracyResult",
    "nondegeneracy_inf",
    "NondegeneracyProbe",
    "design_set",
    "probe_sample",
    "r_epsilon_statistic",
]


class EmptyWindowWarning(UserWarning):
    """The requested window carries no noise events, so the Gram is zero."""


class InsufficientSamplesError(ValueError):
    """Too few samples for the requested confidence."""


@dataclass
class MalliavinGram:
    """``G_mn = <M_{s,t} e_m, e_n>`` over the observation basis ``obs``."""

    lattice: WavenumberLattice
    N_obs: float | None
    s: float
    t: float
    obs: np.ndarray
    G: np.ndarray
    traces: np.ndarray      # (n_ev, m, d): b_j <K_{r_e,t} e_m, e_j>
    dl: np.ndarray          # (n_ev,)

    @property
    def size(self) -> int:
        return len(self.obs)

    @property
    def knorm(self) -> np.ndarray:
        return self.lattice.knorm[self.obs]

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.G)

    def psd_floor(self) -> float:
        """Smallest eigenvalue relative to ``||G||`` (``0`` for ``G = 0``)."""
        ev = self.eigvalsh()
        scale = np.max(np.abs(ev)) if ev.size else 0.0
        return float(ev[0] / scale) if scale > 0 else 0.0

    def factor(self) -> np.ndarray:
        """``T`` with ``G = T^T T`` (rows indexed by event and forcing mode)."""
        T = np.sqrt(self.dl)[:, None, None] * self.traces
        return np.transpose(T, (0, 2, 1)).reshape(-1, self.size)

    def quadratic(self, phi: np.ndarray) -> np.ndarray:
        """``phi^T G phi`` recomputed from the traces (``phi`` in obs coordinates)."""
        proj = np.einsum("emj,...m->...ej", self.traces, phi)
        return np.einsum("e,...ej->...", self.dl, proj * proj)

    def embed(self, phi: np.ndarray) -> np.ndarray:
        """Full lattice vector from obs coordinates."""
        out = np.zeros(np.shape(phi)[:-1] + (self.lattice.n,))
        out[..., self.obs] = phi
        return out

    def to_csv(self, path) -> None:
        k = self.lattice.k[self.obs]
        header = "k1,k2 per row/column: " + " ".join(f"({a},{b})" for a, b in k)
        np.savetxt(path, self.G, delimiter=",", header=header)


def _window_events(record, i0, i1):
    nz = record.noise
    return nz.ev_ptr[i0], nz.ev_ptr[i1]


def assemble_gram(record: TrajectoryRecord, s: float, t: float, N_obs: float | None = 8,
                  *, method: str = "auto") -> MalliavinGram:
    """One backward sweep of all observation basis vectors, traced at every event."""
    lat = record.lattice
    if N_obs is not None and N_obs > lat.cutoff * np.sqrt(2) + 1e-12:
        raise ValueError(f"N_obs={N_obs} exceeds the lattice")
    i0, i1 = window_indices(record, s, t)
    obs = lat.observation_indices(N_obs)
    e0, e1 = _window_events(record, i0, i1)
    dl = record.noise.ev_dl[e0:e1].copy()
    d = record.model.d
    if e1 == e0:
        warnings.warn(f"no noise events in ({s}, {t}]; Gram is zero", EmptyWindowWarning, stacklevel=2)
        return MalliavinGram(lat, N_obs, s, t, obs, np.zeros((len(obs), len(obs))),
                             np.zeros((0, len(obs), d)), dl)
    Lam = np.zeros((len(obs), lat.n))
    Lam[np.arange(len(obs)), obs] = 1.0
    _, traces = _adjoint_block(record, i0, i1, Lam, method=method)
    G = np.einsum("e,emj,enj->mn", dl, traces, traces)
    G = 0.5 * (G + G.T)
    return MalliavinGram(lat, N_obs, s, t, obs, G, traces, dl)


def apply_Astar(record: TrajectoryRecord, s: float, t: float, phi: np.ndarray,
                *, method: str = "auto") -> np.ndarray:
    """``(A*_{s,t} phi)_e = (b_j <K_{r_e,t} phi, e_j>)_j`` as an event table."""
    i0, i1 = window_indices(record, s, t)
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    if phi.shape[-1] != record.lattice.n:
        raise ValueError("phi does not live on the record lattice")
    _, traces = _adjoint_block(record, i0, i1, np.atleast_2d(phi), method=method)
    out = np.transpose(traces, (1, 0, 2))
    return out[0] if single else out


def apply_A(record: TrajectoryRecord, s: float, t: float, v: np.ndarray,
            *, method: str = "auto") -> np.ndarray:
    """``A_{s,t} v = sum_e J_{r_e,t} Q v_e dl_e`` for event tables on ``(l_s, l_t]``."""
    i0, i1 = window_indices(record, s, t)
    inj, single = injection_from_events(record, i0, i1, v)
    X = np.zeros((inj.shape[2], record.lattice.n))
    out = _tangent_block(record, i0, i1, X, inj=inj, method=method)
    return out[0] if single else out


def noise_inner(record: TrajectoryRecord, s: float, t: float, v: np.ndarray, v2: np.ndarray) -> float:
    """Noise-time inner product of two event tables on ``(l_s, l_t]``."""
    i0, i1 = window_indices(record, s, t)
    e0, e1 = _window_events(record, i0, i1)
    return float(np.einsum("e,ej,ej->", record.noise.ev_dl[e0:e1], v, v2))


def gram_two_path(record: TrajectoryRecord, s: float, t: float, N_obs: float | None = 8,
                  *, method: str = "auto") -> np.ndarray:
    """``<e_m, A A* e_n>`` through forward injection sweeps (independent of the trace sum)."""
    lat = record.lattice
    obs = lat.observation_indices(N_obs)
    E = np.zeros((len(obs), lat.n))
    E[np.arange(len(obs)), obs] = 1.0
    v = apply_Astar(record, s, t, E, method=method)
    if v.shape[1] == 0:
        return np.zeros((len(obs), len(obs)))
    AAv = apply_A(record, s, t, v, method=method)
    return AAv[:, obs].T.copy()


# ---------------------------------------------------------------------------
# resolvent cutoff
# ---------------------------------------------------------------------------

@dataclass
class ResolventReport:
    beta: float
    N: float | None
    R: np.ndarray
    R_low: np.ndarray
    norm_R: float
    norm_R_low: float
    astar_norm: float        # ||A*(G + beta I)^{-1/2}||
    inv_sqrt_norm: float     # ||(G + beta I)^{-1/2}||
    ok_astar: bool
    ok_inv_sqrt: bool

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("beta", "N", "norm_R", "norm_R_low", "astar_norm",
                                              "inv_sqrt_norm", "ok_astar", "ok_inv_sqrt")}


def _gram_parts(G, knorm):
    if isinstance(G, MalliavinGram):
        return G.G, G.knorm, G
    G = np.asarray(G, dtype=float)
    return G, knorm, None


def resolvent_cutoff(G, beta: float, N: float | None = None, *, knorm=None, rtol: float = 1e-10) -> ResolventReport:
    """``beta (G + beta I)^{-1}`` and its low-mode cut ``P_N beta (G + beta I)^{-1}``.

    ``G`` is a :class:`MalliavinGram` or a plain matrix (then ``knorm`` gives
    the mode moduli needed for ``P_N``).  The two operator-norm facts are
    checked: ``||A*(G+beta)^{-1/2}|| <= 1`` (through the factor ``G = T^T T``
    when traces are available) and ``||(G+beta)^{-1/2}|| <= beta^{-1/2}``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    Gm, kn, gram = _gram_parts(G, knorm)
    m = Gm.shape[0]
    I = np.eye(m)
    cf = linalg.cho_factor(Gm + beta * I, lower=True)
    R = beta * linalg.cho_solve(cf, I)
    R = 0.5 * (R + R.T)
    if N is None:
        low = np.ones(m, dtype=bool)
    else:
        if kn is None:
            raise ValueError("P_N needs mode moduli: pass a MalliavinGram or knorm")
        low = np.asarray(kn) <= N + 1e-12
    R_low = R * low[:, None]
    lam, U = np.linalg.eigh(Gm)
    lam = np.maximum(lam, 0.0)
    inv_sqrt = (U / np.sqrt(lam + beta)) @ U.T
    if gram is not None and gram.traces.shape[0]:
        astar = np.linalg.norm(gram.factor() @ inv_sqrt, 2)
    else:
        astar = float(np.sqrt(np.max(lam / (lam + beta)))) if m else 0.0
    inv_norm = float(1.0 / np.sqrt(lam.min() + beta)) if m else 0.0
    return ResolventReport(
        beta=float(beta), N=N, R=R, R_low=R_low,
        norm_R=float(np.linalg.norm(R, 2)), norm_R_low=float(np.linalg.norm(R_low, 2)),
        astar_norm=float(astar), inv_sqrt_norm=inv_norm,
        ok_astar=bool(astar <= 1 + rtol), ok_inv_sqrt=bool(inv_norm <= beta ** -0.5 * (1 + rtol)),
    )


# ---------------------------------------------------------------------------
# constrained infimum over S_{alpha,N}
# ---------------------------------------------------------------------------

@dataclass
class NondegeneracyResult:
    """``inf phi^T G phi`` over unit ``phi`` with ``||P_N phi|| >= alpha``, bracketed."""

    value: float
    lower: float
    upper: float
    phi: np.ndarray
    mu: float
    iterations: int

    @property
    def gap(self) -> float:
        return self.upper - self.lower


def _min_pair(G, P, mu):
    lam, U = np.linalg.eigh(G - mu * P)
    return lam[0], U[:, 0]


def _best_in_span(G, P, alpha2, vecs):
    """Exact constrained minimum over unit vectors in ``span(vecs)``."""
    Q, r = np.linalg.qr(np.column_stack(vecs))
    keep = np.abs(np.diag(r)) > 1e-12
    Q = Q[:, keep]
    g = Q.T @ G @ Q
    p = Q.T @ P @ Q
    if Q.shape[1] == 1:
        c = np.ones(1)
        return (float(g[0, 0]), Q[:, 0]) if p[0, 0] >= alpha2 - 1e-12 else (np.inf, None)
    # angles: exact constraint boundary roots plus the unconstrained eigenvectors
    cand = []
    lam, U = np.linalg.eigh(g)
    cand.extend([U[:, 0], U[:, 1]])
    A = p - alpha2 * np.eye(2)
    a, b, c = A[0, 0], A[0, 1], A[1, 1]
    # a cos^2 + 2 b cos sin + c sin^2 = 0
    if abs(c) > 1e-300:
        disc = b * b - a * c
        if disc >= 0:
            for tn in ((-b + np.sqrt(disc)) / c, (-b - np.sqrt(disc)) / c):
                v = np.array([1.0, tn])
                cand.append(v / np.linalg.norm(v))
    if abs(a) < 1e-14:
        cand.append(np.array([0.0, 1.0]))
    best, arg = np.inf, None
    for v in cand:
        if v @ p @ v >= alpha2 - 1e-12:
            val = float(v @ g @ v)
            if val < best:
                best, arg = val, Q @ v
    return best, arg


def nondegeneracy_inf(G, alpha: float, N: float, *, knorm=None, tol: float = 1e-14,
                      max_iter: int = 200) -> NondegeneracyResult:
    """Infimum of ``phi^T G phi`` over ``{||phi|| = 1, ||P_N phi|| >= alpha}``.

    The feasible set is the sphere cut by one homogeneous quadratic
    constraint, so Lagrangian duality is exact and the value equals
    ``max_{mu >= 0} lambda_min(G - mu P_N) + mu alpha^2``.  The dual is
    concave in ``mu`` and is maximised by bisection on its supergradient
    ``alpha^2 - ||P_N phi_mu||^2``.  Every dual value is a certified lower
    bound; feasible points from the bracket ends give the upper bound.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    Gm, kn, _ = _gram_parts(G, knorm)
    if kn is None:
        raise ValueError("P_N needs mode moduli: pass a MalliavinGram or knorm")
    kn = np.asarray(kn)
    low = kn <= N + 1e-12
    if not low.any():
        raise ValueError(f"no observation mode with |k| <= {N}")
    Gm = 0.5 * (Gm + Gm.T)
    scale = max(float(np.max(np.abs(Gm))), 1e-300)
    P = np.diag(low.astype(float))
    a2 = alpha * alpha
    try:
        if alpha >= 1 - 1e-15 or low.all():
            lam, U = np.linalg.eigh(Gm[np.ix_(low, low)])
            phi = np.zeros(len(kn))
            phi[low] = U[:, 0]
            v = float(lam[0])
            if low.all():
                v = float(np.linalg.eigvalsh(Gm)[0])
                phi = np.linalg.eigh(Gm)[1][:, 0]
            return NondegeneracyResult(v, v, v, phi, np.inf, 0)
        lam0, phi0 = _min_pair(Gm, P, 0.0)
        if phi0 @ P @ phi0 >= a2:
            return NondegeneracyResult(float(lam0), float(lam0), float(lam0), phi0, 0.0, 0)
        lo, hi = 0.0, scale
        best_lower, best_mu = float(lam0), 0.0
        phi_lo, phi_hi = phi0, None
        it = 0
        while True:
            lam, phi = _min_pair(Gm, P, hi)
            dual = lam + hi * a2
            if dual > best_lower:
                best_lower, best_mu = dual, hi
            if phi @ P @ phi >= a2:
                phi_hi = phi
                break
            lo, phi_lo, hi = hi, phi, 2 * hi
            it += 1
            if it > 200:
                raise np.linalg.LinAlgError("dual bracket search did not terminate")
        upper, arg = _best_in_span(Gm, P, a2, [phi_lo, phi_hi])
        while it < max_iter and upper - best_lower > tol * scale:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            lam, phi = _min_pair(Gm, P, mid)
            dual = lam + mid * a2
            if dual > best_lower:
                best_lower, best_mu = dual, mid
            if phi @ P @ phi >= a2:
                hi, phi_hi = mid, phi
            else:
                lo, phi_lo = mid, phi
            cand, carg = _best_in_span(Gm, P, a2, [phi_lo, phi_hi])
            if cand < upper:
                upper, arg = cand, carg
            it += 1
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigen solver failure in nondegeneracy_inf: {exc}") from exc
    value = 0.5 * (best_lower + upper)
    return NondegeneracyResult(float(value), float(best_lower), float(upper), arg, float(best_mu), it)


# ---------------------------------------------------------------------------
# r(eps) probe
# ---------------------------------------------------------------------------

@dataclass
class NondegeneracyProbe:
    """Configuration of the ``X^{w0,alpha,N}`` probe and its ``r(eps)`` curve."""

    alpha: float = 0.5
    N: float = 4
    radius: float = 1.0
    eps_grid: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
    samples: int = 64
    kappa: float | None = None
    N_obs: float | None = None
    half_window: bool = True
    h_max: float = 1e-2
    horizon: float = 200.0
    confidence: float = 0.95
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.alpha <= 1:
            out.append("alpha must lie in (0, 1]")
        if not self.N > 0:
            out.append("N must be positive")
        if self.N_obs is not None and self.N_obs < self.N:
            out.append("N_obs must be at least N")
        if self.radius < 0:
            out.append("radius must be nonnegative")
        eps = np.asarray(self.eps_grid, float)
        if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            out.append("eps grid must be positive and strictly decreasing")
        if self.kappa is not None and self.kappa <= 0:
            out.append("clock precondition: kappa must be positive")
        if not 0 < self.confidence < 1:
            out.append("confidence must lie in (0, 1)")
        return out


def design_set(lattice: WavenumberLattice, radius: float, seed: int = 0) -> np.ndarray:
    """Eight initial conditions in the closed ball of the given radius.

    Zero, three single modes, two two-mode mixtures and two random draws,
    the nonzero ones on the sphere of that radius.
    """
    rng = np.random.default_rng([seed, 0xD5])
    out = [np.zeros(lattice.n)]
    for k in ((1, 0), (0, 1), (-1, 0)):
        out.append(radius * lattice.basis(k))
    for k, q in (((1, 1), (1, -2)), ((2, 0), (0, -2))):
        v = lattice.basis(k) + lattice.basis(q)
        out.append(radius * v / np.linalg.norm(v))
    for _ in range(2):
        v = rng.standard_normal(lattice.n) / (1.0 + lattice.k2norm)
        out.append(radius * v / np.linalg.norm(v))
    return np.array(out)


def probe_sample(w0: np.ndarray, model: ModelConfig, lattice: WavenumberLattice, sub: SubordinatorConfig,
                 probe: NondegeneracyProbe, seed, stream=(0,)) -> dict:
    """One draw of ``X^{w0,alpha,N}`` on ``(0, sigma]`` (or ``(sigma/2, sigma]``)."""
    path = sample_subordinator(sub, probe.horizon, seed, stream=stream)
    kappa = probe.kappa if probe.kappa is not None else 1e-3 * model.nu / model.B0
    clock = clock_from_path(path, kappa, model, max_ticks=1)
    sigma = float(clock.sigma[0])
    path = path.restricted(sigma)
    lo = 0.5 * sigma if probe.half_window else 0.0
    noise = sample_noise_increments(path, model.d, seed, h_max=probe.h_max, breakpoints=(lo,), stream=stream)
    rec = simulate(w0, model, noise, lattice)
    gram = assemble_gram(rec, lo, sigma, probe.N_obs)
    res = nondegeneracy_inf(gram, probe.alpha, probe.N)
    return {"sigma": sigma, "X": res.value, "X_lower": res.lower, "X_upper": res.upper,
            "psd_floor": gram.psd_floor(), "gram": gram}


def _ci(k, n, conf, method="wilson"):
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=conf, method=method)
    return float(ci.low), float(ci.high)


def r_epsilon_statistic(probe: NondegeneracyProbe, model: ModelConfig, lattice: WavenumberLattice,
                        sub: SubordinatorConfig, *, X: np.ndarray | None = None,
                        design: np.ndarray | None = None) -> dict:
    """Empirical ``r(eps) = max_{w0 in design} P(X^{w0} < eps)`` with Wilson intervals.

    ``X`` may be supplied as a ``(n_design, samples)`` table; otherwise it is
    sampled with one independent stream per (design point, sample).
    """
    bad = probe.problems()
    if bad:
        raise ValueError("; ".join(bad))
    z = stats.norm.ppf(0.5 + probe.confidence / 2)
    design = design_set(lattice, probe.radius, probe.seed) if design is None else np.asarray(design)
    if X is None:
        if probe.samples < z * z:
            raise InsufficientSamplesError(
                f"{probe.samples} samples per design point cannot separate 0 from 1/2 at confidence {probe.confidence}")
        X = np.array([[probe_sample(w0, model, lattice, sub, probe, probe.seed, stream=(i, j))["X"]
                       for j in range(probe.samples)] for i, w0 in enumerate(design)])
    X = np.asarray(X, dtype=float)
    n = X.shape[1]
    if n < z * z:
        raise InsufficientSamplesError(f"{n} samples per design point is below {z * z:.1f}")
    eps = np.asarray(probe.eps_grid, dtype=float)
    counts = (X[:, :, None] < eps[None, None, :]).sum(axis=1)      # (n_design, n_eps)
    per_ic = counts / n
    worst = np.argmax(per_ic, axis=0)
    r = per_ic[worst, np.arange(len(eps))]
    lo_hi = np.array([_ci(counts[worst[k], k], n, probe.confidence) for k in range(len(eps))])
    return {
        "eps": eps.tolist(),
        "r": r.tolist(),
        "ci_low": lo_hi[:, 0].tolist(),
        "ci_high": lo_hi[:, 1].tolist(),
        "per_design": per_ic.tolist(),
        "argmax_design": worst.tolist(),
        "X_min": float(X.min()),
        "X": X,
        "nonincreasing": bool(np.all(np.diff(r) <= 0)),
        "n_per_design": int(n),
    }
