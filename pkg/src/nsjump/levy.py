"""Subordinator paths, subordinated Brownian increments and the forcing map.

The subordinator has Levy measure ``nu_S``; jumps at least ``eps`` are
sampled exactly and the smaller ones are replaced by their mean, a drift of
rate ``c_eps = int_0^eps u nu_S(du)``.  The noise ``L_t = W_{S_t}`` is then a
Gaussian increment of covariance ``dl * I`` per subordinator atom and per
drift substep.

Large jumps are drawn as a Poisson process on the tail-mass axis
``m = nu_S([u, aleph])`` (a LePage-type series).  The sizes are the inverse
tail function of the sorted masses, so lowering ``eps`` only appends jumps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .spectral import ModelConfig, WavenumberLattice

__all__ = [
    "SubordinatorConfig",
    "SubordinatorPath",
    "NoisePath",
    "levy_integral",
    "sample_subordinator",
    "sample_noise_increments",
    "forcing_Q",
    "forcing_Qstar",
    "validate_levy_moments",
    "energy_injection_rate",
    "make_rng",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)
_DRIFT_CACHE: dict = {}


def make_rng(seed, *stream) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, *stream)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SubordinatorConfig:
    """Levy measure of the subordinator.

    ``family='tempered'`` is ``u^{-1-alpha/2}`` on ``(0, aleph]``;
    ``family='atom'`` is ``rate * delta_{atom}``; ``family='table'`` takes a
    tabulated density ``table = (u_grid, density)`` with log-log interpolation.
    """

    family: str = "tempered"
    alpha: float = 1.0
    aleph: float = 1.0
    eps: float = 1e-4
    zeta: float = 1.0
    atom: float = 1.0
    rate: float = 1.0
    table: tuple | None = field(default=None, compare=False)

    def problems(self) -> list[str]:
        out = []
        if self.family not in ("tempered", "atom", "table"):
            out.append(f"unknown subordinator family {self.family!r}")
        if self.family == "tempered":
            if not 0.0 <= self.alpha < 2.0:
                out.append("stability index alpha_S must lie in [0, 2)")
            if not self.aleph > 0:
                out.append("truncation level aleph must be positive")
            if not self.eps > 0:
                out.append("small-jump threshold eps_S must be positive")
            elif self.eps > self.aleph:
                out.append("small-jump threshold eps_S exceeds aleph (unnormalizable restriction)")
        if self.family == "atom" and not (self.atom > 0 and self.rate > 0):
            out.append("atom family needs positive atom size and rate")
        if self.family == "table":
            if self.table is None:
                out.append("table family needs (u_grid, density)")
            else:
                u, f = (np.asarray(x, float) for x in self.table)
                if u.ndim != 1 or u.shape != f.shape or np.any(np.diff(u) <= 0) or u[0] <= 0:
                    out.append("table grid must be increasing, positive, and match the density")
                elif np.any(f <= 0):
                    out.append("table density must be positive")
        if not self.zeta > 0:
            out.append("exponential-moment exponent zeta must be positive")
        return out

    def validate(self) -> "SubordinatorConfig":
        probs = self.problems()
        if probs:
            raise ValueError("; ".join(probs))
        return self

    # -- measure ---------------------------------------------------------
    @property
    def upper(self) -> float:
        if self.family == "atom":
            return self.atom
        if self.family == "table":
            return float(self.table[0][-1])
        return self.aleph

    @property
    def lower(self) -> float:
        if self.family == "table":
            return float(self.table[0][0])
        return 0.0

    def density(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.family == "tempered":
            with np.errstate(divide="ignore"):
                return np.where((u > 0) & (u <= self.aleph), u ** (-1.0 - 0.5 * self.alpha), 0.0)
        if self.family == "table":
            g, f = (np.asarray(x, float) for x in self.table)
            inside = (u >= g[0]) & (u <= g[-1])
            uu = np.clip(u, g[0], g[-1])
            return np.where(inside, np.exp(np.interp(np.log(uu), np.log(g), np.log(f))), 0.0)
        raise ValueError("atom family has no density")

    def tail_mass(self, u) -> np.ndarray:
        """``nu_S([u, upper])``: expected number of jumps of size >= u per unit time."""
        u = np.asarray(u, dtype=float)
        if self.family == "tempered":
            a = 0.5 * self.alpha
            uu = np.minimum(u, self.aleph)
            lr = np.log(self.aleph / uu)
            if a == 0.0:
                return lr
            # (u^-a - aleph^-a) / a without cancellation for small a
            return self.aleph ** (-a) * np.expm1(a * lr) / a
        if self.family == "atom":
            return np.where(u <= self.atom, self.rate, 0.0)
        g, _ = self._table_tail()
        return np.interp(u, g[0], g[1])

    def inverse_tail(self, m) -> np.ndarray:
        """Jump size with tail mass ``m`` (inverse of :meth:`tail_mass`)."""
        m = np.asarray(m, dtype=float)
        if self.family == "tempered":
            a = 0.5 * self.alpha
            if a == 0.0:
                return self.aleph * np.exp(-m)
            return self.aleph * np.exp(-np.log1p(a * m * self.aleph**a) / a)
        if self.family == "atom":
            return np.full_like(m, self.atom)
        g, _ = self._table_tail()
        return np.interp(m, g[1][::-1], g[0][::-1])

    def _table_tail(self):
        u, f = (np.asarray(x, float) for x in self.table)
        fine = np.exp(np.linspace(np.log(u[0]), np.log(u[-1]), 4096))
        dens = self.density(fine)
        seg = 0.5 * (dens[1:] + dens[:-1]) * np.diff(fine)
        tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
        return (fine, tail), None

    def jump_rate(self) -> float:
        """Rate of sampled jumps (sizes >= eps)."""
        if self.family == "atom":
            return self.rate if self.atom >= self.eps else 0.0
        return float(self.tail_mass(max(self.eps, self.lower)))

    def drift(self) -> float:
        """Compensation drift ``c_eps = int_0^eps u nu_S(du)`` (cached per config)."""
        key = (self, None if self.table is None else tuple(map(tuple, self.table)))
        val = _DRIFT_CACHE.get(key)
        if val is None:
            val = _DRIFT_CACHE[key] = self._drift()
        return val

    def _drift(self) -> float:
        if self.family == "atom":
            return self.rate * self.atom if self.atom < self.eps else 0.0
        hi = min(self.eps, self.upper)
        if hi <= self.lower:
            return 0.0
        return levy_integral(lambda u: u, self, 0.0, hi)

    def first_moment(self) -> float:
        """``int u nu_S(du)`` over the whole support."""
        if self.family == "atom":
            return self.rate * self.atom
        return levy_integral(lambda u: u, self, 0.0, self.upper)

    def exponential_moment(self) -> float:
        """``int (e^{zeta u} - 1) nu_S(du)``; finite for truncated families."""
        if self.family == "atom":
            return self.rate * np.expm1(self.zeta * self.atom)
        return levy_integral(lambda u: np.expm1(self.zeta * u), self, 0.0, self.upper)

    def to_json(self) -> dict:
        out = {"family": self.family, "alpha": self.alpha, "aleph": self.aleph, "eps": self.eps,
               "zeta": self.zeta}
        if self.family == "atom":
            out.update(atom=self.atom, rate=self.rate)
        if self.family == "table":
            out["table"] = [list(map(float, self.table[0])), list(map(float, self.table[1]))]
        return out


def _gl_panel(g, lo, hi):
    half = 0.5 * (hi - lo)
    s = lo + half * (_GL_X + 1.0)
    return half * np.dot(_GL_W, g(s))


def _adaptive(g, lo, hi, tol, depth=0):
    whole = _gl_panel(g, lo, hi)
    mid = 0.5 * (lo + hi)
    split = _gl_panel(g, lo, mid) + _gl_panel(g, mid, hi)
    if abs(split - whole) <= tol * max(abs(split), 1e-300) or depth > 30:
        return split
    return _adaptive(g, lo, mid, tol, depth + 1) + _adaptive(g, mid, hi, tol, depth + 1)


def levy_integral(f, cfg: SubordinatorConfig, lo: float, hi: float, tol: float = 1e-13) -> float:
    """``int_lo^hi f(u) nu_S(du)`` by adaptive 64-point Gauss-Legendre on log panels.

    A lower limit of 0 is handled by adding decades until the panel
    contribution drops below ``tol`` relative to the running total.
    """
    if hi <= lo:
        return 0.0

    def g(s):
        u = np.exp(s)
        return f(u) * cfg.density(u) * u

    top = np.log(hi)
    start = np.log(lo) if lo > 0 else None
    total = 0.0
    right = top
    while True:
        left = right - np.log(10.0)
        if start is not None and left <= start:
            total += _adaptive(g, start, right, tol)
            break
        piece = _adaptive(g, left, right, tol)
        total += piece
        right = left
        if start is None and abs(piece) <= tol * abs(total) and right < top - 10 * np.log(10.0):
            break
        if right < -700:
            break
    return float(total)


@dataclass
class SubordinatorPath:
    """Atoms of ``l_t`` on ``[0, horizon]`` plus the small-jump drift."""

    horizon: float
    times: np.ndarray
    sizes: np.ndarray
    drift: float
    cfg: SubordinatorConfig | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        order = np.argsort(self.times, kind="stable")
        self.times = self.times[order]
        self.sizes = self.sizes[order]
        self._cum = np.concatenate([[0.0], np.cumsum(self.sizes)])

    @property
    def n_atoms(self) -> int:
        return len(self.times)

    def ell(self, t) -> np.ndarray:
        """Right-continuous ``l_t``."""
        t = np.asarray(t, dtype=float)
        return self.drift * t + self._cum[np.searchsorted(self.times, t, side="right")]

    def ell_left(self, t) -> np.ndarray:
        """Left limit ``l_{t-}``."""
        t = np.asarray(t, dtype=float)
        return self.drift * t + self._cum[np.searchsorted(self.times, t, side="left")]

    def gamma(self, u) -> np.ndarray:
        """Inverse time change ``inf{t : l_t >= u}`` (``inf`` of the empty set is ``inf``)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        knots = np.concatenate([[0.0], self.times])
        right_vals = self.drift * self.times + self._cum[1:]
        for i, x in enumerate(u):
            if x <= 0:
                out[i] = 0.0
                continue
            # first atom index whose right value reaches x
            j = np.searchsorted(right_vals, x, side="left")
            # drift-only reach before atom j
            left_val = self._cum[j] + self.drift * knots[j]
            if self.drift > 0:
                t_drift = knots[j] + (x - left_val) / self.drift
                limit = self.times[j] if j < self.n_atoms else np.inf
                if t_drift <= limit:
                    out[i] = max(t_drift, knots[j])
                    continue
            out[i] = self.times[j] if j < self.n_atoms else np.inf
        out[out > self.horizon] = np.inf
        return out

    def restricted(self, horizon: float) -> "SubordinatorPath":
        keep = self.times <= horizon
        return SubordinatorPath(horizon, self.times[keep], self.sizes[keep], self.drift, self.cfg)

    def to_jsonl(self, path, increments: np.ndarray | None = None) -> None:
        """One atom per line: time, size and optional Gaussian coordinates."""
        with open(path, "w") as fh:
            meta = {"horizon": self.horizon, "drift": self.drift}
            if self.cfg is not None:
                meta["config"] = self.cfg.to_json()
            fh.write(json.dumps({"meta": meta}) + "\n")
            for i, (t, s) in enumerate(zip(self.times, self.sizes)):
                row = {"time": float(t), "size": float(s)}
                if increments is not None:
                    row["g"] = [float(x) for x in increments[i]]
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> tuple["SubordinatorPath", np.ndarray | None]:
        with open(path) as fh:
            meta = json.loads(fh.readline())["meta"]
            rows = [json.loads(line) for line in fh if line.strip()]
        times = np.array([r["time"] for r in rows])
        sizes = np.array([r["size"] for r in rows])
        g = np.array([r["g"] for r in rows]) if rows and "g" in rows[0] else None
        cfg = SubordinatorConfig(**{k: v for k, v in meta.get("config", {}).items() if k != "table"}) \
            if "config" in meta else None
        return cls(meta["horizon"], times, sizes, meta["drift"], cfg), g


def sample_subordinator(cfg: SubordinatorConfig, T: float, seed, *, stream=(0,)) -> SubordinatorPath:
    """Jumps of size >= eps on ``[0, T]`` and the compensating drift."""
    cfg.validate()
    if not T > 0:
        raise ValueError("horizon T must be positive")
    rng = make_rng(seed, 1, *stream)
    cap = cfg.jump_rate()
    masses, times = [], []
    block = 1024
    m = 0.0
    if cap > 0:
        while True:
            gaps = rng.standard_exponential(block) / T
            tt = T * (1.0 - rng.random(block))
            cm = m + np.cumsum(gaps)
            keep = cm <= cap
            masses.append(cm[keep])
            times.append(tt[keep])
            if not keep.all():
                break
            m = cm[-1]
    masses = np.concatenate(masses) if masses else np.zeros(0)
    times = np.concatenate(times) if times else np.zeros(0)
    sizes = cfg.inverse_tail(masses)
    return SubordinatorPath(float(T), times, sizes, cfg.drift(), cfg)


@dataclass
class NoisePath:
    """Increments of ``L = W_S`` on a substep grid aligned with every atom.

    ``grid`` holds ``t_0 = 0 < ... < t_S = T``.  Step ``s`` spans
    ``[t_s, t_{s+1}]`` and ends with its events: a drift event of weight
    ``c_eps * delta_s`` and any atom located at ``t_{s+1}``.
    """

    path: SubordinatorPath
    grid: np.ndarray
    drift_inc: np.ndarray
    atom_step: np.ndarray
    atom_inc: np.ndarray
    seed: int = 0
    h_max: float = np.inf

    def __post_init__(self):
        self.deltas = np.diff(self.grid)
        S = len(self.deltas)
        d = self.drift_inc.shape[1]
        c = self.path.drift
        step_parts = []
        dl_parts = []
        g_parts = []
        if c > 0:
            step_parts.append(np.arange(S))
            dl_parts.append(c * self.deltas)
            g_parts.append(self.drift_inc)
        step_parts.append(self.atom_step)
        dl_parts.append(self.path.sizes)
        g_parts.append(self.atom_inc)
        step = np.concatenate(step_parts).astype(np.int64)
        order = np.argsort(step, kind="stable")
        self.ev_step = step[order]
        self.ev_dl = np.concatenate(dl_parts)[order]
        self.ev_g = np.concatenate(g_parts, axis=0).reshape(-1, d)[order]
        self.ev_ptr = np.searchsorted(self.ev_step, np.arange(S + 1), side="left").astype(np.int64)
        inc = np.zeros((S, d))
        np.add.at(inc, self.ev_step, self.ev_g)
        self.step_inc = inc
        self.ev_time = self.grid[self.ev_step + 1]

    @property
    def d(self) -> int:
        return self.drift_inc.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return len(self.deltas)

    def ell_grid(self) -> np.ndarray:
        """``l`` at every grid time, accumulated from the event weights."""
        per_step = np.zeros(self.n_steps)
        np.add.at(per_step, self.ev_step, self.ev_dl)
        return np.concatenate([[0.0], np.cumsum(per_step)])

    def L(self) -> np.ndarray:
        """``L_t`` at every grid time."""
        return np.concatenate([np.zeros((1, self.d)), np.cumsum(self.step_inc, axis=0)])

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Grid index of time ``t`` (which must be a grid point)."""
        i = int(np.searchsorted(self.grid, t - tol))
        if i >= len(self.grid) or abs(self.grid[i] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a substep boundary of this noise path")
        return i

    def with_increments(self, drift_inc=None, atom_inc=None) -> "NoisePath":
        return NoisePath(self.path, self.grid,
                         self.drift_inc if drift_inc is None else drift_inc,
                         self.atom_step,
                         self.atom_inc if atom_inc is None else atom_inc, self.seed, self.h_max)

    def silenced(self) -> "NoisePath":
        """Same grid and events with every Gaussian increment set to zero."""
        return self.with_increments(np.zeros_like(self.drift_inc), np.zeros_like(self.atom_inc))

    def perturbed(self, ev_shift: np.ndarray) -> "NoisePath":
        """Copy with event increments ``g_e + ev_shift[e]`` (common randomness)."""
        c = self.path.drift
        shift_drift = np.zeros_like(self.drift_inc)
        shift_atom = np.zeros_like(self.atom_inc)
        is_drift = np.zeros(len(self.ev_step), dtype=bool)
        if c > 0:
            # drift events come first within each step (stable order)
            first = self.ev_ptr[:-1]
            is_drift[first] = True
            shift_drift[self.ev_step[first]] = ev_shift[first]
        atom_pos = np.flatnonzero(~is_drift)
        # atoms keep their original order inside the event list
        order = np.argsort(self.atom_step, kind="stable")
        shift_atom[order] = ev_shift[atom_pos]
        return self.with_increments(self.drift_inc + shift_drift, self.atom_inc + shift_atom)


def build_grid(T: float, h_max: float, atoms: np.ndarray, breakpoints=()) -> np.ndarray:
    """Uniform grid of spacing ``<= h_max`` merged with atoms and breakpoints."""
    n = max(1, int(np.ceil(T / h_max - 1e-12)))
    base = np.linspace(0.0, T, n + 1)
    extra = np.concatenate([np.asarray(atoms, float), np.asarray(list(breakpoints), float)])
    extra = extra[(extra > 0) & (extra <= T)]
    tol = 1e-11 * max(1.0, T)
    if len(extra):
        extra = np.unique(extra)
        near = _near_sorted(base, extra, tol)
        near[0] = False
        base = base[~near]
    grid = np.union1d(base, extra)
    if grid[-1] < T - tol:
        grid = np.append(grid, T)
    return grid


def _near_sorted(a, b, tol):
    idx = np.searchsorted(b, a)
    lo = np.abs(a - b[np.clip(idx - 1, 0, len(b) - 1)]) < tol
    hi = np.abs(a - b[np.clip(idx, 0, len(b) - 1)]) < tol
    return lo | hi


def sample_noise_increments(path: SubordinatorPath, d: int, seed, *, h_max: float = 1e-3,
                            breakpoints=(), stream=(0,)) -> NoisePath:
    """Gaussian increments ``g ~ N(0, dl I)`` per atom and per drift substep.

    Atom increments come from their own stream in atom order, so they do not
    depend on ``h_max`` or on the breakpoints.
    """
    if d < 1:
        raise ValueError("noise dimension d must be at least 1")
    grid = build_grid(path.horizon, h_max, path.times, breakpoints)
    S = len(grid) - 1
    atom_step = np.searchsorted(grid, path.times, side="left") - 1
    if path.n_atoms and (atom_step.min() < 0 or np.any(np.abs(grid[atom_step + 1] - path.times) > 1e-9)):
        raise RuntimeError("atom misaligned with the substep grid")
    rng_atoms = make_rng(seed, 2, *stream)
    rng_drift = make_rng(seed, 3, *stream)
    atom_inc = rng_atoms.standard_normal((path.n_atoms, d)) * np.sqrt(path.sizes)[:, None]
    deltas = np.diff(grid)
    drift_inc = rng_drift.standard_normal((S, d)) * np.sqrt(path.drift * deltas)[:, None]
    return NoisePath(path, grid, drift_inc, atom_step.astype(np.int64), atom_inc, int(seed), float(h_max))


def forcing_Q(z: np.ndarray, model: ModelConfig, lattice: WavenumberLattice) -> np.ndarray:
    """``Qz = sum_j b_j z_j e_j`` (broadcast over leading axes)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.d:
        raise ValueError(f"expected {model.d} noise coordinates, got {z.shape[-1]}")
    out = np.zeros(z.shape[:-1] + (lattice.n,))
    idx = model.forcing_indices(lattice)
    out[..., idx] += np.asarray(model.b) * z
    return out


def forcing_Qstar(xi: np.ndarray, model: ModelConfig, lattice: WavenumberLattice) -> np.ndarray:
    """``Q* xi = (b_j <xi, e_j>)_j``."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != lattice.n:
        raise ValueError("field does not match the lattice")
    return np.asarray(model.b) * xi[..., model.forcing_indices(lattice)]


def energy_injection_rate(cfg: SubordinatorConfig, model: ModelConfig) -> float:
    """``C = int ||Qz||^2 nu_L(dz) = B0 * int u nu_S(du)``."""
    return model.B0 * cfg.first_moment()


def _chi_moment(n, d):
    return 2.0 ** (0.5 * n) * np.exp(special.gammaln(0.5 * (d + n)) - special.gammaln(0.5 * d))


def validate_levy_moments(cfg: SubordinatorConfig, n: int = 2, d: int = 4, *, samples: int = 200_000,
                          seed: int = 0, radii=(1.0, 2.0, 3.0, 4.0)) -> dict:
    """Monte Carlo truncated moments of ``nu_L`` against the Gaussian-mixture quadrature.

    Reports, per unit time, ``int_{|z|<=1} |z|^2`` and ``int_{|z|>1} |z|^n``,
    the untruncated second moment, and the tail rate ``nu_L(|z| > r)``
    relative to ``exp(-r^2 / (4 aleph))``.
    """
    if n < 2:
        raise ValueError("moment order must be at least 2")
    cfg.validate()
    rng = make_rng(seed, 7)
    rate = cfg.jump_rate()
    lo = max(cfg.eps, cfg.lower) if cfg.family != "atom" else cfg.atom
    if cfg.family == "atom":
        u = np.full(samples, cfg.atom)
    else:
        m = rng.random(samples) * rate
        u = cfg.inverse_tail(m)
    z = np.sqrt(u)[:, None] * rng.standard_normal((samples, d))
    r2 = np.sum(z * z, axis=1)
    small = np.where(r2 <= 1.0, r2, 0.0) * rate
    large = np.where(r2 > 1.0, r2 ** (0.5 * n), 0.0) * rate
    second = r2 * rate

    def band(x):
        return float(x.mean()), float(1.96 * x.std(ddof=1) / np.sqrt(len(x)))

    mn = _chi_moment(n, d)
    if cfg.family == "atom":
        q_small = cfg.rate * cfg.atom * d * stats.chi2.cdf(1.0 / cfg.atom, d + 2)
        q_large = cfg.rate * cfg.atom ** (0.5 * n) * mn * stats.chi2.sf(1.0 / cfg.atom, d + n)
        q_second = cfg.rate * cfg.atom * d
        q_tail = [cfg.rate * stats.chi2.sf(r * r / cfg.atom, d) for r in radii]
    else:
        hi = cfg.upper
        q_small = levy_integral(lambda s: s * d * stats.chi2.cdf(1.0 / s, d + 2), cfg, lo, hi)
        q_large = levy_integral(lambda s: s ** (0.5 * n) * mn * stats.chi2.sf(1.0 / s, d + n), cfg, lo, hi)
        q_second = d * levy_integral(lambda s: s, cfg, lo, hi)
        q_tail = [levy_integral(lambda s, r=r: stats.chi2.sf(r * r / s, d), cfg, lo, hi) for r in radii]
    mc_tail = [float(rate * np.mean(r2 > r * r)) for r in radii]
    bound_ref = [float(np.exp(-r * r / (4.0 * cfg.upper))) for r in radii]
    ratios = [q / b for q, b in zip(q_tail, bound_ref)]
    out = {
        "order": n,
        "d": d,
        "jump_rate": rate,
        "small_second_moment": {"mc": band(small), "quadrature": float(q_small)},
        "large_nth_moment": {"mc": band(large), "quadrature": float(q_large)},
        "second_moment": {"mc": band(second), "quadrature": float(q_second),
                          "with_drift": float(d * (q_second / d + cfg.drift()))},
        "tail": {"radii": list(radii), "mc": mc_tail, "quadrature": [float(x) for x in q_tail],
                 "ratio_to_gaussian_envelope": [float(x) for x in ratios]},
        "finite": bool(np.isfinite(q_small) and np.isfinite(q_large)),
    }
    return out
