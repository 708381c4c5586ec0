"""Real Fourier representation of mean-zero fields on the 2-torus.

Fields are stored as real coefficient vectors over a truncated wavenumber
lattice ``|k|_inf <= N_g``.  A wavenumber in the upper half plane (``k2 > 0``
or ``k2 == 0, k1 > 0``) carries ``sin<k,x>``; its negative carries
``cos<k,x>``.  The coefficient dot product is the inner product, so the basis
is treated as orthonormal.

Products are evaluated on a padded physical grid of size ``M >= 3 N_g + 1``,
which makes the projection of any quadratic product back onto the lattice
exact (no aliasing into retained modes).  All routines broadcast over leading
axes, so a batch of fields is an array of shape ``(..., n)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

__all__ = [
    "WavenumberLattice",
    "VorticityField",
    "ModelConfig",
    "SpectralOps",
    "biot_savart",
    "bilinear_B",
    "project",
    "norm",
    "inner",
    "random_field",
]


class LatticeMismatchError(ValueError):
    """Raised when fields defined on different lattices are combined."""


class WavenumberLattice:
    """Ordered list of nonzero wavenumbers with ``|k|_inf <= N_g``.

    The first half of the list holds the plus modes (sin), the second half
    their negatives (cos) in the same order, so ``index(-k) = index(k) + n/2``
    for every plus mode ``k``.
    """

    def __init__(self, cutoff: int):
        cutoff = int(cutoff)
        if cutoff < 1:
            raise ValueError("lattice cutoff must be a positive integer")
        self.cutoff = cutoff
        plus = []
        for k2 in range(0, cutoff + 1):
            for k1 in range(-cutoff, cutoff + 1):
                if k2 > 0 or k1 > 0:
                    plus.append((k1, k2))
        plus = np.array(plus, dtype=np.int64)
        self.n_plus = len(plus)
        self.k = np.concatenate([plus, -plus])
        self.n = len(self.k)
        self.is_plus = np.zeros(self.n, dtype=bool)
        self.is_plus[: self.n_plus] = True
        self.k2norm = (self.k**2).sum(axis=1).astype(float)
        self.knorm = np.sqrt(self.k2norm)
        self.kperp = np.stack([-self.k[:, 1], self.k[:, 0]], axis=1)
        # dense lookup table over the box [-2N, 2N]^2, -1 outside the lattice
        span = 4 * cutoff + 1
        table = -np.ones((span, span), dtype=np.int64)
        table[self.k[:, 0] + 2 * cutoff, self.k[:, 1] + 2 * cutoff] = np.arange(self.n)
        self._table = table

    def __eq__(self, other):
        return isinstance(other, WavenumberLattice) and other.cutoff == self.cutoff

    def __hash__(self):
        return hash(("WavenumberLattice", self.cutoff))

    def __repr__(self):
        return f"WavenumberLattice(cutoff={self.cutoff}, n={self.n})"

    def index(self, k) -> int:
        """Position of wavenumber ``k`` in the coefficient vector."""
        k1, k2 = int(k[0]), int(k[1])
        N = self.cutoff
        if max(abs(k1), abs(k2)) > N or (k1 == 0 and k2 == 0):
            raise KeyError(f"wavenumber {(k1, k2)} is not on the lattice")
        return int(self._table[k1 + 2 * N, k2 + 2 * N])

    def lookup(self, k1: np.ndarray, k2: np.ndarray) -> np.ndarray:
        """Vectorised index lookup; -1 for points off the lattice."""
        N = self.cutoff
        k1 = np.asarray(k1)
        k2 = np.asarray(k2)
        inside = (np.abs(k1) <= 2 * N) & (np.abs(k2) <= 2 * N)
        out = -np.ones(np.broadcast(k1, k2).shape, dtype=np.int64)
        out[inside] = self._table[k1[inside] + 2 * N, k2[inside] + 2 * N]
        return out

    def basis(self, k) -> np.ndarray:
        """Coefficient vector of the single mode ``e_k``."""
        e = np.zeros(self.n)
        e[self.index(k)] = 1.0
        return e

    def low_mask(self, N: float) -> np.ndarray:
        """Boolean mask of modes with Euclidean ``|k| <= N``."""
        return self.knorm <= N + 1e-12

    def observation_indices(self, N_obs: float | None) -> np.ndarray:
        """Indices spanning ``H_{N_obs}`` (the whole lattice if ``None``)."""
        if N_obs is None:
            return np.arange(self.n)
        return np.flatnonzero(self.low_mask(N_obs))

    def to_json(self) -> dict:
        return {"cutoff": self.cutoff, "n": self.n, "ordering": "plus block then negated block"}


@dataclass(frozen=True)
class VorticityField:
    """Vorticity coefficients on a lattice, with CSV serialisation."""

    lattice: WavenumberLattice
    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.lattice.n,):
            raise LatticeMismatchError(
                f"coefficient vector of length {coef.shape} does not match lattice n={self.lattice.n}"
            )
        object.__setattr__(self, "coef", coef)

    def norm(self, alpha: float = 0.0) -> float:
        return norm(self.coef, alpha, self.lattice)

    def to_csv(self, path) -> None:
        """Write ``k1,k2,tag,coefficient`` rows with a JSON header line."""
        lat = self.lattice
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(lat.to_json()) + "\n")
            fh.write("k1,k2,tag,coefficient\n")
            for (k1, k2), plus, c in zip(lat.k, lat.is_plus, self.coef):
                fh.write(f"{k1},{k2},{'plus' if plus else 'minus'},{float(c)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "VorticityField":
        with open(path) as fh:
            header = json.loads(fh.readline()[1:])
            lat = WavenumberLattice(header["cutoff"])
            fh.readline()
            coef = np.zeros(lat.n)
            for line in fh:
                k1, k2, _, c = line.strip().split(",")
                coef[lat.index((int(k1), int(k2)))] = float(c)
        return cls(lat, coef)


@dataclass
class ModelConfig:
    """Viscosity, forcing modes and amplitudes of the stochastic model."""

    nu: float = 0.1
    z0: tuple = ((1, 0), (-1, 0), (1, 1), (-1, -1))
    b: tuple | None = None
    condition_ok: bool | None = field(default=None, compare=False)

    def __post_init__(self):
        self.z0 = tuple(tuple(int(c) for c in k) for k in self.z0)
        if self.b is None:
            self.b = tuple(1.0 for _ in self.z0)
        self.b = tuple(float(x) for x in self.b)
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.nu > 0:
            out.append("viscosity nu must be positive")
        if len(self.z0) == 0:
            out.append("forcing set Z0 must be nonempty")
        if len(self.b) != len(self.z0):
            out.append("one amplitude b_k is required per forcing mode")
        if any(x == 0 for x in self.b):
            out.append("forcing amplitudes b_k must be nonzero")
        zs = set(self.z0)
        if any((-k1, -k2) not in zs for k1, k2 in zs):
            out.append("forcing set Z0 must be symmetric (-Z0 = Z0)")
        if (0, 0) in zs:
            out.append("forcing set Z0 must not contain (0,0)")
        return out

    @property
    def d(self) -> int:
        return len(self.z0)

    @property
    def B0(self) -> float:
        return float(np.sum(np.square(self.b)))

    def forcing_indices(self, lattice: WavenumberLattice) -> np.ndarray:
        return np.array([lattice.index(k) for k in self.z0], dtype=np.int64)

    def to_json(self) -> dict:
        return {"nu": self.nu, "z0": [list(k) for k in self.z0], "b": list(self.b)}


def inner(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Coefficient inner product along the last axis."""
    return np.sum(np.asarray(u) * np.asarray(v), axis=-1)


def norm(w, alpha: float, lattice: WavenumberLattice) -> np.ndarray:
    """Weighted norm ``(sum |k|^{2 alpha} w_k^2)^{1/2}``.

    ``w`` may be a coefficient array or a velocity pair ``(u1, u2)``, in
    which case the component norms are combined.
    """
    weight = lattice.k2norm**alpha
    if isinstance(w, tuple):
        return np.sqrt(sum(np.sum(weight * np.asarray(c) ** 2, axis=-1) for c in w))
    w = np.asarray(w, dtype=float)
    return np.sqrt(np.sum(weight * w**2, axis=-1))


def project(w: np.ndarray, N: float, part: str, lattice: WavenumberLattice) -> np.ndarray:
    """``P_N w`` (part='low') or ``Q_N w`` (part='high') with Euclidean |k|."""
    if N > lattice.cutoff:
        raise ValueError(f"projection cutoff N={N} exceeds lattice cutoff {lattice.cutoff}")
    mask = lattice.low_mask(N)
    if part == "low":
        return np.where(mask, w, 0.0)
    if part == "high":
        return np.where(mask, 0.0, w)
    raise ValueError("part must be 'low' or 'high'")


def random_field(lattice: WavenumberLattice, rng, size=(), decay: float = 1.0) -> np.ndarray:
    """Gaussian coefficients scaled by ``|k|^{-decay}``."""
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    return rng.standard_normal(shape + (lattice.n,)) * lattice.knorm ** (-decay)


class SpectralOps:
    """FFT engine for one lattice: Biot-Savart, bilinear term and its derivatives."""

    def __init__(self, lattice: WavenumberLattice, grid: int | None = None, workers: int = 1):
        self.lattice = lattice
        N = lattice.cutoff
        M = sfft.next_fast_len(3 * N + 1, real=True) if grid is None else int(grid)
        if M < 3 * N + 1:
            raise ValueError("grid too coarse for exact dealiasing (need M >= 3N+1)")
        self.M = M
        self.workers = workers
        Mr = M // 2 + 1
        self.shape_hat = (M, Mr)
        lat = lattice
        plus = lat.k[: lat.n_plus]
        self._rows = np.mod(plus[:, 0], M)
        self._cols = plus[:, 1]
        axis = plus[:, 1] == 0
        self._axis = np.flatnonzero(axis)
        self._axis_rows = np.mod(-plus[axis, 0], M)
        k1 = np.fft.fftfreq(M, 1.0 / M)
        k2 = np.arange(Mr, dtype=float)
        self._ik1 = 1j * k1[:, None] * np.ones(Mr)[None, :]
        self._ik2 = 1j * np.ones(M)[:, None] * k2[None, :]
        ksq = k1[:, None] ** 2 + k2[None, :] ** 2
        inv = np.zeros_like(ksq)
        inv[ksq > 0] = 1.0 / ksq[ksq > 0]
        # velocity multipliers: u1 = i k2 w / |k|^2, u2 = -i k1 w / |k|^2
        self._m1 = self._ik2 * inv
        self._m2 = -self._ik1 * inv
        self._scale = float(M * M)
        h = lat.n_plus
        kk = lat.k[:h].astype(float)
        inv_plus = 1.0 / lat.k2norm[:h]
        self._bs = (kk[:, 0] * inv_plus, kk[:, 1] * inv_plus)

    # -- packing between real coefficients and the rfft layout -------------
    def pack(self, coef: np.ndarray) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        h = self.lattice.n_plus
        lead = coef.shape[:-1]
        a = coef[..., :h]
        c = coef[..., h:]
        vals = (0.5 * self._scale) * (c - 1j * a)
        F = np.zeros(lead + self.shape_hat, dtype=complex)
        F[..., self._rows, self._cols] = vals
        F[..., self._axis_rows, 0] = np.conj(vals[..., self._axis])
        return F

    def unpack(self, F: np.ndarray) -> np.ndarray:
        vals = F[..., self._rows, self._cols] * (2.0 / self._scale)
        return np.concatenate([-vals.imag, vals.real], axis=-1)

    def to_grid(self, F: np.ndarray) -> np.ndarray:
        return sfft.irfft2(F, s=(self.M, self.M), workers=self.workers)

    def to_hat(self, g: np.ndarray) -> np.ndarray:
        return sfft.rfft2(g, workers=self.workers)

    def field_grid(self, coef: np.ndarray) -> np.ndarray:
        return self.to_grid(self.pack(coef))

    def project_grid(self, g: np.ndarray) -> np.ndarray:
        """Lattice coefficients of a physical-grid field (Galerkin projection)."""
        return self.unpack(self.to_hat(g))

    # -- Biot-Savart -------------------------------------------------------
    def biot_savart(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocity ``Kw`` as a pair of real coefficient vectors."""
        w = np.asarray(w, dtype=float)
        h = self.lattice.n_plus
        a, c = w[..., :h], w[..., h:]
        q1, q2 = self._bs  # k1/|k|^2, k2/|k|^2
        u1 = np.concatenate([-q2 * c, q2 * a], axis=-1)
        u2 = np.concatenate([q1 * c, -q1 * a], axis=-1)
        return u1, u2

    def biot_savart_adjoint(self, f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`biot_savart` in the coefficient inner product."""
        h = self.lattice.n_plus
        q1, q2 = self._bs
        a1, c1 = f1[..., :h], f1[..., h:]
        a2, c2 = f2[..., :h], f2[..., h:]
        a = q2 * c1 - q1 * c2
        c = -q2 * a1 + q1 * a2
        return np.concatenate([a, c], axis=-1)

    def curl_grid(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """``d1 u2 - d2 u1`` on the physical grid."""
        return self.to_grid(self._ik1 * self.pack(u2) - self._ik2 * self.pack(u1))

    def div_grid(self, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
        return self.to_grid(self._ik1 * self.pack(u1) + self._ik2 * self.pack(u2))

    # -- bilinear term ---------------------------------------------------
    def bilinear(self, u1: np.ndarray, u2: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Galerkin projection of ``-(u . grad) w``."""
        F = self.pack(w)
        g1 = self.to_grid(self._ik1 * F)
        g2 = self.to_grid(self._ik2 * F)
        prod = -(self.field_grid(u1) * g1 + self.field_grid(u2) * g2)
        return self.project_grid(prod)

    def grids(self, w: np.ndarray) -> "FlowGrids":
        """Physical-grid velocity and vorticity gradient of ``w``."""
        F = self.pack(w)
        return FlowGrids(
            u1=self.to_grid(self._m1 * F),
            u2=self.to_grid(self._m2 * F),
            d1=self.to_grid(self._ik1 * F),
            d2=self.to_grid(self._ik2 * F),
        )

    def nonlinear(self, w: np.ndarray, g: "FlowGrids | None" = None) -> np.ndarray:
        """``B(Kw, w)``."""
        if g is None:
            g = self.grids(w)
        return self.project_grid(-(g.u1 * g.d1 + g.u2 * g.d2))

    def dn(self, g: "FlowGrids", psi: np.ndarray) -> np.ndarray:
        """Linearisation ``B(Kw, psi) + B(K psi, w)`` about the flow in ``g``."""
        p = self.grids(psi)
        prod = -(g.u1 * p.d1 + g.u2 * p.d2 + p.u1 * g.d1 + p.u2 * g.d2)
        return self.project_grid(prod)

    def dn_transpose(self, g: "FlowGrids", phi: np.ndarray) -> np.ndarray:
        """Exact transpose of :meth:`dn` in the coefficient inner product."""
        F = self.pack(phi)
        pg = self.to_grid(F)
        p1 = self.to_grid(self._ik1 * F)
        p2 = self.to_grid(self._ik2 * F)
        # -B(Kw, phi) by skew-symmetry of the Galerkin form
        first = self.project_grid(g.u1 * p1 + g.u2 * p2)
        f1 = self.project_grid(-pg * g.d1)
        f2 = self.project_grid(-pg * g.d2)
        return first + self.biot_savart_adjoint(f1, f2)

    def d2n(self, gx: "FlowGrids", gy: "FlowGrids") -> np.ndarray:
        """Symmetric second derivative ``B(Kx, y) + B(Ky, x)`` from grids."""
        prod = -(gx.u1 * gy.d1 + gx.u2 * gy.d2 + gy.u1 * gx.d1 + gy.u2 * gx.d2)
        return self.project_grid(prod)


@dataclass
class FlowGrids:
    u1: np.ndarray
    u2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


_OPS_CACHE: dict = {}


def spectral_ops(lattice: WavenumberLattice) -> SpectralOps:
    """Shared :class:`SpectralOps` per lattice."""
    ops = _OPS_CACHE.get(lattice.cutoff)
    if ops is None:
        ops = SpectralOps(lattice)
        _OPS_CACHE[lattice.cutoff] = ops
    return ops


def biot_savart(w: VorticityField) -> tuple[np.ndarray, np.ndarray]:
    """Velocity ``Kw`` of a field, as real coefficient pair ``(u1, u2)``."""
    return spectral_ops(w.lattice).biot_savart(w.coef)


def bilinear_B(u: tuple[np.ndarray, np.ndarray], w: VorticityField) -> VorticityField:
    """``B(u, w) = -(u . grad) w`` projected onto the lattice of ``w``."""
    u1, u2 = u
    n = w.lattice.n
    if np.shape(u1)[-1] != n or np.shape(u2)[-1] != n:
        raise LatticeMismatchError("velocity and vorticity live on different lattices")
    return VorticityField(w.lattice, spectral_ops(w.lattice).bilinear(u1, u2, w.coef))
