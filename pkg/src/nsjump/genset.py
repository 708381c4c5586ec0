"""Generator condition on the forcing set and the ``Z_n`` saturation recursion.

``Z_n = {i + j : j in Z_0, i in Z_{n-1}, <i_perp, j> != 0, |i| != |j|}``; the
forcing spreads to every mode of ``{|k| <= N}`` once the union of the levels
covers that disc.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import reduce

__all__ = ["ConditionFlags", "GeneratorReport", "check_condition", "saturate", "parse_z0"]


def parse_z0(text: str) -> list[tuple[int, int]]:
    """Parse ``"(1,0),(-1,0),(1,1)"`` into integer pairs."""
    pairs = re.findall(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)", text)
    if not pairs:
        raise ValueError(f"no wavenumbers found in {text!r}")
    return [(int(a), int(b)) for a, b in pairs]


def _cross(i, j):
    # <i_perp, j> with i_perp = (-i2, i1)
    return -i[1] * j[0] + i[0] * j[1]


def _sq(k):
    return k[0] * k[0] + k[1] * k[1]


@dataclass(frozen=True)
class ConditionFlags:
    nonempty: bool
    excludes_zero: bool
    symmetric: bool
    generator: bool
    nonparallel_unequal: bool
    witness: tuple | None = None

    @property
    def ok(self) -> bool:
        return (self.nonempty and self.excludes_zero and self.symmetric
                and self.generator and self.nonparallel_unequal)

    def to_json(self) -> dict:
        return {"nonempty": self.nonempty, "excludes_zero": self.excludes_zero,
                "symmetric": self.symmetric, "generator": self.generator,
                "nonparallel_unequal": self.nonparallel_unequal,
                "witness": None if self.witness is None else [list(w) for w in self.witness],
                "ok": self.ok}


def check_condition(z0) -> ConditionFlags:
    """Symmetry, integer generation of Z^2 and a non-parallel pair of unequal moduli.

    The integer span of a set of vectors in Z^2 is all of Z^2 exactly when
    the gcd of its 2x2 minors is 1 (the Hermite normal form is the identity).
    """
    pts = {tuple(int(c) for c in k) for k in z0}
    nonempty = bool(pts)
    excludes_zero = (0, 0) not in pts
    symmetric = all((-a, -b) in pts for a, b in pts)
    items = sorted(pts)
    g = reduce(math.gcd, (abs(_cross(i, j)) for i in items for j in items), 0)
    generator = g == 1
    witness = None
    for i in items:
        for j in items:
            if _cross(i, j) != 0 and _sq(i) != _sq(j):
                witness = (i, j)
                break
        if witness:
            break
    return ConditionFlags(nonempty, excludes_zero, symmetric, generator, witness is not None, witness)


@dataclass
class GeneratorReport:
    z0: list
    N: float
    flags: ConditionFlags
    levels: list                   # Z_0, Z_1, ... as sorted lists
    saturation_level: int | None
    uncovered: list
    clip: int
    clipped: list = field(default_factory=list)   # per level: points dropped by the clip box

    @property
    def saturated(self) -> bool:
        return self.saturation_level is not None

    def covered(self, upto: int | None = None) -> set:
        upto = len(self.levels) - 1 if upto is None else upto
        out = set()
        for lvl in self.levels[: upto + 1]:
            out.update(map(tuple, lvl))
        return out

    def to_json(self) -> dict:
        return {
            "z0": [list(k) for k in self.z0], "N": self.N, "flags": self.flags.to_json(),
            "level_sizes": [len(l) for l in self.levels],
            "saturation_level": self.saturation_level, "saturated": self.saturated,
            "uncovered": [list(k) for k in self.uncovered],
            "clip": self.clip, "clipped": self.clipped,
        }


def saturate(z0, N: float, max_levels: int = 32, clip: int | None = None) -> GeneratorReport:
    """Enumerate ``Z_n`` until ``{0 < |k| <= N}`` is covered or ``max_levels`` is hit.

    Level sets are clipped to ``|k|_inf <= clip`` (default ``4N``); the number
    of dropped points per level is reported rather than hidden.
    """
    z0 = sorted({tuple(int(c) for c in k) for k in z0})
    flags = check_condition(z0)
    clip = int(math.ceil(4 * N)) if clip is None else int(clip)
    r = int(math.floor(N))
    target = {(a, b) for a in range(-r, r + 1) for b in range(-r, r + 1)
              if 0 < a * a + b * b <= N * N + 1e-9}
    levels = [list(z0)]
    covered = set(z0)
    clipped = [0]
    sat = 0 if target <= covered else None
    cur = set(z0)
    n = 0
    while sat is None and n < max_levels and cur:
        n += 1
        nxt, dropped = set(), set()
        for i in cur:
            si = _sq(i)
            for j in z0:
                if _cross(i, j) != 0 and si != _sq(j):
                    k = (i[0] + j[0], i[1] + j[1])
                    if k == (0, 0):
                        continue
                    if max(abs(k[0]), abs(k[1])) > clip:
                        dropped.add(k)
                    else:
                        nxt.add(k)
        levels.append(sorted(nxt))
        clipped.append(len(dropped))
        covered |= nxt
        cur = nxt
        if target <= covered:
            sat = n
    uncovered = sorted(target - covered)
    return GeneratorReport(z0, float(N), flags, levels, sat, uncovered, clip, clipped)
