"""Experiment configuration: loading, validation, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .integrator import kappa_cap
from .levy import SubordinatorConfig
from .spectral import ModelConfig, WavenumberLattice

__all__ = ["ExperimentConfig", "ConfigError", "DEFAULTS", "load_config"]

DEFAULTS: dict = {
    "seed": 0,
    "model": {"nu": 0.1, "z0": [[1, 0], [-1, 0], [1, 1], [-1, -1]], "b": None},
    "subordinator": {"family": "tempered", "alpha": 1.0, "aleph": 1.0, "eps": 1e-4, "zeta": 1.0},
    "lattice": {"cutoff": 32},
    "integrator": {"h_max": 1e-3, "ceiling": 1e6, "horizon": 5.0, "snapshots": [1.0, 2.0, 5.0]},
    "initial": {"kind": "zero", "radius": 1.0, "modes": [[1, 0]]},
    "clock": {"kappa": None},
    "malliavin": {"N_obs": 8, "alpha": 0.5, "N": 4, "eps_grid": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
                  "samples": 64, "half_window": True, "window": None},
    "coupling": {"betas": [1e-4, 1e-3, 1e-2, 1e-1], "Ns": [4, 8], "n_windows": 6, "xi": [[1, 0], [2, 1]],
                 "h_max": 1e-2, "grad_times": [5.0, 10.0, 20.0]},
    "ensemble": {"size": 100},
    "observables": [{"name": "sin_mode", "k": [1, 0], "scale": 1.0}],
}


class ConfigError(ValueError):
    """Configuration violates one or more preconditions; ``problems`` lists all of them."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    # -- construction ------------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict | None = None) -> "ExperimentConfig":
        return cls(_merge(DEFAULTS, data or {}))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_bytes()
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text.decode())
        else:
            data = json.loads(text)
        return cls.from_dict(data)

    # -- views -------------------------------------------------------------
    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def model(self) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(nu=m["nu"], z0=tuple(map(tuple, m["z0"])), b=None if m.get("b") is None else tuple(m["b"]))

    def subordinator(self) -> SubordinatorConfig:
        s = dict(self.raw["subordinator"])
        return SubordinatorConfig(**{k: v for k, v in s.items() if k in SubordinatorConfig.__dataclass_fields__})

    def lattice(self) -> WavenumberLattice:
        return WavenumberLattice(int(self.raw["lattice"]["cutoff"]))

    def kappa(self) -> float:
        k = self.raw["clock"].get("kappa")
        if k is None:
            m = self.model()
            return 1e-3 * m.nu / m.B0
        return float(k)

    def initial(self, lattice: WavenumberLattice | None = None) -> np.ndarray:
        lat = lattice or self.lattice()
        ini = self.raw["initial"]
        kind = ini.get("kind", "zero")
        if kind == "zero":
            return np.zeros(lat.n)
        if kind == "modes":
            w = np.zeros(lat.n)
            for k in ini["modes"]:
                w[lat.index(tuple(k))] += 1.0
            return float(ini.get("radius", 1.0)) * w / np.linalg.norm(w)
        if kind == "random":
            rng = np.random.default_rng([self.seed, 0x1C])
            w = rng.standard_normal(lat.n) / (1.0 + lat.k2norm)
            return float(ini.get("radius", 1.0)) * w / np.linalg.norm(w)
        raise ValueError(f"unknown initial condition kind {kind!r}")

    # -- validation --------------------------------------------------------
    def problems(self, suite: str | None = None) -> list[str]:
        """Every precondition violation, not just the first."""
        out: list[str] = []
        r = self.raw
        model = None
        try:
            model = self.model()
        except (ValueError, TypeError) as exc:
            out.extend(f"model: {p}" for p in str(exc).split("; "))
        try:
            sub = self.subordinator()
            out.extend(f"subordinator: {p}" for p in sub.problems())
        except TypeError as exc:
            out.append(f"subordinator: {exc}")
            sub = None
        cutoff = r["lattice"].get("cutoff")
        if not isinstance(cutoff, int) or cutoff < 1:
            out.append("lattice: cutoff N_g must be a positive integer")
            cutoff = None
        if model is not None and cutoff is not None:
            if any(max(abs(a), abs(b)) > cutoff for a, b in model.z0):
                out.append("model: forcing modes must lie on the lattice")
        integ = r["integrator"]
        if not integ.get("h_max", 0) > 0:
            out.append("integrator: h_max must be positive")
        if not integ.get("ceiling", 0) > 0:
            out.append("integrator: ceiling must be positive")
        if not integ.get("horizon", 0) > 0:
            out.append("integrator: horizon T must be positive")
        if any(not 0 <= t <= integ.get("horizon", 0) for t in integ.get("snapshots", [])):
            out.append("integrator: snapshot times must lie in [0, T]")
        ini = r["initial"]
        if ini.get("kind") not in ("zero", "modes", "random"):
            out.append("initial: kind must be zero, modes or random")
        if ini.get("radius", 1.0) < 0:
            out.append("initial: radius must be nonnegative")
        if ini.get("kind") == "modes" and cutoff is not None:
            if any(max(abs(a), abs(b)) > cutoff or (a, b) == (0, 0) for a, b in ini.get("modes", [])):
                out.append("initial: modes must be nonzero lattice wavenumbers")
        kappa = r["clock"].get("kappa")
        if kappa is not None:
            if not kappa > 0:
                out.append(f"clock: kappa must be positive (clock precondition kappa in (0, kappa_cap]), got {kappa}")
            elif model is not None and sub is not None and not sub.problems():
                cap = kappa_cap(model, sub.drift())
                if kappa > cap:
                    out.append(f"clock: kappa={kappa} exceeds kappa_cap={cap:.4g} (clock precondition)")
        mal = r["malliavin"]
        n_obs = mal.get("N_obs")
        if n_obs is not None and not n_obs > 0:
            out.append("malliavin: N_obs must be positive")
        if not 0 < mal.get("alpha", 0) <= 1:
            out.append("malliavin: alpha must lie in (0, 1]")
        if not mal.get("N", 0) > 0:
            out.append("malliavin: N must be positive")
        if n_obs is not None and mal.get("N", 0) > n_obs:
            out.append("malliavin: N must not exceed N_obs")
        if cutoff is not None and mal.get("N", 0) > cutoff:
            out.append("malliavin: N must not exceed the lattice cutoff")
        eps = np.asarray(mal.get("eps_grid", []), float)
        if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            out.append("malliavin: eps_grid must be positive and strictly decreasing")
        cp = r["coupling"]
        if any(not b > 0 for b in cp.get("betas", [])) or not cp.get("betas"):
            out.append("coupling: betas must be a nonempty list of positive numbers")
        if any(not n > 0 for n in cp.get("Ns", [])):
            out.append("coupling: Ns must be positive")
        if cp.get("n_windows", 0) < 2:
            out.append("coupling: n_windows must be at least 2")
        if not r["ensemble"].get("size", 0) >= 1:
            out.append("ensemble: size must be at least 1")
        if suite == "energy" and r["ensemble"].get("size", 0) < 100:
            out.append("ensemble: energy statistics need at least 100 trajectories")
        for o in r.get("observables", []):
            if o.get("name") not in ("mode", "sin_mode", "smoothed_energy"):
                out.append(f"observables: unknown observable {o.get('name')!r}")
        return out

    def validate(self, suite: str | None = None) -> "ExperimentConfig":
        probs = self.problems(suite)
        if probs:
            raise ConfigError(probs)
        return self

    # -- identity ----------------------------------------------------------
    def canonical(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(path) if path else ExperimentConfig.from_dict()
    if overrides:
        cfg = ExperimentConfig(_merge(cfg.raw, overrides))
    return cfg
