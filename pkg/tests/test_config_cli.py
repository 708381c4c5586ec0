"""Configuration validation and the command-line suites."""

import json
from pathlib import Path

import numpy as np
import pytest

from nsjump.cli import load_record, main, parse_direction
from nsjump.config import ConfigError, ExperimentConfig, load_config
from nsjump.spectral import VorticityField, WavenumberLattice

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMOKE = str(CONFIGS / "smoke.json")


def _files(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--config", SMOKE, "--out", str(out)]) == 0
    return out


class TestConfig:
    def test_defaults_valid(self):
        assert ExperimentConfig.from_dict().problems() == []

    def test_shipped_configs_valid(self):
        assert load_config(CONFIGS / "desk.toml").problems("energy") == []
        assert load_config(SMOKE).problems() == []

    def test_nonpositive_kappa(self):
        cfg = ExperimentConfig.from_dict({"clock": {"kappa": 0.0}})
        with pytest.raises(ConfigError) as exc:
            cfg.validate()
        assert "clock precondition" in str(exc.value)

    def test_kappa_above_cap(self):
        probs = ExperimentConfig.from_dict({"clock": {"kappa": 10.0}}).problems()
        assert any("kappa_cap" in p for p in probs)

    def test_all_violations_listed(self):
        cfg = ExperimentConfig.from_dict({
            "model": {"nu": -1.0, "z0": [[1, 0]]},
            "subordinator": {"eps": 2.0},
            "integrator": {"h_max": 0.0},
            "malliavin": {"N": 9, "N_obs": 4},
            "coupling": {"betas": [0.0], "n_windows": 1},
            "observables": [{"name": "vorticity"}],
        })
        with pytest.raises(ConfigError) as exc:
            cfg.validate()
        probs = exc.value.problems
        for part in ("nu must be positive", "symmetric", "exceeds aleph", "h_max", "N must not exceed N_obs",
                     "betas", "n_windows", "unknown observable"):
            assert any(part in p for p in probs), part

    def test_energy_suite_needs_ensemble(self):
        cfg = load_config(SMOKE)
        assert cfg.problems() == []
        assert any("100 trajectories" in p for p in cfg.problems("energy"))

    def test_hash(self, tmp_path):
        a = load_config(SMOKE)
        (tmp_path / "c.json").write_text(json.dumps(json.loads(Path(SMOKE).read_text()), indent=4))
        assert load_config(tmp_path / "c.json").hash() == a.hash()
        assert load_config(SMOKE, {"seed": 2}).hash() != a.hash()

    def test_initial_conditions(self):
        cfg = load_config(SMOKE)
        lat = cfg.lattice()
        w = cfg.initial(lat)
        assert np.linalg.norm(w) == pytest.approx(1.0)
        assert w[lat.index((1, 0))] == w[lat.index((0, 1))] > 0


class TestDirections:
    def test_mode_and_random(self):
        lat = WavenumberLattice(2)
        v = parse_direction("mode:1,0;0,1", lat)
        assert np.linalg.norm(v) == pytest.approx(1.0) and np.count_nonzero(v) == 2
        np.testing.assert_array_equal(parse_direction("random:3", lat), parse_direction("random:3", lat))

    def test_csv(self, tmp_path):
        lat = WavenumberLattice(2)
        VorticityField(lat, 2 * lat.basis((1, 1))).to_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(parse_direction(str(tmp_path / "d.csv"), lat), lat.basis((1, 1)))
        with pytest.raises(ValueError):
            parse_direction(str(tmp_path / "d.csv"), WavenumberLattice(3))


class TestSimulate:
    def test_outputs(self, sim_dir):
        names = set(_files(sim_dir))
        for f in ("record.json", "path.jsonl", "energy.csv", "clock.json", "manifest.json", "timing.json",
                  "snapshots/w_t0.csv", "snapshots/w_t0.5.csv", "snapshots/w_t1.csv"):
            assert f in names
        assert not (sim_dir / "INCOMPLETE").exists() and not (sim_dir / "FAILED").exists()
        man = json.loads((sim_dir / "manifest.json").read_text())
        assert man["status"] == "passed" and man["seed"] == 1 and len(man["config_hash"]) == 64
        assert "numba_enabled" in man["versions"]

    def test_rerun_is_byte_identical(self, sim_dir, tmp_path):
        assert main(["simulate", "--config", SMOKE, "--out", str(tmp_path)]) == 0
        a, b = _files(sim_dir), _files(tmp_path)
        a.pop("timing.json")
        b.pop("timing.json")
        assert a == b

    def test_record_reload(self, sim_dir):
        cfg, rec = load_record(sim_dir)
        snap = VorticityField.from_csv(sim_dir / "snapshots" / "w_t1.csv")
        np.testing.assert_array_equal(rec.final, snap.coef)

    def test_tampered_record_rejected(self, sim_dir, tmp_path):
        for f in ("record.json", "path.jsonl"):
            (tmp_path / f).write_bytes((sim_dir / f).read_bytes())
        lines = (tmp_path / "path.jsonl").read_text().splitlines()
        row = json.loads(lines[1])
        row["g"][0] += 1.0
        lines[1] = json.dumps(row)
        (tmp_path / "path.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            load_record(tmp_path)


class TestSuites:
    def test_tangent(self, sim_dir, tmp_path):
        assert main(["tangent", "--config", SMOKE, "--record", str(sim_dir), "--dir", "mode:1,0",
                     "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "tangent.json").read_text())
        assert rep["duality_residual"] < 1e-12 and rep["semigroup_residual"] < 1e-12
        assert (tmp_path / "tangent.csv").exists() and (tmp_path / "adjoint.csv").exists()

    def test_malliavin(self, sim_dir, tmp_path):
        assert main(["malliavin", "--config", SMOKE, "--record", str(sim_dir), "--window", "0.2,0.9",
                     "--nobs", "2", "--out", str(tmp_path)]) == 0
        G = np.loadtxt(tmp_path / "gram.csv", delimiter=",")
        # |k| <= 2 on the cutoff-3 lattice: 12 modes
        assert G.shape == (12, 12)
        np.testing.assert_allclose(G, G.T, atol=1e-15 * np.abs(G).max())

    def test_genset(self, tmp_path):
        assert main(["genset", "--z0", "(1,0),(-1,0),(1,1),(-1,-1)", "--cutoff", "8", "--out", str(tmp_path)]) == 0
        rep = json.loads((tmp_path / "genset.json").read_text())
        assert rep["saturated"] and rep["saturation_level"] == 16 and rep["flags"]["ok"]
        assert main(["genset", "--z0", "(1,0),(-1,0)", "--out", str(tmp_path / "neg")]) == 1

    def test_invalid_config_writes_failed(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"clock": {"kappa": -1.0}, "model": {"nu": 0.0}}))
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(bad), "--out", str(out)]) == 2
        text = (out / "FAILED").read_text()
        assert "clock precondition" in text and "nu must be positive" in text

    def test_runtime_error_writes_failed(self, tmp_path):
        out = tmp_path / "run"
        assert main(["tangent", "--config", SMOKE, "--record", str(tmp_path / "missing"), "--dir", "random",
                     "--out", str(out)]) == 1
        assert (out / "FAILED").exists() and not (out / "INCOMPLETE").exists()
        assert json.loads((out / "manifest.json").read_text())["status"] == "failed"
