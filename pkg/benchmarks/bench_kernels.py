"""Compare the numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the switch
(``NSJUMP_DISABLE_NUMBA``) is read at import time.  The numba column
excludes compilation: every kernel is called once before timing.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--cutoff 4]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def worker(repeat: int, cutoff: int) -> dict:
    from nsjump import _kernels
    from nsjump.integrator import clock_from_path, simulate
    from nsjump.levy import SubordinatorConfig, sample_noise_increments, sample_subordinator
    from nsjump.malliavin import assemble_gram
    from nsjump.spectral import ModelConfig, WavenumberLattice
    from nsjump.variational import TangentSolveSpec, tangent

    import numpy as np

    model = ModelConfig(nu=0.1)
    lat = WavenumberLattice(cutoff)
    sub = SubordinatorConfig(eps=1e-2)
    path = sample_subordinator(sub, 1.0, 7)
    noise = sample_noise_increments(path, model.d, 7, h_max=1e-2)
    w0 = 0.5 * (lat.basis((1, 0)) + lat.basis((0, 1)))
    rec = simulate(w0, model, noise, lat, method="dense")
    xi = np.eye(lat.n)
    long_path = sample_subordinator(sub, 200.0, 7)
    kappa = 1e-3 * model.nu / model.B0
    timings = {
        "simulate_dense": _best(lambda: simulate(w0, model, noise, lat, method="dense"), repeat),
        "tangent_matrix": _best(lambda: tangent(TangentSolveSpec(rec, 0.0, 1.0, xi), "dense"), repeat),
        "gram_assembly": _best(lambda: assemble_gram(rec, 0.0, 1.0, 2, method="dense"), repeat),
        "clock_scan": _best(lambda: clock_from_path(long_path, kappa, model), repeat),
    }
    return {"numba": _kernels.USE_NUMBA, "modes": lat.n, "steps": len(rec.grid) - 1, "seconds": timings}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--cutoff", type=int, default=4)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(worker(args.repeat, args.cutoff)))
        return 0
    rows = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, NSJUMP_DISABLE_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeat", str(args.repeat), "--cutoff", str(args.cutoff)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        rows[label] = json.loads(res.stdout.strip().splitlines()[-1])
    a, b = rows["numba"], rows["numpy"]
    print(f"lattice modes {a['modes']}, {a['steps']} steps, best of {args.repeat}")
    print(f"{'kernel':<16}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for k in a["seconds"]:
        x, y = a["seconds"][k], b["seconds"][k]
        print(f"{k:<16}{x:>12.4g}{y:>12.4g}{y / x:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
