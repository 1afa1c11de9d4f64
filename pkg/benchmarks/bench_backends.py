"""Compare the numba and numpy backends of the hot kernels.

Times the inductance assembly, the direct Biot-Savart sum and the treecode
on a 42 nm constriction, checks that both backends agree, and prints one line
per kernel. Run with ``python benchmarks/bench_backends.py [--quick]``.
"""

import argparse
from dataclasses import replace
import time

import numpy as np

from nanocoupling.current_solver import solve_resonator
from nanocoupling.geometry import ResonatorSpec, SheetStack, build_geometry, mesh_geometry
from nanocoupling.kernels.biot_savart import SourceTree, direct_field, tree_field
from nanocoupling.kernels.inductance import mean_inverse_distance, sheet_offsets


def timed(fn, repeat=1):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)

    spec = replace(ResonatorSpec(), constriction_width=42e-9, constriction_length=500e-9)
    geom = build_geometry(spec)
    sheets = SheetStack.equidistant(geom.thickness, spec.n_sheets)
    mesh = mesh_geometry(geom, 500 if args.quick else 2000)
    w = sheets.screening_weights(geom.lambda_L)
    dz, cm = sheet_offsets(sheets.z, w)

    sol = solve_resonator(spec, 1000 if args.quick else 4000)
    src = sol.source_panels()
    rng = np.random.default_rng(0)
    n_direct = 50 if args.quick else 200
    n_tree = 500 if args.quick else 5000
    pts = np.column_stack([rng.uniform(-5e-7, 5e-7, n_tree), rng.uniform(-5e-7, 5e-7, n_tree),
                           rng.uniform(1.5e-9, 2e-7, n_tree)])
    tree = SourceTree(*src, sheets.z, sol.weights)

    kernels = {
        f"inductance ({mesh.n_cells} cells)":
            lambda b: mean_inverse_distance(mesh.xc, mesh.yc, mesh.hx, mesh.hy, dz, cm, backend=b),
        f"direct field ({n_direct} pts x {len(src[0])} panels)":
            lambda b: direct_field(pts[:n_direct], *src, sheets.z, sol.weights, backend=b),
        f"tree field ({n_tree} pts)":
            lambda b: tree_field(pts, tree, backend=b),
    }
    print(f"{'kernel':45s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, fn in kernels.items():
        fn("numba")  # compile / load cache
        t_nb, a = timed(lambda: fn("numba"), repeat=3)
        t_np, b = timed(lambda: fn("numpy"))
        diff = float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
        print(f"{name:45s} {t_nb:10.3f} {t_np:10.3f} {t_np / t_nb:8.1f} {diff:13.2e}")


if __name__ == "__main__":
    main()
