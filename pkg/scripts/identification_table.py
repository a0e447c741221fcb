"""Relative error of the recovered constant speed across data resolutions.

Solves the synthetic reference problem once, samples it onto square data
grids and fits a constant-coefficient model for each (scheme, p_x, N)
combination. Prints a table and optionally writes it as JSON.

    python3 scripts/identification_table.py --sizes 5 11 21 51 --px 1 5
"""
import argparse
import json
import time

from trmfit.estimation import EstimationProblem, minimize
from trmfit.gradients import observation_pattern
from trmfit.grid import SubdivisionSpec, minimal_p_t
from trmfit.synthetic import ReferenceConfig, ground_truth, sample


def fit(data, kind, p_x, observed, v_true=1.0):
    spec = SubdivisionSpec(minimal_p_t(data.grid, p_x, v_true), p_x)
    cols = observation_pattern(observed, data.grid.n_x)
    t0 = time.perf_counter()
    res = minimize(EstimationProblem(data, kind=kind, spec=spec, observed_cols=cols))
    return {
        "kind": kind, "p_x": p_x, "p_t": spec.p_t, "n": data.grid.n_x, "observed": observed,
        "v_m": float(res.v_m_star), "rel_error": abs(float(res.v_m_star) - v_true) / v_true,
        "rmse_full": res.rmse_full, "iterations": res.iterations,
        "seconds": time.perf_counter() - t0,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[5, 11, 21, 51])
    ap.add_argument("--px", type=int, nargs="+", default=[1, 5])
    ap.add_argument("--schemes", nargs="+", default=["trm", "lxf"])
    ap.add_argument("--observed", nargs="+", default=["full"], choices=["full", "single"])
    ap.add_argument("--dx", type=float, default=1e-3, help="reference grid spacing")
    ap.add_argument("--json", help="write rows to this file")
    args = ap.parse_args()

    ref = ground_truth(ReferenceConfig(dx=args.dx))
    rows = []
    print(f"{'scheme':>6} {'p_x':>3} {'p_t':>3} {'N':>3} {'obs':>6} {'v_m':>8} "
          f"{'rel.err':>8} {'rmse':>8} {'iters':>5} {'sec':>6}")
    for n in args.sizes:
        data = sample(ref, n, n, (-1.0, 1.0), 1.0)
        for kind in args.schemes:
            for p_x in args.px:
                for observed in args.observed:
                    r = fit(data, kind, p_x, observed)
                    rows.append(r)
                    print(f"{kind:>6} {p_x:>3} {r['p_t']:>3} {n:>3} {observed:>6} {r['v_m']:8.4f} "
                          f"{r['rel_error']:8.4f} {r['rmse_full']:8.4f} {r['iterations']:>5} "
                          f"{r['seconds']:6.1f}", flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
