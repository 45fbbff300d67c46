"""Criterion evaluations of one tree against n, per assignation search mode.

Prints the log-log slopes and writes results/complexity/.
"""

import argparse
from pathlib import Path

from rfassign.bench import complexity_probe, emit_probe, probe_slopes

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-grid", type=int, nargs="+", default=[100, 200, 400, 800])
    ap.add_argument("--missing", type=float, default=0.4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=ROOT / "results" / "complexity")
    args = ap.parse_args()
    rows = complexity_probe(args.n_grid, args.missing, args.seed)
    for r in rows:
        print(f"n={r.n:5d} {r.mode:10s} evaluations={r.cart_evaluations:10d} nodes={r.n_nodes}")
    for mode, slope in probe_slopes(rows).items():
        print(f"slope {mode.lower()}: {slope:.3f}")
    emit_probe(rows, args.out_dir)


if __name__ == "__main__":
    main()
