"""
Empirical complexity of the two solvers
=======================================

Computing the rate matrices with the structured inverse costs O(l^2) per
distinct level.  The lattice-path method costs more when diagonal level moves
are present, because each G_h is a triple sum; without them it collapses to
a single sum.  The fitted log-log slopes make the contrast visible.
"""
import warnings

from qbdsolve import run_bench

warnings.simplefilter("ignore")

for family, sizes, algorithms in (
    ("priority", [128, 256, 512, 1024], ["qdesa++", "lpca"]),
    ("general", [16, 32, 64, 128], ["lpca"]),
):
    records, slopes = run_bench(family, sizes, repeats=3, algorithms=algorithms)
    print(f"\nfamily {family}")
    for r in records:
        print(f"  {r.algorithm:8s} size {r.size:5d}  {r.seconds * 1e3:9.3f} ms  residual {r.residual_inf:.1e}")
    for s in slopes:
        print(f"  {s.algorithm:8s} slope {s.slope:.2f}")
