"""
Which solver applies to which model
===================================

Successive lumping needs a single entrance state per level.  The lattice-path
method needs a rectangular, homogeneous stage view with five allowed
directions.  ``applicable_methods`` reports, for each method, either ``None``
or the reason it does not apply; ``solve(..., "auto")`` picks the fastest
applicable one.
"""
from qbdsolve import ModelSpec, Problem, applicable_methods, solve

models = {
    "priority": ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, 40, 40),
    "longest queue": ModelSpec("LongestQueue", {"lambda": 1.0, "mu": 3.0}, 40, 40),
    "batch priority": ModelSpec(
        "BatchPriority", {"lambda1": 0.2, "lambda2": 0.2, "mu": 1.0}, 40, 40, batch1={1: 0.5, 2: 0.5}, batch2={1: 1.0}
    ),
    "unequal arrivals": ModelSpec("LongestQueueHetero", {"lambda1": 0.3, "lambda2": 0.5, "mu": 1.0}, 40, 40),
}

for name, spec in models.items():
    problem = Problem.from_spec(spec)
    table = applicable_methods(problem)
    result = solve(problem, "auto")
    print(f"\n{name}: auto -> {result.method_used}, residual {result.residuals['generator_residual_inf']:.1e}")
    for method, reason in table.items():
        print(f"  {method:8s} {'yes' if reason is None else 'no: ' + reason}")
