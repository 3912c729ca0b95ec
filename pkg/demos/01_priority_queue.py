"""
Preemptive priority queue by successive lumping
================================================

Two customer classes share one server.  High-priority customers (rate
lambda1) preempt low-priority ones (rate lambda2); both are served at rate
mu.  Levels count low-priority customers and stages count high-priority
customers.  Every down move from a level enters the level below at stage 0,
so the rate matrices have a closed form.
"""
import numpy as np

from qbdsolve import ModelSpec, build_chain, classify_variant, compute_rate_matrices, solve

spec = ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, level_cap=60, stage_cap=60)
chain = build_chain(spec)
print(f"{chain.num_levels} levels of {chain.stages_per_level} states, variant {classify_variant(chain)}")

# The interior levels are identical, so one rate matrix serves all of them.
rates = compute_rate_matrices(chain)
R = rates.interior
print(f"distinct rate matrices: {rates.distinct}, R >= 0: {bool(np.all(R >= 0))}")

fast = solve(spec, "qdesa++")
direct = solve(spec, "direct")
pi = fast.distribution()
print(f"qdesa++ solve {fast.seconds:.3f} s, direct solve {direct.seconds:.3f} s")
print(f"max |pi_qdesa - pi_direct| = {np.max(np.abs(pi - direct.distribution())):.2e}")

# The high-priority class does not see the low-priority one: its marginal is
# the M/M/1 distribution (1 - rho1) rho1^j.
high = np.zeros(60)
for (n, j), p in zip(fast.labels, pi):
    high[j] += p
rho1 = 0.2
print("j   marginal      M/M/1")
for j in range(5):
    print(f"{j}   {high[j]:.10f}  {(1 - rho1) * rho1**j:.10f}")

low = fast.state.level_marginal()
print(f"mean low-priority queue length: {np.dot(np.arange(60), low):.6f}")
