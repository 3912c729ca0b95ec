"""
Rate matrices from lattice-path counts
======================================

In the stage view of the priority queue every interior state moves in the
same five directions with the same probabilities.  The rate matrix is then
upper-triangular Toeplitz, and its first row follows from weighted counts of
lattice paths: G_h is the probability of first dropping one stage with a
level increase of h.
"""
import numpy as np

from qbdsolve import (
    JumpProbabilities,
    ModelSpec,
    build_chain,
    catalan_G0,
    compute_G_sequence,
    compute_rhat,
    fixed_point_R,
    jump_probabilities,
    transpose_to_stage_view,
)

chain = build_chain(ModelSpec("Priority", {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, 20, 20))
stage = transpose_to_stage_view(chain)
phi = jump_probabilities(stage)
print("jump probabilities:", {k: round(v, 4) for k, v in phi.phi.items() if v})

# G_0 has a closed form through the Catalan generating function.
G = compute_G_sequence(phi, 5)
print(f"G_0 series {G[0]:.15f}, closed form {catalan_G0(phi):.15f}")
print("G_1..G_5:", np.array2string(G[1:], precision=6))

rhat = compute_rhat(phi, stage.num_levels)
R_fp = fixed_point_R(*stage.homogeneous_blocks())
print("first row of R-hat:", np.array2string(rhat.first_row[:6], precision=6))
print(f"max |R-hat - fixed point| = {np.max(np.abs(rhat.to_dense() - R_fp)):.2e}")
# upper-triangular Toeplitz: the spectral radius is the diagonal entry
print(f"spectral radius {rhat.spectral_radius:.6f}, r_0 = {rhat.first_row[0]:.6f}")

# A chain with diagonal level moves needs the full triple sum.
general = {(0, 1): 0.15, (0, -1): 0.35, (1, 0): 0.2, (1, 1): 0.1, (1, -1): 0.2}
r = compute_rhat(JumpProbabilities(general), 64)
print(f"general phi, M = 64: {r.info['series_terms']} series terms, special case {r.info['special_case']}")
