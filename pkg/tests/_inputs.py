"""Random inputs shared by several test modules."""
import numpy as np

from qbdsolve.structured import StructuredB


def random_structured(rng, n, entrance, homogeneous=False, leak=0.05):
    if homogeneous:
        up = np.full(n, rng.uniform(0.1, 2))
        down = np.full(n, rng.uniform(0.1, 2))
        z = np.full(n, rng.uniform(0.0, 1))
    else:
        up = rng.uniform(0.1, 2, n)
        down = rng.uniform(0.1, 2, n)
        z = rng.uniform(0.0, 1, n)
    return StructuredB.from_rates(up, down, z, entrance, leak=np.full(n, leak))
