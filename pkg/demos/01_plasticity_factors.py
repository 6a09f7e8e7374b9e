"""
Plasticity factors from branch entropies
========================================

Each encoder block gets a small classifier branch. The more uncertain a
branch is (higher prediction entropy), the less that block's features are
trusted and the smaller its plasticity factor becomes.
"""

import numpy as np

from espcl.plasticity import freeze_schedule, plasticity_factors

# Four blocks with equal entropy share the update budget evenly.
print(plasticity_factors([1.3, 1.3, 1.3, 1.3]))

# The factors always sum to B - 1, so raising one block's entropy lowers
# its factor and raises everyone else's.
e = np.array([0.2, 0.9, 1.6, 2.3])
pf = plasticity_factors(e)
print("entropies", e)
print("factors  ", pf.round(4), "sum", pf.sum())

# With a threshold, the longest leading run of blocks at or below it is
# frozen outright and backprop stops above that prefix. Here the early
# blocks are the uncertain ones.
pf = plasticity_factors(e[::-1])
k = freeze_schedule(pf, tau=0.75)
print("factors  ", pf.round(4), f"-> tau=0.75 freezes the first {k} block(s)")
