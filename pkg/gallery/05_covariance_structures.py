"""
Error covariance structures
===========================

The joint errors of a bundle utility and the price equations are
``I_nu (Lambda f) + eps``. A bundle inherits the factor terms of its
members, so bundle utilities covary with their singletons, and loadings
shared with a price equation make that price endogenous.
"""

# %%
import numpy as np

from bundlechoice import enumerate_choice_set
from bundlechoice.vectorize import covariance_summary, joint_error_covariance, mapping_matrix

cs = enumerate_choice_set(2)
print("options:", [cs.label(r) or "outside" for r in range(cs.R + 1)])
print("I_nu (rows: goods 1, 2, bundle 1+2, prices 1, 2)\n", mapping_matrix(cs, 2))

# %%
# A sparse three-factor pattern: factor 1 loads on both utilities,
# factor 2 links good 1 with price 1, factor 3 links good 2 with price 2.
Lam = np.array([[0.7, -0.4, 0.0],
                [1.3, 0.0, 0.6],
                [0.0, 0.9, 0.0],
                [0.0, 0.0, -1.1]])
np.set_printoptions(precision=3, suppress=True)
print(joint_error_covariance(cs, 2, Lambda=Lam))

# %%
# Check by simulation.
rng = np.random.default_rng(0)
n = 200_000
e = (rng.standard_normal((n, 3)) @ Lam.T) @ mapping_matrix(cs, 2).T + rng.standard_normal((n, 5))
print(np.cov(e.T))

# %%
# Named summaries of the same matrix.
for row in covariance_summary(cs, 2, Lambda=Lam[None]):
    print(row)

# %%
# Random effects use a free covariance of the structural terms instead.
S = np.array([[1.0, 0.3], [0.3, 2.0]])
print(joint_error_covariance(cs, 0, Sigma=S))
