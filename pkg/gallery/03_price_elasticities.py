"""
Price elasticities from a posterior
===================================

Elasticities are computed by two-sided finite differences of simulated
shares, with common random numbers so that the up and down perturbations
see the same shocks. Compare the posterior estimate with the value at the
true parameters on the same data.
"""

# %%
import numpy as np

from bundlechoice import (ChainSource, DgpConfig, McmcSettings, ModelSpec, TruthSource, price_elasticities,
                          run_chain, simulate_dataset)
from bundlechoice.kernels import RngStream

data, truth = simulate_dataset(DgpConfig(N=300, T=6, seed=3))
chain = run_chain(data, ModelSpec(structure="TVFA", shared=truth.shared,
                                  mcmc=McmcSettings(burn_in=300, draws=300, seed=3)))

est = price_elasticities(ChainSource(chain, max_draws=100), data, rng=RngStream(1))
ref = price_elasticities(TruthSource.from_truth(truth, data), data, rng=RngStream(2), n_sim=20)

# %%
# Row j is the good whose price moves, column k the good whose share responds.
np.set_printoptions(precision=2, suppress=True)
print("posterior mean\n", est.good)
print("standard error over draws\n", est.good_se)
print("at the truth\n", ref.good)

# %%
# Bundle-level responses to the price of good 1.
for label, e in zip(est.bundle_labels[1:], est.bundle[0]):
    print(f"{label:>6s} {e:+.2f}")
