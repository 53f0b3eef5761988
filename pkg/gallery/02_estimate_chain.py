"""
Estimating the model by Gibbs sampling
======================================

Fit a time-varying factor model with endogenous prices to a simulated
panel, then summarise the posterior of a few coefficients. The chain is
short so that the script runs in well under a minute.
"""

# %%
import numpy as np

from bundlechoice import DgpConfig, McmcSettings, ModelSpec, run_chain, simulate_dataset, summarize

data, truth = simulate_dataset(DgpConfig(N=300, T=6, seed=2))
spec = ModelSpec(structure="TVFA", endogenous=True, shared=truth.shared,
                 mcmc=McmcSettings(burn_in=300, draws=300, seed=2))
chain = run_chain(data, spec)
print(spec.label, "with", chain.metadata["dims"]["L"], "factors;", chain.n_draws, "draws kept")

# %%
# The price coefficient is shared across goods, so it appears once.
rows = {r["parameter"]: r for r in summarize(chain)}
true = dict(zip(truth.param_names, truth.theta))
for name in list(rows)[:8]:
    r = rows[name]
    print(f"{name:>24s}  mean {r['mean']:+.3f}  sd {r['sd']:.3f}  truth {true[name]:+.3f}  "
          f"rhat {r['split_rhat']:.2f}")

# %%
# Loadings are only identified up to rotation, so compare the implied
# covariance of the utility errors instead.
from bundlechoice.vectorize import joint_error_covariance

Om_true = joint_error_covariance(data.choice_set, data.J_p, Lambda=truth.Lambda, t=0)
Om_post = np.mean([joint_error_covariance(data.choice_set, data.J_p, Lambda=chain.loadings(s), t=0)
                   for s in range(chain.n_draws)], axis=0)
print("utility error variances, period 1")
print("  truth    ", np.round(np.diag(Om_true)[:3], 2))
print("  posterior", np.round(np.diag(Om_post)[:3], 2))
