"""
Simulating a bundle-choice panel
================================

Draw a three-good panel with endogenous prices from the default design and
look at what came out: bundle frequencies, the price equations and the
truth record that goes with the data.
"""

# %%
import numpy as np

from bundlechoice import DgpConfig, simulate_dataset

cfg = DgpConfig(N=400, T=6, seed=1)
data, truth = simulate_dataset(cfg)
cs = data.choice_set
print(f"{data.N} households x {data.T} periods, {cs.R + 1} options")

# %%
# Bundle frequencies. Option 0 is the outside good; pairs and the triple
# follow the singletons.
freq = np.bincount(data.y, minlength=cs.R + 1) / data.n_obs
for r in range(cs.R + 1):
    print(f"{cs.label(r) or 'outside':>8s}  {freq[r]:.3f}")

# %%
# Prices carry the same factors as utilities, so price and the utility
# shock are correlated. The structural errors are stored with the truth.
from bundlechoice.dgp import structural_from_truth

nu = structural_from_truth(truth, data)
for j in range(cs.J):
    r = np.corrcoef(data.p[:, j], nu[:, j])[0, 1]
    print(f"corr(p_{j + 1}, utility factor term of good {j + 1}) = {r:+.2f}")

# %%
# The truth record holds every parameter by name.
for name, v in zip(truth.param_names, truth.theta):
    if name.startswith(("z_1", "w_1_2", "zp_1")):
        print(f"{name:>24s} {v:+.3f}")
