"""
A small recovery study
======================

Repeat simulate / estimate / score for a handful of trials and tabulate
the RMSE of the estimated elasticities. The settings here are tiny; the
acceptance suite runs ten trials with 2,000 + 2,000 sweeps, and
``bundlechoice mc-study`` runs arbitrary grids from a config file.
"""

# %%
from bundlechoice.study import StudyConfig, run_study

cfg = StudyConfig(trials=3, models=["FA-Exo", "TVFA-Endo"], sizes=[{"N": 200, "T": 6}],
                  mcmc={"burn_in": 150, "draws": 150}, max_draws=50, truth_n_sim=5, seed=6)
res = run_study(cfg, progress=lambda recs: print("trial", recs[0].trial, "done"))

# %%
print(f"{'model':>10s} {'elasticity':>10s} {'truth':>7s} {'rmse':>6s}")
for size, model, name, truth, rmse, se, n in res.table_rows():
    if name in ("E_11", "E_21", "E_23"):
        print(f"{model:>10s} {name:>10s} {truth:7.3f} {rmse:6.3f}")

# %%
for model in cfg.models:
    hits, n = res.alpha_coverage(model, "N=200,T=6")
    print(f"{model}: price coefficient within 3 sd of the truth in {hits}/{n} trials")
