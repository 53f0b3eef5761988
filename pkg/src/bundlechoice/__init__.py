"""Bayesian multinomial probit for bundle choice with factor-structured errors.

Modules
-------
model_core  choice sets, panel containers, utility algebra
vectorize   stacked design blocks, loadings packing, covariance maps
kernels     random streams, truncated normal, Gaussian posterior, GIG
mcmc        Gibbs sampler (RE / FA / TVFA, Exo / Endo) and summaries
dgp         synthetic panels with known truth
predict     predictive shares, counterfactuals, price elasticities
io, study, cli
"""

__version__ = "0.1.0"

from .errors import (ArtifactIOError, BundleChoiceError, ConfigError, DataError, DomainError, NumericError,
                     UsageError)
from .model_core import (ChoiceSet, EquationParams, PanelData, ParamLayout, argmax_choice, enumerate_choice_set,
                         mean_utility, membership_matrix)
from .mcmc import McmcSettings, ModelSpec, PosteriorChain, Priors, continue_chain, run_chain, summarize
from .dgp import DgpConfig, simulate_dataset, true_elasticities
from .predict import ChainSource, ElasticityTable, Scenario, TruthSource, predict_shares, price_elasticities
