"""Synthetic panels from the simulation design with known truth.

Default design (three goods, three endogenous prices, two factors):

* utility covariates ``z_ijt = (p_ijt, 1, x1_i, x2_i)`` with a common price
  coefficient ``alpha`` and good-specific ``beta_j``;
* bundle covariates ``w_i(j1,j2)t = (w_i - w_center, 1)`` with a common
  slope and pair-specific intercepts;
* first-stage covariates ``(1, p_jt, z_ijt, x1_i, x2_i)``, where ``p_jt`` is
  a market-level price and ``z_ijt`` an instrument;
* structural errors ``Lambda_t f_i`` with ``f_i ~ N(0, I_2)``, the first
  loading column fixed and the second redrawn every period.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .kernels import RngStream, draw_truncated_normal
from .model_core import PanelData, ParamLayout, enumerate_choice_set
from .vectorize import StackedSystem

_BETA = ((1.0, 0.2, 0.1), (2.0, 0.2, 0.1), (2.0, 0.1, 0.05))
_PAIR = (2.0, 0.0, -1.0)
_THETA_P = ((0.0, 1.0, 0.5, 0.0, 0.01), (0.0, 1.0, 0.5, 0.0, 0.0), (0.0, 1.0, 0.5, 0.0, -0.01))
_PRICE_MEAN = (7.0, 6.0, 5.0)
_PRICE_SD = (0.2, 0.1, 0.1)
_LAMBDA1 = (1.0, 0.0, -1.0)


def _cycle(seq, n):
    return [seq[k % len(seq)] for k in range(n)]


@dataclass
class DgpConfig:
    N: int = 1000
    T: int = 12
    J: int = 3
    alpha: float = -1.0
    beta: list = field(default_factory=lambda: [list(b) for b in _BETA])
    gamma_tilde: float = 0.05
    gamma_pair: list = field(default_factory=lambda: list(_PAIR))
    theta_p: list = field(default_factory=lambda: [list(t) for t in _THETA_P])
    lambda1: list | None = None
    n_factors: int = 2
    time_varying: bool = True
    zero_loadings: bool = False
    x1_mean: float = 10.0
    x1_sd: float = 0.85
    x2_mean: float = 10.0
    x2_sd: float = 6.0
    price_mean: list = field(default_factory=lambda: list(_PRICE_MEAN))
    price_sd: list = field(default_factory=lambda: list(_PRICE_SD))
    w_values: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    w_center: float = 3.5
    seed: int = 0

    def __post_init__(self):
        J = self.J
        if not 1 <= J <= 7:
            raise ConfigError(f"J must lie in [1, 7], got {J}")
        if self.N < 1 or self.T < 1:
            raise ConfigError("N and T must be positive")
        if self.n_factors < 1:
            raise ConfigError("the design needs at least one factor")
        Q = J * (J - 1) // 2
        if self.lambda1 is None:
            self.lambda1 = _cycle(_LAMBDA1, J) * 2
        checks = [("beta", self.beta, J, 3), ("theta_p", self.theta_p, J, 5)]
        for name, val, rows, width in checks:
            if len(val) != rows or any(len(v) != width for v in val):
                raise ConfigError(f"{name} needs {rows} vectors of length {width}")
        if len(self.gamma_pair) != Q:
            raise ConfigError(f"gamma_pair needs {Q} entries for {J} goods")
        if len(self.lambda1) != 2 * J:
            raise ConfigError(f"lambda1 needs {2 * J} entries")
        if len(self.price_mean) != J or len(self.price_sd) != J:
            raise ConfigError("price_mean and price_sd need one entry per good")

    @classmethod
    def for_goods(cls, J: int, **kw) -> "DgpConfig":
        """Default design extended to ``J`` goods by cycling the three-good values."""
        Q = J * (J - 1) // 2
        base = dict(
            J=J,
            beta=[list(b) for b in _cycle(_BETA, J)],
            gamma_pair=_cycle(_PAIR, Q),
            theta_p=[list(t) for t in _cycle(_THETA_P, J)],
            price_mean=_cycle(_PRICE_MEAN, J),
            price_sd=_cycle(_PRICE_SD, J),
        )
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"invalid DGP configuration: {e}") from None


def default_sharing(J: int) -> tuple:
    """Common price coefficient across goods and common bundle slope across pairs."""
    groups = []
    if J >= 2:
        groups.append(tuple(f"z_{j + 1}_1" for j in range(J)))
        pairs = [(a, b) for a in range(J) for b in range(a + 1, J)]
        if len(pairs) >= 2:
            groups.append(tuple(f"w_{a + 1}_{b + 1}_1" for a, b in pairs))
    return tuple(groups)


@dataclass
class TruthRecord:
    """Parameters used to generate one dataset."""

    config: dict
    param_names: tuple
    theta: np.ndarray
    Lambda: np.ndarray
    f: np.ndarray
    shared: tuple

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "parameters": {n: float(v) for n, v in zip(self.param_names, self.theta)},
            "parameter_order": list(self.param_names),
            "alpha": float(self.config["alpha"]),
            "shared": [list(g) for g in self.shared],
            "Lambda": self.Lambda.tolist(),
            "f": self.f.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TruthRecord":
        names = tuple(d.get("parameter_order", d["parameters"]))
        return cls(d["config"], names, np.array([d["parameters"][n] for n in names]),
                   np.array(d["Lambda"], dtype=float), np.array(d["f"], dtype=float),
                   tuple(tuple(g) for g in d["shared"]))


def _truth_theta(layout: ParamLayout, cfg: DgpConfig) -> np.ndarray:
    cs = enumerate_choice_set(cfg.J)
    theta = np.zeros(layout.dim)
    for j in range(cfg.J):
        theta[layout.index_of(f"z_{j + 1}_1")] = cfg.alpha
        for k in range(3):
            theta[layout.index_of(f"z_{j + 1}_{k + 2}")] = cfg.beta[j][k]
        for k in range(5):
            theta[layout.index_of(f"zp_{j + 1}_{k + 1}")] = cfg.theta_p[j][k]
    for q, (a, b) in enumerate(cs.pair_list):
        theta[layout.index_of(f"w_{a + 1}_{b + 1}_1")] = cfg.gamma_tilde
        theta[layout.index_of(f"w_{a + 1}_{b + 1}_2")] = cfg.gamma_pair[q]
    return theta


def simulate_dataset(cfg: DgpConfig, stream: RngStream | None = None) -> tuple[PanelData, TruthRecord]:
    """Draw one balanced panel and the exact truth used to generate it."""
    root = RngStream(cfg.seed) if stream is None else stream
    J, N, T, L = cfg.J, cfg.N, cfg.T, cfg.n_factors
    K = 2 * J
    cs = enumerate_choice_set(J)

    g = root.child("loadings").generator
    Lam = np.zeros((T, K, L))
    Lam[:, :, 0] = np.asarray(cfg.lambda1, dtype=float)
    if L > 1:
        if cfg.time_varying:
            Lam[:, :, 1:] = g.standard_normal((T, K, L - 1))
        else:
            Lam[:, :, 1:] = g.standard_normal((K, L - 1))[None]
    if cfg.zero_loadings:
        Lam[:] = 0.0
    f = root.child("factors").generator.standard_normal((N, L))

    g = root.child("covariates").generator
    x1 = g.normal(cfg.x1_mean, cfg.x1_sd, N)
    x2 = draw_truncated_normal(np.full(N, cfg.x2_mean), cfg.x2_sd, 0.0, None, g)
    wt = g.choice(np.asarray(cfg.w_values, dtype=float), size=N)
    market = np.stack([g.normal(cfg.price_mean[j], cfg.price_sd[j], T) for j in range(J)], axis=1)
    instr = g.standard_normal((N, T, J))

    ids = np.repeat(np.arange(1, N + 1), T)
    periods = np.tile(np.arange(1, T + 1), N)
    ii = ids - 1
    tt = periods - 1
    n = N * T
    nu = np.einsum("nkl,nl->nk", Lam[tt], f[ii])

    ones = np.ones(n)
    zp = [np.column_stack([ones, market[tt, j], instr[ii, tt, j], x1[ii], x2[ii]]) for j in range(J)]
    g = root.child("errors").generator
    eps_p = g.standard_normal((n, J))
    eps_u = g.standard_normal((n, cs.R + 1))
    thp = np.asarray(cfg.theta_p, dtype=float)
    p = np.column_stack([zp[j] @ thp[j] for j in range(J)]) + nu[:, J:] + eps_p

    z = [np.column_stack([p[:, j], ones, x1[ii], x2[ii]]) for j in range(J)]
    wc = wt[ii] - cfg.w_center
    w = [np.column_stack([wc, ones]) for _ in cs.pair_list]
    shared = default_sharing(J)
    data0 = PanelData(cs, ids, periods, np.zeros(n, dtype=int), z, w, p, zp, price_slot=(0,) * J)
    layout = ParamLayout.for_data(data0, shared, endogenous=True)
    theta = _truth_theta(layout, cfg)

    mean = StackedSystem(data0, layout).mean(theta)[:, : cs.R]
    util = np.empty((n, cs.R + 1))
    util[:, 0] = eps_u[:, 0]
    util[:, 1:] = mean + nu[:, :J] @ cs.membership.T + eps_u[:, 1:]
    y = util.argmax(axis=1)
    data = PanelData(cs, ids, periods, y, z, w, p, zp, price_slot=(0,) * J)
    truth = TruthRecord(cfg.to_dict(), layout.names, theta, Lam, f, shared)
    return data, truth


def structural_from_truth(truth: TruthRecord, data: PanelData) -> np.ndarray:
    """``(n, K)`` structural errors implied by a truth record on its dataset."""
    Lam = truth.Lambda
    tp = data.period_index if Lam.shape[0] > 1 else np.zeros(data.n_obs, dtype=int)
    return np.einsum("nkl,nl->nk", Lam[tp], truth.f[data.individual_index])


def true_elasticities(cfg: DgpConfig, n_reps: int = 20, n_sim: int = 1, step: float = 0.05,
                      common_random_numbers: bool = True):
    """Elasticity table at the true parameters, averaged over independent datasets.

    Each replication draws a fresh dataset (loadings, factors, covariates),
    evaluates the elasticities at its truth and the results are averaged;
    the reported standard errors are across replications.
    """
    from .predict import ElasticityTable, TruthSource, price_elasticities

    if n_reps < 1:
        raise ConfigError("n_reps must be positive")
    root = RngStream(cfg.seed)
    tables = []
    for rep in range(n_reps):
        stream = root.child(f"rep{rep}")
        data, truth = simulate_dataset(cfg, stream)
        src = TruthSource.from_truth(truth, data)
        tables.append(price_elasticities(src, data, rng=stream.child("predict"), n_sim=n_sim, step=step,
                                         common_random_numbers=common_random_numbers))
    return ElasticityTable.average(tables)


__all__ = ["DgpConfig", "TruthRecord", "simulate_dataset", "true_elasticities", "default_sharing",
           "structural_from_truth"]
