"""Posterior-predictive bundle and good shares, counterfactuals and price elasticities.

Shares are simulated: for every parameter draw, utilities are rebuilt from
the covariates, the draw's structural errors for each individual-period and
fresh idiosyncratic shocks, and the argmax bundle is tabulated over all
observations. Elasticities use two-sided finite differences of the shares
in one good's price (all observations at once).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .kernels import as_generator
from .mcmc import PosteriorChain
from .model_core import PanelData, ParamLayout
from .vectorize import StackedSystem


@dataclass(frozen=True)
class Scenario:
    """Counterfactual: per-good price multipliers and optional covariate overrides.

    ``overrides`` maps a covariate column name (``z_2_3``, ``w_1_2_1``) to a
    scalar or a per-row array that replaces the column.
    """

    price_multipliers: tuple
    label: str = ""
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        m = tuple(float(v) for v in self.price_multipliers)
        if any(not v > 0 for v in m):
            raise UsageError("price multipliers must be positive")
        object.__setattr__(self, "price_multipliers", m)

    def apply(self, data: PanelData) -> PanelData:
        J = data.choice_set.J
        if len(self.price_multipliers) != J:
            raise UsageError(f"scenario has {len(self.price_multipliers)} multipliers for {J} goods")
        out = data.with_prices(self.price_multipliers)
        if not self.overrides:
            return out
        z = [a.copy() for a in out.z]
        w = [a.copy() for a in out.w]
        pairs = data.choice_set.pair_list
        for name, value in self.overrides.items():
            parts = str(name).split("_")
            try:
                if parts[0] == "z" and len(parts) == 3:
                    z[int(parts[1]) - 1][:, int(parts[2]) - 1] = value
                elif parts[0] == "w" and len(parts) == 4:
                    q = pairs.index((int(parts[1]) - 1, int(parts[2]) - 1))
                    w[q][:, int(parts[3]) - 1] = value
                else:
                    raise ValueError
            except (ValueError, IndexError):
                raise UsageError(f"cannot apply override to column {name!r}") from None
        return PanelData(out.choice_set, out.ids, out.periods, out.y, tuple(z), tuple(w), out.p,
                         out.zp, out.price_slot)


class TruthSource:
    """A single parameter point (no posterior): Theta plus per-observation structural errors."""

    def __init__(self, theta_zw: np.ndarray, nu_u: np.ndarray, shared=()):
        self.theta_zw = np.asarray(theta_zw, dtype=float)
        self.nu_u = np.asarray(nu_u, dtype=float)
        self.shared = tuple(shared)

    @classmethod
    def from_truth(cls, truth, data: PanelData) -> "TruthSource":
        from .dgp import structural_from_truth

        J = data.choice_set.J
        nu = structural_from_truth(truth, data)[:, :J]
        layout = ParamLayout.for_data(data, truth.shared, endogenous=False)
        return cls(truth.theta[: layout.n_theta + layout.n_gamma], nu, truth.shared)

    @property
    def n_draws(self) -> int:
        return 1

    def draw(self, s: int, data: PanelData):
        if self.nu_u.shape[0] != data.n_obs:
            raise UsageError("truth structural errors do not match the dataset rows")
        return self.theta_zw, self.nu_u


class ChainSource:
    """Retained posterior draws, optionally thinned to ``max_draws`` evenly spaced draws."""

    def __init__(self, chain: PosteriorChain, max_draws: int | None = None):
        if chain.n_draws == 0:
            raise UsageError("chain has no draws")
        if chain.f is None and chain.nu is None:
            raise UsageError("chain was stored without factor draws; prediction needs them")
        self.chain = chain
        self.index = chain.subsample(max_draws)
        self.shared = chain.spec.shared

    @property
    def n_draws(self) -> int:
        return len(self.index)

    def draw(self, s: int, data: PanelData):
        c = self.chain
        k = self.index[s]
        J = data.choice_set.J
        dims = c.metadata["dims"]
        if dims["N"] != data.N or dims["J"] != J:
            raise UsageError("chain dimensions do not match the dataset")
        ind = data.individual_index
        if c.nu is not None:
            nu = c.nu[k][ind, :J]
        else:
            Lam = c.loadings(k)
            tp = data.period_index if Lam.shape[0] > 1 else np.zeros(data.n_obs, dtype=int)
            nu = np.einsum("nkl,nl->nk", Lam[tp][:, :J, :], c.f[k][ind])
        n_zw = _n_zw(data, self.shared)
        return c.theta[k][:n_zw], nu


def _n_zw(data, shared) -> int:
    layout = ParamLayout.for_data(data, shared, endogenous=False)
    return layout.n_theta + layout.n_gamma


class _Engine:
    """Share simulator for one dataset and one parameter draw."""

    def __init__(self, data: PanelData, shared):
        self.data = data
        self.cs = data.choice_set
        self.layout = ParamLayout.for_data(data, shared, endogenous=False)
        self.system = StackedSystem(data, self.layout)
        self.M = self.cs.membership

    def mean(self, theta_zw: np.ndarray) -> np.ndarray:
        return self.system.mean(theta_zw)[:, : self.cs.R]

    def price_term(self, theta_zw: np.ndarray, j: int) -> np.ndarray:
        slot = self.data.price_slot[j]
        if slot is None:
            raise UsageError(f"good {j + 1} has no price covariate")
        col = self.layout.z_index[j][slot]
        return self.data.z[j][:, slot] * theta_zw[col]

    def shares(self, inside_mean: np.ndarray, eps: np.ndarray) -> np.ndarray:
        u = np.empty_like(eps)
        u[:, 0] = eps[:, 0]
        u[:, 1:] = inside_mean + eps[:, 1:]
        y = u.argmax(axis=1)
        return np.bincount(y, minlength=self.cs.R + 1) / y.size


@dataclass
class ShareResult:
    bundle: np.ndarray
    good: np.ndarray
    bundle_draws: np.ndarray
    labels: tuple


def good_shares(cs, bundle_shares: np.ndarray) -> np.ndarray:
    """``S_j = sum_{r containing j} S_r``; works on a trailing bundle axis."""
    return bundle_shares[..., 1:] @ cs.membership


def predict_shares(source, data: PanelData, scenario: Scenario | None = None, rng=None,
                   n_sim: int = 1) -> ShareResult:
    """Posterior-predictive mean bundle shares (outside option first) and good shares."""
    gen = as_generator(rng)
    scen_data = data if scenario is None else scenario.apply(data)
    eng = _Engine(scen_data, source.shared)
    R = eng.cs.R
    per_draw = np.zeros((source.n_draws, R + 1))
    for s in range(source.n_draws):
        theta, nu_u = source.draw(s, data)
        base = eng.mean(theta) + nu_u @ eng.M.T
        for _ in range(n_sim):
            eps = gen.standard_normal((data.n_obs, R + 1))
            per_draw[s] += eng.shares(base, eps) / n_sim
    bundle = per_draw.mean(axis=0)
    labels = tuple(eng.cs.label(r) for r in range(R + 1))
    return ShareResult(bundle, good_shares(eng.cs, bundle), per_draw, labels)


@dataclass
class ElasticityTable:
    """Good-level (J x J) and bundle-level (J x R) elasticities; row = good whose price moves."""

    good: np.ndarray
    bundle: np.ndarray
    good_se: np.ndarray
    bundle_se: np.ndarray
    base_good_shares: np.ndarray
    base_bundle_shares: np.ndarray
    bundle_labels: tuple
    n_draws: int
    diagnostics: list = field(default_factory=list)

    @classmethod
    def average(cls, tables: list["ElasticityTable"]) -> "ElasticityTable":
        G = np.stack([t.good for t in tables])
        B = np.stack([t.bundle for t in tables])
        n = len(tables)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # cells undefined in every table stay NaN
            gse = np.nanstd(G, axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(G[0])
            bse = np.nanstd(B, axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(B[0])
            good, bundle = np.nanmean(G, axis=0), np.nanmean(B, axis=0)
        diags = [d for t in tables for d in t.diagnostics]
        return cls(good, bundle, gse, bse,
                   np.mean([t.base_good_shares for t in tables], axis=0),
                   np.mean([t.base_bundle_shares for t in tables], axis=0),
                   tables[0].bundle_labels, n, diags)

    def as_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "good": clean(self.good), "good_se": clean(self.good_se),
            "bundle": clean(self.bundle), "bundle_se": clean(self.bundle_se),
            "bundle_labels": list(self.bundle_labels[1:]),
            "base_good_shares": [float(v) for v in self.base_good_shares],
            "base_bundle_shares": [float(v) for v in self.base_bundle_shares],
            "n_draws": int(self.n_draws), "diagnostics": list(self.diagnostics),
        }


def price_elasticities(source, data: PanelData, rng=None, n_sim: int = 1, step: float = 0.05,
                       common_random_numbers: bool = True) -> ElasticityTable:
    """Two-sided finite-difference elasticities of good and bundle shares.

    For every draw and good ``j`` the shares are simulated with ``p_j`` scaled
    by ``1 - step``, ``1`` and ``1 + step``; the elasticity is the forward
    minus backward share over the baseline share, divided by ``2 * step``.
    The point estimate uses the posterior-predictive mean shares; standard
    errors are the spread of per-draw elasticities over the number of draws.
    The first-stage equations are not re-solved: scenario prices are imposed.
    """
    gen = as_generator(rng)
    if not 0 < step < 1:
        raise UsageError("step must lie in (0, 1)")
    eng = _Engine(data, source.shared)
    cs = eng.cs
    J, R, n = cs.J, cs.R, data.n_obs
    S = source.n_draws
    base_b = np.zeros((S, R + 1))
    fwd_b = np.zeros((S, J, R + 1))
    bwd_b = np.zeros((S, J, R + 1))
    for s in range(S):
        theta, nu_u = source.draw(s, data)
        base = eng.mean(theta) + nu_u @ eng.M.T
        for _ in range(n_sim):
            eps = gen.standard_normal((n, R + 1))
            base_b[s] += eng.shares(base, eps) / n_sim
            for j in range(J):
                shift = eng.price_term(theta, j)[:, None] * eng.M[:, j][None, :]
                if not common_random_numbers:
                    eps = gen.standard_normal((n, R + 1))
                fwd_b[s, j] += eng.shares(base + step * shift, eps) / n_sim
                if not common_random_numbers:
                    eps = gen.standard_normal((n, R + 1))
                bwd_b[s, j] += eng.shares(base - step * shift, eps) / n_sim

    def elastic(fb, bb, b0):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(b0 > 0, (fb - bb) / b0 / (2 * step), np.nan)

    mb, mf, mbw = base_b.mean(0), fwd_b.mean(0), bwd_b.mean(0)
    good = elastic(good_shares(cs, mf), good_shares(cs, mbw), good_shares(cs, mb)[None, :])
    bundle = elastic(mf[:, 1:], mbw[:, 1:], mb[None, 1:])
    if S > 1:
        per_g = elastic(good_shares(cs, fwd_b), good_shares(cs, bwd_b), good_shares(cs, base_b)[:, None, :])
        per_b = elastic(fwd_b[:, :, 1:], bwd_b[:, :, 1:], base_b[:, None, 1:])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            gse = np.nanstd(per_g, axis=0, ddof=1) / np.sqrt(S)
            bse = np.nanstd(per_b, axis=0, ddof=1) / np.sqrt(S)
    else:
        gse = np.full((J, J), np.nan)
        bse = np.full((J, R), np.nan)
    diags = []
    labels = tuple(cs.label(r) for r in range(R + 1))
    for k in np.flatnonzero(good_shares(cs, mb) <= 0):
        diags.append(f"good {k + 1} has zero baseline share; its elasticities are undefined")
    for r in np.flatnonzero(mb[1:] <= 0):
        diags.append(f"bundle {labels[r + 1]} has zero baseline share; its elasticities are undefined")
    return ElasticityTable(good, bundle, gse, bse, good_shares(cs, mb), mb, labels, S, diags)
