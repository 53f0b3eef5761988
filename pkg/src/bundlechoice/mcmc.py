"""Gibbs sampler for the factor-augmented bundle-choice probit.

One sweep runs, in order:

1. latent utilities (truncated normals, one bundle column at a time),
2. equation parameters ``Theta`` (conditional on factors, or with the
   factors integrated out per individual),
3. factors ``f_i``,
4. random sign switch of each factor column,
5. marginal data augmentation rescaling of each factor column,
6. free loadings, one period block at a time.

The random-effects variant replaces steps 3-6 by a conjugate update of
``nu_i`` and an inverse-Wishart update of its covariance.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .errors import BundleChoiceError, ConfigError, DomainError, NumericError, UsageError
from .kernels import (RngStream, draw_gaussian_posterior, draw_gaussian_posterior_batch, draw_gig,
                      draw_truncated_normal)
from .model_core import PanelData, ParamLayout
from .vectorize import StackedSystem, empty_factor_columns, pack_loadings, unpack_loadings

log = logging.getLogger(__name__)

STRUCTURES = ("RE", "FA", "TVFA")
STEP_NAMES = ("latent", "theta", "factors", "sign", "mda", "loadings", "re_effects", "re_cov")


def guideline_factors(J: int, J_p: int, structure: str = "FA") -> int:
    """Factor count that matches the random-effects parameter count (plus two when time varying)."""
    K = J + J_p
    L = math.ceil((K + 1) / 2)
    return L + 2 if structure == "TVFA" else L


def covariance_parameter_count(J: int, J_p: int, structure: str, L: int | None = None, T: int = 1) -> int:
    K = J + J_p
    if structure == "RE":
        return K * (K + 1) // 2
    L = guideline_factors(J, J_p, structure) if L is None else L
    return K * L * (T if structure == "TVFA" else 1)


@dataclass
class Priors:
    theta_mean: Any = 0.0
    theta_var: Any = 100.0
    loading_var: float = 1.0
    gig_p: float = 1.0
    gig_a: float = 1.0
    gig_b: float = 1.0
    re_df: float | None = None
    re_scale: Any = None


@dataclass
class McmcSettings:
    burn_in: int = 10000
    draws: int = 10000
    thin: int = 1
    seed: int = 0
    theta_mode: str = "conditional"
    marginal_cap: int = 512
    sign_switch: bool = True
    boost: bool = True
    store_factors: bool = True


@dataclass
class ModelSpec:
    """Model variant, factor structure, priors and sampler settings."""

    structure: str = "TVFA"
    endogenous: bool = True
    n_factors: int | None = None
    mask: Any = None
    priors: Priors = field(default_factory=Priors)
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    shared: tuple = ()

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ConfigError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        if isinstance(self.priors, dict):
            self.priors = Priors(**self.priors)
        if isinstance(self.mcmc, dict):
            self.mcmc = McmcSettings(**self.mcmc)
        self.shared = tuple(tuple(g) for g in self.shared)
        m = self.mcmc
        if m.burn_in < 0 or m.draws < 0 or m.thin < 1:
            raise ConfigError("burn_in and draws must be >= 0 and thin >= 1")
        if m.theta_mode not in ("conditional", "marginalized"):
            raise ConfigError(f"theta_mode must be 'conditional' or 'marginalized', got {m.theta_mode!r}")
        if not self.priors.loading_var > 0:
            raise ConfigError("loading prior variance must be positive")
        if self.n_factors is not None and int(self.n_factors) < 1 and self.structure != "RE":
            raise ConfigError("n_factors must be at least 1")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.ndim not in (2, 3):
                raise ConfigError("mask must be (K, L) or (T, K, L)")
            if self.structure == "FA" and self.mask.ndim == 3:
                if not np.all(self.mask == self.mask[:1]):
                    raise ConfigError("FA loadings are time invariant; the mask must be constant over periods")
                self.mask = self.mask[0]

    @property
    def label(self) -> str:
        return f"{self.structure}-{'Endo' if self.endogenous else 'Exo'}"

    def resolve_factors(self, J: int, J_p: int) -> int:
        guide = guideline_factors(J, J_p, self.structure)
        if self.structure == "RE":
            return J + J_p
        if self.mask is not None:
            L = self.mask.shape[-1]
            if self.n_factors is not None and int(self.n_factors) != L:
                raise ConfigError(f"mask has {L} factor columns but n_factors = {self.n_factors}")
        elif self.n_factors is None:
            return guide
        else:
            L = int(self.n_factors)
        lo = guideline_factors(J, J_p, "FA")
        hi = lo + 2 if self.structure == "TVFA" else lo
        if not lo <= L <= hi:
            warnings.warn(f"{L} factors is outside the guideline range [{lo}, {hi}] for "
                          f"J={J}, J_p={J_p}, {self.structure}", UserWarning, stacklevel=3)
        return L

    def resolve_mask(self, J: int, J_p: int, T: int) -> np.ndarray:
        """Boolean ``(T_L, K, L)`` mask; ``T_L`` is ``T`` for time-varying loadings, else 1."""
        K = J + J_p
        L = self.resolve_factors(J, J_p)
        T_L = T if self.structure == "TVFA" else 1
        if self.mask is None:
            mask = np.ones((T_L, K, L), dtype=bool)
        else:
            mask = self.mask
            if mask.shape[-2] != K:
                raise ConfigError(f"mask has {mask.shape[-2]} rows, model has {K} equations")
            if mask.ndim == 2:
                mask = np.broadcast_to(mask, (T_L, K, L)).copy()
            elif mask.shape[0] != T_L:
                raise ConfigError(f"mask covers {mask.shape[0]} periods, panel has {T_L}")
        empty = empty_factor_columns(mask)
        if empty:
            warnings.warn(f"factor columns {[l + 1 for l in empty]} have no free loadings",
                          UserWarning, stacklevel=3)
        return mask

    def to_dict(self) -> dict:
        d = {
            "structure": self.structure,
            "endogenous": bool(self.endogenous),
            "n_factors": None if self.n_factors is None else int(self.n_factors),
            "mask": None if self.mask is None else np.asarray(self.mask).astype(int).tolist(),
            "priors": _plain(asdict(self.priors)),
            "mcmc": _plain(asdict(self.mcmc)),
            "shared": [list(g) for g in self.shared],
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        unknown = set(d) - {"structure", "endogenous", "n_factors", "mask", "priors", "mcmc", "shared"}
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        try:
            priors = Priors(**d.pop("priors", {}) or {})
            mcmc = McmcSettings(**d.pop("mcmc", {}) or {})
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(priors=priors, mcmc=mcmc, **d)

    def spec_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def data_hash(data: PanelData) -> str:
    h = hashlib.sha256()
    for arr in (data.ids, data.periods, data.y, data.p, *data.z, *data.w, *data.zp):
        a = np.ascontiguousarray(arr)
        h.update(str(a.shape).encode())
        h.update(a.astype("<f8" if a.dtype.kind == "f" else "<i8").tobytes())
    return h.hexdigest()[:16]


@dataclass
class ParameterState:
    u: np.ndarray
    theta: np.ndarray
    Lambda: np.ndarray | None = None
    f: np.ndarray | None = None
    nu: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    sweep: int = 0

    def copy(self) -> "ParameterState":
        return copy.deepcopy(self)


class Sampler:
    """Holds the per-chain precomputations and the sampling steps."""

    def __init__(self, data: PanelData, spec: ModelSpec):
        self.data = data
        self.spec = spec
        cs = data.choice_set
        if spec.endogenous:
            if data.J_p < 1:
                raise ConfigError("an endogenous specification needs at least one endogenous regressor column")
            if any(a.shape[1] == 0 for a in data.zp):
                raise ConfigError("an endogenous specification needs first-stage covariates for every regressor")
        elif data.J_p and any(a.shape[1] for a in data.zp):
            log.info("exogenous specification: ignoring %d first-stage regressor(s) and their instruments",
                     data.J_p)
        self.J_p = data.J_p if spec.endogenous else 0
        self.layout = ParamLayout.for_data(data, spec.shared, endogenous=spec.endogenous)
        self.system = StackedSystem(data, self.layout)
        self.R = cs.R
        self.E = self.system.E
        self.K = self.system.K
        self.N = data.N
        self.D = self.layout.dim
        self.Kmat = self.system.I_nu.T @ self.system.I_nu
        self.starts = data.obs_start[:-1]
        self.ind = data.individual_index
        self.is_re = spec.structure == "RE"
        if self.is_re:
            self.mask = None
            self.L = self.K
            self.tp = np.zeros(data.n_obs, dtype=np.int64)
        else:
            self.mask = spec.resolve_mask(cs.J, self.J_p, data.T)
            self.L = self.mask.shape[2]
            self.tp = np.zeros(data.n_obs, dtype=np.int64) if self.mask.shape[0] == 1 else data.period_index
        # (N, T_L) counts of observations per individual and loading period
        T_L = 1 if self.is_re else self.mask.shape[0]
        self.counts = np.zeros((self.N, T_L))
        np.add.at(self.counts, (self.ind, self.tp), 1.0)
        pri = spec.priors
        self.theta_prior_mean = np.broadcast_to(np.asarray(pri.theta_mean, dtype=float), (self.D,)).copy()
        var = np.broadcast_to(np.asarray(pri.theta_var, dtype=float), (self.D,))
        if np.any(var <= 0):
            raise ConfigError("theta prior variances must be positive")
        self.theta_prior_prec = 1.0 / var
        if self.is_re:
            self.re_df = float(pri.re_df) if pri.re_df is not None else float(self.K + 2)
            scale = np.eye(self.K) if pri.re_scale is None else np.asarray(pri.re_scale, dtype=float)
            if np.ndim(scale) == 0:
                scale = float(scale) * np.eye(self.K)
            self.re_scale = scale
            if self.re_df <= self.K - 1:
                raise ConfigError(f"inverse-Wishart degrees of freedom must exceed {self.K - 1}")
        if spec.mcmc.theta_mode == "marginalized":
            size = self.E * int(data.periods_per_individual.max())
            if size > spec.mcmc.marginal_cap:
                raise ConfigError(f"marginalized Theta step needs per-individual blocks of size {size}, "
                                  f"above the cap {spec.mcmc.marginal_cap}")
        y = data.y
        self.y = y
        self.ystar_p = data.p if self.J_p else np.zeros((data.n_obs, 0))

    # ------------------------------------------------------------ helpers

    def ystar(self, state: ParameterState) -> np.ndarray:
        return np.hstack([state.u[:, 1:], self.ystar_p])

    def loadings(self, state: ParameterState) -> np.ndarray:
        """Effective loadings ``(T_L, K, L)``; the Cholesky factor of Sigma for random effects."""
        if self.is_re:
            return np.linalg.cholesky(state.Sigma)[None]
        return state.Lambda

    def factor_values(self, state: ParameterState) -> np.ndarray:
        return state.nu if self.is_re else state.f

    def structural(self, state: ParameterState) -> np.ndarray:
        """``(n, K)`` structural errors per observation."""
        if self.is_re:
            return state.nu[self.ind]
        return np.einsum("nkl,nl->nk", state.Lambda[self.tp], state.f[self.ind])

    def _obs_mean(self, state: ParameterState) -> np.ndarray:
        return self.system.mean(state.theta) + self.structural(state) @ self.system.I_nu.T

    # ------------------------------------------------------------ steps

    def step_latent(self, state: ParameterState, rng: RngStream) -> None:
        mu = self._obs_mean(state)[:, : self.R]
        u = state.u
        n = u.shape[0]
        for r in range(u.shape[1]):
            others = np.delete(u, r, axis=1).max(axis=1)
            m = np.zeros(n) if r == 0 else mu[:, r - 1]
            chosen = self.y == r
            lo = np.where(chosen, others, -np.inf)
            hi = np.where(chosen, np.inf, others)
            u[:, r] = draw_truncated_normal(m, 1.0, lo, hi, rng)

    def step_theta(self, state: ParameterState, rng: RngStream) -> None:
        sysm = self.system
        ys = self.ystar(state)
        if self.spec.mcmc.theta_mode == "conditional":
            target = ys - self.structural(state) @ sysm.I_nu.T
            xtx = sysm.gram
            xty = sysm.rmatvec(target)
        else:
            xtx, xty = self._marginal_cross(state, ys)
        state.theta = draw_gaussian_posterior(xtx, xty, self.theta_prior_mean,
                                              self.theta_prior_prec, rng)

    def _factor_precision(self, Lam: np.ndarray, prior_prec: np.ndarray) -> np.ndarray:
        per = np.einsum("tkl,km,tmh->tlh", Lam, self.Kmat, Lam)
        return prior_prec[None] + np.einsum("it,tlh->ilh", self.counts, per)

    def _marginal_cross(self, state: ParameterState, ys: np.ndarray):
        # Woodbury per individual: Omega_i^-1 = I - U_i C_i^-1 U_i'
        sysm = self.system
        Lam = self.loadings(state)
        L = Lam.shape[2]
        S = np.einsum("be,ek,tkl->tbl", sysm.A.T, sysm.I_nu, Lam)
        Gn = sysm.obs_weighted_cross(S, self.tp)
        G = np.add.reduceat(Gn, self.starts, axis=0)
        C = self._factor_precision(Lam, np.eye(L))
        gn = np.einsum("nkl,nk->nl", Lam[self.tp], ys @ sysm.I_nu)
        g = np.add.reduceat(gn, self.starts, axis=0)
        CinvGt = np.linalg.solve(C, np.swapaxes(G, 1, 2))
        xtx = sysm.gram - np.einsum("idl,ile->de", G, CinvGt)
        Cinvg = np.linalg.solve(C, g[..., None])[..., 0]
        xty = sysm.rmatvec(ys) - np.einsum("idl,il->d", G, Cinvg)
        xtx = 0.5 * (xtx + xtx.T)
        return xtx, xty

    def step_factors(self, state: ParameterState, rng: RngStream) -> None:
        res = self.ystar(state) - self.system.mean(state.theta)
        g = res @ self.system.I_nu
        if self.is_re:
            prior = np.linalg.inv(state.Sigma)
            prior = 0.5 * (prior + prior.T)
            lin = np.add.reduceat(g, self.starts, axis=0)
            prec = prior[None] + self.counts[:, :1, None] * self.Kmat[None]
            state.nu = draw_gaussian_posterior_batch(prec, lin, rng)
            return
        Lam = state.Lambda
        ln = np.einsum("nkl,nk->nl", Lam[self.tp], g)
        lin = np.add.reduceat(ln, self.starts, axis=0)
        prec = self._factor_precision(Lam, np.eye(self.L))
        state.f = draw_gaussian_posterior_batch(prec, lin, rng)

    def step_sign(self, state: ParameterState, rng: RngStream) -> None:
        flip = rng.generator.random(self.L) < 0.5
        apply_sign_switch(state, flip)

    def step_mda(self, state: ParameterState, rng: RngStream) -> None:
        pri = self.spec.priors
        gen = rng.generator
        for l in range(self.L):
            d_l = int(self.mask[:, :, l].sum())
            lam_l = state.Lambda[:, :, l]
            f_l = state.f[:, l]
            try:
                psi = draw_gig(pri.gig_p, pri.gig_a, pri.gig_b, gen)
                p_bar = pri.gig_p + d_l / 2.0 - self.N / 2.0
                a_bar = pri.gig_a + float(np.sum(lam_l * lam_l)) / (psi * pri.loading_var)
                b_bar = pri.gig_b + psi * float(f_l @ f_l)
                psi_new = draw_gig(p_bar, a_bar, b_bar, gen)
            except DomainError as e:
                raise ConfigError(f"working-parameter prior (gig_p, gig_a, gig_b) invalid: {e}") from None
            apply_rescale(state, l, psi, psi_new)

    def step_loadings(self, state: ParameterState, rng: RngStream) -> None:
        res = self.ystar(state) - self.system.mean(state.theta)
        g = res @ self.system.I_nu
        F = state.f[self.ind]
        K, L = self.K, self.L
        prior_prec = 1.0 / self.spec.priors.loading_var
        T_L = self.mask.shape[0]
        new = np.zeros_like(state.Lambda)
        for t in range(T_L):
            free = self.mask[t].T.ravel()  # column-major (l, j)
            if not free.any():
                continue
            sel = self.tp == t
            Ft = F[sel]
            FtF = Ft.T @ Ft
            prec = np.kron(FtF, self.Kmat)[np.ix_(free, free)]
            lin = (g[sel].T @ Ft).T.ravel()[free]
            draw = draw_gaussian_posterior(prec, lin, 0.0, prior_prec, rng)
            full = np.zeros(K * L)
            full[free] = draw
            new[t] = full.reshape(L, K).T
        state.Lambda = new

    def step_re_cov(self, state: ParameterState, rng: RngStream) -> None:
        S = self.re_scale + state.nu.T @ state.nu
        df = self.re_df + self.N
        draw = stats.invwishart.rvs(df=df, scale=S, random_state=rng.generator)
        state.Sigma = np.atleast_2d(draw)

    # ------------------------------------------------------------ driver

    def initial_state(self, rng: RngStream) -> ParameterState:
        gen = rng.generator
        n = self.data.n_obs
        u = np.full((n, self.R + 1), -0.5)
        u[np.arange(n), self.y] = 0.5
        theta = np.zeros(self.D)
        if self.is_re:
            state = ParameterState(u=u, theta=theta, nu=np.zeros((self.N, self.K)), Sigma=np.eye(self.K))
        else:
            Lam = np.where(self.mask, 0.1 * gen.standard_normal(self.mask.shape), 0.0)
            f = gen.standard_normal((self.N, self.L))
            state = ParameterState(u=u, theta=theta, Lambda=Lam, f=f)
        return state

    def sweep(self, state: ParameterState, streams: dict[str, RngStream]) -> None:
        steps = [("latent", self.step_latent), ("theta", self.step_theta)]
        if self.is_re:
            steps += [("re_effects", self.step_factors), ("re_cov", self.step_re_cov)]
        else:
            steps.append(("factors", self.step_factors))
            if self.spec.mcmc.sign_switch:
                steps.append(("sign", self.step_sign))
            if self.spec.mcmc.boost:
                steps.append(("mda", self.step_mda))
            steps.append(("loadings", self.step_loadings))
        for name, fn in steps:
            try:
                fn(state, streams[name])
            except BundleChoiceError as e:
                raise type(e)(f"sweep {state.sweep}, step {name}: {e}") from e
            except (np.linalg.LinAlgError, FloatingPointError) as e:
                raise NumericError(f"sweep {state.sweep}, step {name}: {e}") from e
        state.sweep += 1


def apply_sign_switch(state: ParameterState, flip) -> None:
    flip = np.asarray(flip, dtype=bool)
    s = np.where(flip, -1.0, 1.0)
    state.f = state.f * s
    state.Lambda = state.Lambda * s


def apply_rescale(state: ParameterState, l: int, psi: float, psi_new: float) -> None:
    state.Lambda[:, :, l] *= math.sqrt(psi_new / psi)
    state.f[:, l] *= math.sqrt(psi / psi_new)


def make_streams(seed: int) -> dict[str, RngStream]:
    root = RngStream(seed)
    return {name: root.child(name) for name in ("init",) + STEP_NAMES}


@dataclass
class PosteriorChain:
    """Retained draws and everything needed to reproduce or continue the chain."""

    spec: ModelSpec
    param_names: tuple[str, ...]
    theta: np.ndarray
    lam: np.ndarray | None
    f: np.ndarray | None
    Sigma: np.ndarray | None
    nu: np.ndarray | None
    mask: np.ndarray | None
    metadata: dict
    final_state: ParameterState | None = None
    rng_states: dict | None = None

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    def loadings(self, s: int) -> np.ndarray | None:
        if self.lam is None:
            return None
        return unpack_loadings(self.lam[s], self.mask)

    def subsample(self, max_draws: int | None) -> list[int]:
        """Evenly spaced draw indices (all draws when ``max_draws`` is None)."""
        S = self.n_draws
        if max_draws is None or max_draws >= S:
            return list(range(S))
        return [int(v) for v in np.linspace(0, S - 1, max_draws).round().astype(int)]


def loading_names(mask: np.ndarray) -> list[str]:
    T_L, K, L = mask.shape
    names = []
    for t in range(T_L):
        for l in range(L):
            for j in range(K):
                if mask[t, j, l]:
                    names.append(f"lambda_{j + 1}_{l + 1}" + (f"_t{t + 1}" if T_L > 1 else ""))
    return names


def run_chain(data: PanelData, spec: ModelSpec, seed: int | None = None,
              progress=None) -> PosteriorChain:
    """Run burn-in plus draws and return the retained (thinned) draws."""
    seed = spec.mcmc.seed if seed is None else int(seed)
    with threadpool_limits(limits=1):
        sampler = Sampler(data, spec)
        streams = make_streams(seed)
        state = sampler.initial_state(streams["init"])
        # one constrained sweep of the latent utilities from the initial means
        sampler.step_latent(state, streams["latent"])
        return _advance(sampler, state, streams, seed, spec.mcmc.burn_in + spec.mcmc.draws, progress)


def continue_chain(data: PanelData, chain: PosteriorChain, n_sweeps: int, progress=None) -> PosteriorChain:
    """Run ``n_sweeps`` more sweeps from a chain's final state (same streams, same thinning)."""
    if chain.final_state is None or chain.rng_states is None:
        raise UsageError("chain carries no final state to resume from")
    if chain.metadata.get("data_hash") != data_hash(data):
        raise UsageError("dataset does not match the one the chain was run on")
    spec = chain.spec
    with threadpool_limits(limits=1):
        sampler = Sampler(data, spec)
        streams = {k: RngStream.from_state(v) for k, v in chain.rng_states.items()}
        state = chain.final_state.copy()
        return _advance(sampler, state, streams, chain.metadata["seed"], state.sweep + n_sweeps, progress)


def _advance(sampler: Sampler, state: ParameterState, streams, seed, stop: int, progress) -> PosteriorChain:
    spec = sampler.spec
    m = spec.mcmc
    keep_theta, keep_lam, keep_f, keep_sigma, keep_nu = [], [], [], [], []
    start = state.sweep
    while state.sweep < stop:
        sampler.sweep(state, streams)
        k = state.sweep - m.burn_in  # draws completed after burn-in
        if k >= 1 and k % m.thin == 0:
            keep_theta.append(state.theta.copy())
            if sampler.is_re:
                keep_sigma.append(state.Sigma.copy())
                if m.store_factors:
                    keep_nu.append(state.nu.copy())
            else:
                keep_lam.append(pack_loadings(state.Lambda, sampler.mask))
                if m.store_factors:
                    keep_f.append(state.f.copy())
        if progress is not None:
            progress(state)
    D = sampler.D

    def stack(lst, shape):
        return np.array(lst).reshape((len(lst),) + shape) if lst else np.zeros((0,) + shape)

    n_free = 0 if sampler.is_re else int(sampler.mask.sum())
    names = list(sampler.layout.names)
    meta = {
        "spec_hash": spec.spec_hash(),
        "data_hash": data_hash(sampler.data),
        "seed": int(seed),
        "model": spec.label,
        "dims": {"N": sampler.N, "T": sampler.data.T, "n_obs": sampler.data.n_obs, "J": sampler.data.choice_set.J,
                 "J_p": sampler.J_p, "K": sampler.K, "L": sampler.L, "D": D, "n_free_loadings": n_free},
        "first_sweep": int(start),
        "last_sweep": int(state.sweep),
        "burn_in": m.burn_in,
        "thin": m.thin,
    }
    return PosteriorChain(
        spec=spec,
        param_names=tuple(names),
        theta=stack(keep_theta, (D,)),
        lam=None if sampler.is_re else stack(keep_lam, (n_free,)),
        f=None if sampler.is_re or not m.store_factors else stack(keep_f, (sampler.N, sampler.L)),
        Sigma=stack(keep_sigma, (sampler.K, sampler.K)) if sampler.is_re else None,
        nu=stack(keep_nu, (sampler.N, sampler.K)) if sampler.is_re and m.store_factors else None,
        mask=sampler.mask,
        metadata=meta,
        final_state=state.copy(),
        rng_states={k: v.get_state() for k, v in streams.items()},
    )


# ---------------------------------------------------------------- summaries

def _split_rhat(x: np.ndarray) -> float:
    n = x.size // 2
    if n < 2:
        return float("nan")
    halves = np.stack([x[:n], x[x.size - n:]])
    W = halves.var(axis=1, ddof=1).mean()
    B = n * halves.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else float("inf")
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def summary_columns(chain: PosteriorChain) -> tuple[list[str], np.ndarray]:
    names = list(chain.param_names)
    cols = [chain.theta]
    if chain.lam is not None:
        names += loading_names(chain.mask)
        cols.append(chain.lam)
    if chain.Sigma is not None:
        K = chain.Sigma.shape[1]
        iu = np.triu_indices(K)
        names += [f"Sigma_{a + 1}_{b + 1}" for a, b in zip(*iu)]
        cols.append(chain.Sigma[:, iu[0], iu[1]])
    return names, np.hstack(cols) if cols else np.zeros((chain.n_draws, 0))


def summarize(chain: PosteriorChain, quantiles=(0.025, 0.5, 0.975)) -> list[dict]:
    """Posterior mean, sd, quantiles and split-half R-hat for every stored parameter."""
    if chain.n_draws == 0:
        raise UsageError("cannot summarise an empty chain")
    names, X = summary_columns(chain)
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    q = np.quantile(X, quantiles, axis=0)
    rows = []
    for k, name in enumerate(names):
        row = {"parameter": name, "mean": float(mean[k]), "sd": float(sd[k])}
        for a, qq in enumerate(quantiles):
            row[f"q{qq * 100:g}"] = float(q[a, k])
        row["split_rhat"] = _split_rhat(X[:, k])
        rows.append(row)
    return rows
