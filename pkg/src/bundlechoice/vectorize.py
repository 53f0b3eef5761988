"""Stacked design and mapping matrices, and the analytic joint-error covariances.

The sampler never forms the global design matrix. Every observation row
``n`` (one individual-period) carries ``B = J + n_pairs + J_p`` covariate
blocks; block ``b`` holds the covariates of one good, one pair or one
first-stage equation, scattered into the parameter vector through the
layout. The ``E = R + J_p`` equation rows of the observation combine the
blocks through a fixed 0/1 matrix ``A`` (bundle membership for goods,
pair membership for bundle effects, identity for first stages), so the
per-observation design is ``h_n = A X_n``.

Loadings are stored as an array ``Lambda`` of shape ``(T_L, K, L)`` with
``K = J + J_p`` and ``T_L = T`` for time-varying loadings or ``1`` when
loadings are constant over time. The free-loading vector is ordered by
period, then factor, then equation row (column-major within a period).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError
from .model_core import ChoiceSet, PanelData, ParamLayout


def mapping_matrix(cs: ChoiceSet, J_p: int = 0) -> np.ndarray:
    """``I_nu``: ``(R + J_p, J + J_p)``, membership on top, identity for first stages."""
    out = np.zeros((cs.R + J_p, cs.J + J_p))
    out[: cs.R, : cs.J] = cs.membership
    out[cs.R:, cs.J:] = np.eye(J_p)
    return out


def combine_matrix(cs: ChoiceSet, J_p: int = 0) -> np.ndarray:
    """``A``: ``(R + J_p, J + n_pairs + J_p)`` map from covariate blocks to equation rows."""
    Q = cs.n_pairs
    out = np.zeros((cs.R + J_p, cs.J + Q + J_p))
    out[: cs.R, : cs.J] = cs.membership
    out[: cs.R, cs.J: cs.J + Q] = cs.pair_membership
    out[cs.R:, cs.J + Q:] = np.eye(J_p)
    return out


@dataclass(frozen=True)
class DesignBlocks:
    z_it: np.ndarray
    w_it: np.ndarray
    zp_it: np.ndarray
    h_it: np.ndarray
    I_nu: np.ndarray


def _n_first_stage(layout: ParamLayout) -> int:
    return len(layout.zp_index)


def build_design_blocks(cs: ChoiceSet, data: PanelData, layout: ParamLayout, i, t) -> DesignBlocks:
    """Dense design blocks for the observation of individual ``i`` in period ``t``."""
    n = data.row(i, t)
    J_p = _n_first_stage(layout)
    if J_p and J_p != data.J_p:
        raise DataError(f"layout has {J_p} first-stage equations, data has {data.J_p} regressors")
    z_it = np.zeros((cs.R, layout.n_theta))
    w_it = np.zeros((cs.R, layout.n_gamma))
    zp_it = np.zeros((J_p, layout.n_theta_p))
    for r, members in enumerate(cs.bundles[1:]):
        for j in members:
            idx = layout.z_index[j]
            if idx.size != data.z[j].shape[1]:
                raise DataError(f"good {j + 1}: layout expects {idx.size} covariates")
            np.add.at(z_it[r], idx, data.z[j][n])
        for q, (j1, j2) in enumerate(cs.pair_list):
            if j1 in members and j2 in members:
                idx = layout.w_index[q] - layout.n_theta
                np.add.at(w_it[r], idx, data.w[q][n])
    off = layout.n_theta + layout.n_gamma
    for k in range(J_p):
        idx = layout.zp_index[k] - off
        np.add.at(zp_it[k], idx, data.zp[k][n])
    h_it = np.zeros((cs.R + J_p, layout.dim))
    h_it[: cs.R, : layout.n_theta] = z_it
    h_it[: cs.R, layout.n_theta: off] = w_it
    h_it[cs.R:, off:] = zp_it
    return DesignBlocks(z_it, w_it, zp_it, h_it, mapping_matrix(cs, J_p))


class StackedSystem:
    """Structured form of the stacked system ``y* = H Theta + (I_nu nu) + eps``.

    Rows are (observation, equation row) with observations in the panel's
    (individual, period) order and equation rows as inside bundles followed
    by first stages. ``H'H`` is accumulated once, on first use.
    """

    def __init__(self, data: PanelData, layout: ParamLayout):
        cs = data.choice_set
        self.data = data
        self.layout = layout
        self.J_p = _n_first_stage(layout)
        if self.J_p and self.J_p != data.J_p:
            raise DataError(f"layout has {self.J_p} first-stage equations, data has {data.J_p} regressors")
        self.n = data.n_obs
        self.R = cs.R
        self.E = cs.R + self.J_p
        self.K = cs.J + self.J_p
        self.D = layout.dim
        blocks = []
        for j in range(cs.J):
            blocks.append((data.z[j], layout.z_index[j]))
        for q in range(cs.n_pairs):
            blocks.append((data.w[q], layout.w_index[q]))
        for k in range(self.J_p):
            blocks.append((data.zp[k], layout.zp_index[k]))
        for b, (x, idx) in enumerate(blocks):
            if x.shape[1] != idx.size:
                raise DataError(f"covariate block {b} has {x.shape[1]} columns, layout expects {idx.size}")
        self.blocks = blocks
        self.A = combine_matrix(cs, self.J_p)
        self.I_nu = mapping_matrix(cs, self.J_p)

    @cached_property
    def gram(self) -> np.ndarray:
        """``H'H`` accumulated block pair by block pair."""
        AtA = self.A.T @ self.A
        G = np.zeros((self.D, self.D))
        for b1, (x1, i1) in enumerate(self.blocks):
            for b2, (x2, i2) in enumerate(self.blocks):
                c = AtA[b1, b2]
                if c == 0.0 or x1.shape[1] == 0 or x2.shape[1] == 0:
                    continue
                np.add.at(G, (i1[:, None], i2[None, :]), c * (x1.T @ x2))
        return G

    def block_index(self, theta: np.ndarray) -> np.ndarray:
        """``(n, B)``: covariate index ``x_b' theta_b`` of every block."""
        out = np.zeros((self.n, len(self.blocks)))
        for b, (x, idx) in enumerate(self.blocks):
            if idx.size:
                out[:, b] = x @ theta[idx]
        return out

    def mean(self, theta: np.ndarray) -> np.ndarray:
        """``(n, E)`` deterministic part of every equation row."""
        return self.block_index(np.asarray(theta, dtype=float)) @ self.A.T

    def rmatvec(self, resid: np.ndarray) -> np.ndarray:
        """``H' v`` for ``v`` shaped ``(n, E)``."""
        v = np.asarray(resid, dtype=float) @ self.A
        out = np.zeros(self.D)
        for b, (x, idx) in enumerate(self.blocks):
            if idx.size:
                np.add.at(out, idx, x.T @ v[:, b])
        return out

    def matvec_dense(self, theta) -> np.ndarray:
        return self.mean(theta).ravel()

    def dense(self) -> np.ndarray:
        """Materialised ``H`` (``n*E`` by ``D``); for verification on small problems."""
        H = np.zeros((self.n, self.E, self.D))
        for b, (x, idx) in enumerate(self.blocks):
            for a, col in enumerate(idx):
                H[:, :, col] += x[:, a][:, None] * self.A[:, b][None, :]
        return H.reshape(self.n * self.E, self.D)

    def obs_weighted_cross(self, S: np.ndarray, obs_period: np.ndarray) -> np.ndarray:
        """Per-observation ``H_n' W_n`` with ``W_n = I_nu Lambda_t`` given ``S_t = A' I_nu Lambda_t``.

        ``S`` has shape ``(T_L, B, L)``; returns ``(n, D, L)``.
        """
        L = S.shape[2]
        out = np.zeros((self.n, self.D, L))
        St = S[obs_period]
        for b, (x, idx) in enumerate(self.blocks):
            if idx.size == 0:
                continue
            contrib = x[:, :, None] * St[:, b, None, :]
            for a, col in enumerate(idx):
                out[:, col, :] += contrib[:, a, :]
        return out


# ---------------------------------------------------------------- loadings

def check_loadings(Lambda: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    Lambda = np.asarray(Lambda, dtype=float)
    if Lambda.ndim == 2:
        Lambda = Lambda[None]
    if Lambda.ndim != 3:
        raise ConfigError(f"loadings must have shape (T, K, L) or (K, L), got {Lambda.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != Lambda.shape:
            raise ConfigError(f"mask shape {mask.shape} does not match loadings {Lambda.shape}")
        if np.any(Lambda[~mask] != 0.0):
            raise ConfigError("masked loadings must be exactly zero")
    return Lambda


def pack_loadings(Lambda: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Free entries of ``Lambda`` ordered (period, factor, equation row)."""
    Lambda = check_loadings(Lambda)
    mask = np.asarray(mask, dtype=bool).reshape(Lambda.shape)
    return Lambda.transpose(0, 2, 1)[mask.transpose(0, 2, 1)]


def unpack_loadings(vec: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    mt = mask.transpose(0, 2, 1)
    out = np.zeros(mt.shape)
    vec = np.asarray(vec, dtype=float)
    if vec.size != int(mt.sum()):
        raise ConfigError(f"{vec.size} loadings supplied for {int(mt.sum())} free slots")
    out[mt] = vec
    return out.transpose(0, 2, 1).copy()


def loading_period(data: PanelData, Lambda: np.ndarray) -> np.ndarray:
    """Row of ``Lambda`` used by each observation."""
    T_L = Lambda.shape[0]
    if T_L == 1:
        return np.zeros(data.n_obs, dtype=np.int64)
    if T_L != data.T:
        raise ConfigError(f"time-varying loadings cover {T_L} periods, panel has {data.T}")
    return data.period_index


def structural_errors(data: PanelData, Lambda: np.ndarray, f: np.ndarray) -> np.ndarray:
    """``(n, K)``: ``nu_n = Lambda_t f_i`` for every observation."""
    Lambda = check_loadings(Lambda)
    tp = loading_period(data, Lambda)
    f = np.asarray(f, dtype=float)
    if f.shape != (data.N, Lambda.shape[2]):
        raise ConfigError(f"factors must have shape ({data.N}, {Lambda.shape[2]}), got {f.shape}")
    return np.einsum("nkl,nl->nk", Lambda[tp], f[data.individual_index])


def build_H_lambda(data: PanelData, Lambda: np.ndarray, J_p: int | None = None) -> sp.csr_matrix:
    """Sparse ``H_Lambda`` (``n*E`` by ``N*L``) so that ``H_Lambda vec(f') = I_nu nu``.

    Block for observation ``n`` of individual ``i`` sits in columns ``i*L .. i*L+L-1``.
    """
    Lambda = check_loadings(Lambda)
    J_p = data.J_p if J_p is None else J_p
    I_nu = mapping_matrix(data.choice_set, J_p)
    if Lambda.shape[1] != I_nu.shape[1]:
        raise ConfigError(f"loadings have {Lambda.shape[1]} rows, expected {I_nu.shape[1]}")
    tp = loading_period(data, Lambda)
    E, L = I_nu.shape[0], Lambda.shape[2]
    W = np.einsum("ek,tkl->tel", I_nu, Lambda)
    rows, cols, vals = [], [], []
    e_idx, l_idx = np.meshgrid(np.arange(E), np.arange(L), indexing="ij")
    for n in range(data.n_obs):
        i = data.individual_index[n]
        rows.append(n * E + e_idx.ravel())
        cols.append(i * L + l_idx.ravel())
        vals.append(W[tp[n]].ravel())
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(data.n_obs * E, data.N * L))


def build_H_f(data: PanelData, f: np.ndarray, mask: np.ndarray, J_p: int | None = None) -> sp.csr_matrix:
    """Sparse ``H_f`` (``n*E`` by free loadings) with ``H_f lambda = H_Lambda f``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    J_p = data.J_p if J_p is None else J_p
    I_nu = mapping_matrix(data.choice_set, J_p)
    T_L, K, L = mask.shape
    if K != I_nu.shape[1]:
        raise ConfigError(f"mask has {K} rows, expected {I_nu.shape[1]}")
    f = np.asarray(f, dtype=float)
    if f.shape != (data.N, L):
        raise ConfigError(f"factors must have shape ({data.N}, {L}), got {f.shape}")
    # column number of each free (t, l, j)
    col_of = -np.ones((T_L, L, K), dtype=np.int64)
    mt = mask.transpose(0, 2, 1)
    col_of[mt] = np.arange(int(mt.sum()))
    tp = np.zeros(data.n_obs, dtype=np.int64) if T_L == 1 else data.period_index
    if T_L not in (1, data.T):
        raise ConfigError(f"mask covers {T_L} periods, panel has {data.T}")
    E = I_nu.shape[0]
    rows, cols, vals = [], [], []
    nz_e, nz_k = np.nonzero(I_nu)
    for n in range(data.n_obs):
        i = data.individual_index[n]
        for l in range(L):
            c = col_of[tp[n], l, nz_k]
            keep = c >= 0
            rows.append(n * E + nz_e[keep])
            cols.append(c[keep])
            vals.append(f[i, l] * I_nu[nz_e[keep], nz_k[keep]])
    n_free = int(mt.sum())
    if n_free == 0:
        return sp.csr_matrix((data.n_obs * E, 0))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(data.n_obs * E, n_free))


def empty_factor_columns(mask: np.ndarray) -> list[int]:
    """Factors without any free loading (they contribute nothing)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[None]
    return [l for l in range(mask.shape[2]) if not mask[:, :, l].any()]


# ---------------------------------------------------------------- covariances

def joint_error_covariance(cs: ChoiceSet, J_p: int = 0, Lambda=None, Sigma=None, t=None, periods=None):
    """Analytic covariance of the joint errors ``I_nu nu + eps``.

    With ``t`` given (or a single 2-D ``Lambda``) returns the per-period
    ``(R+J_p)`` square matrix. Otherwise returns the panel-level matrix over
    ``periods`` (all loading periods by default), ordered period-major.
    Pass ``Sigma`` instead of ``Lambda`` for random effects (time invariant).
    """
    I_nu = mapping_matrix(cs, J_p)
    K = I_nu.shape[1]
    if (Lambda is None) == (Sigma is None):
        raise ConfigError("pass exactly one of Lambda or Sigma")
    if Sigma is not None:
        S = np.asarray(Sigma, dtype=float)
        if S.shape != (K, K):
            raise ConfigError(f"Sigma must be {K}x{K}")
        if t is not None or periods is None:
            return I_nu @ S @ I_nu.T + np.eye(I_nu.shape[0])
        Tn = len(periods)
        block = I_nu @ S @ I_nu.T
        return np.kron(np.ones((Tn, Tn)), block) + np.eye(Tn * I_nu.shape[0])
    two_d = np.ndim(Lambda) == 2
    Lam = check_loadings(Lambda)
    if Lam.shape[1] != K:
        raise ConfigError(f"loadings have {Lam.shape[1]} rows, expected {K}")

    def per(tt):
        return Lam[0] if Lam.shape[0] == 1 else Lam[tt]

    if t is not None or (two_d and periods is None):
        Lt = per(0 if t is None else t)
        U = I_nu @ Lt
        return U @ U.T + np.eye(I_nu.shape[0])
    if periods is None:
        periods = range(Lam.shape[0])
    U = np.vstack([I_nu @ per(tt) for tt in periods])
    return U @ U.T + np.eye(U.shape[0])


def covariance_summary(cs: ChoiceSet, J_p: int = 0, Lambda=None, Sigma=None, periods=None) -> list[dict]:
    """Named variance/covariance entries of the joint errors, one dict per entry.

    Keys: ``element``, ``j1``, ``j2`` (1-based goods or regressors), ``t1``, ``t2``
    (period positions; equal for within-period entries) and ``value``.
    """
    J = cs.J
    if Sigma is not None:
        S = np.asarray(Sigma, dtype=float)
        T_L = 1

        def cross(t1, t2):
            return S
    else:
        Lam = check_loadings(Lambda)
        T_L = Lam.shape[0]

        def cross(t1, t2):
            return Lam[t1 % T_L] @ Lam[t2 % T_L].T

    periods = list(range(T_L)) if periods is None else list(periods)
    rows = []

    def add(name, a, b, t1, t2, v):
        rows.append({"element": name, "j1": a + 1, "j2": b + 1, "t1": t1, "t2": t2, "value": float(v)})

    for t in periods:
        C = cross(t, t)
        for j in range(J):
            add("utility_error_variance", j, j, t, t, 1.0 + C[j, j])
        for j1 in range(J):
            for j2 in range(j1 + 1, J):
                add("unobserved_tastes", j1, j2, t, t, C[j1, j2])
        for j1 in range(J):
            for k in range(J_p):
                add("regressor_endogeneity", j1, k, t, t, C[j1, J + k])
        for k in range(J_p):
            add("first_stage_error_variance", k, k, t, t, 1.0 + C[J + k, J + k])
        for k1 in range(J_p):
            for k2 in range(k1 + 1, J_p):
                add("first_stage_error_covariance", k1, k2, t, t, C[J + k1, J + k2])
    for a, t1 in enumerate(periods):
        for t2 in periods[a + 1:]:
            C = cross(t1, t2)
            for j in range(J):
                add("intertemporal_tastes", j, j, t1, t2, C[j, j])
            for k in range(J_p):
                add("first_stage_intertemporal", k, k, t1, t2, C[J + k, J + k])
    return rows
