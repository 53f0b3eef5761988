"""Goods, bundles, panel containers and the deterministic utility algebra.

Goods are indexed ``0..J-1`` internally and labelled ``1..J`` in every
user-facing string (bundle labels such as ``"1+3"``, column names such as
``z_2_1``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError

MAX_GOODS = 7


@dataclass(frozen=True)
class ChoiceSet:
    """Ordered power set of ``J`` goods; ``bundles[0]`` is the outside option."""

    J: int
    bundles: tuple[tuple[int, ...], ...]

    @property
    def R(self) -> int:
        """Number of inside options, ``2**J - 1``."""
        return len(self.bundles) - 1

    @cached_property
    def pair_list(self) -> tuple[tuple[int, int], ...]:
        return tuple(combinations(range(self.J), 2))

    @property
    def n_pairs(self) -> int:
        return len(self.pair_list)

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        return {b: r for r, b in enumerate(self.bundles)}

    def index_of(self, goods: Sequence[int]) -> int:
        key = tuple(sorted(set(goods)))
        try:
            return self._index[key]
        except KeyError:
            raise DataError(f"{key} is not a bundle over {self.J} goods") from None

    def label(self, r: int) -> str:
        return "+".join(str(j + 1) for j in self.bundles[r])

    def parse_label(self, text: str) -> int:
        text = text.strip()
        if not text:
            return 0
        try:
            goods = [int(tok) - 1 for tok in text.split("+")]
        except ValueError:
            raise DataError(f"cannot parse bundle label {text!r}") from None
        if any(g < 0 or g >= self.J for g in goods) or len(set(goods)) != len(goods):
            raise DataError(f"bundle label {text!r} names goods outside 1..{self.J}")
        return self.index_of(goods)

    @cached_property
    def membership(self) -> np.ndarray:
        """``(R, J)`` incidence of goods in inside bundles."""
        return membership_matrix(self)

    @cached_property
    def pair_membership(self) -> np.ndarray:
        """``(R, n_pairs)``: 1 where both goods of the pair are in the bundle."""
        out = np.zeros((self.R, self.n_pairs))
        for r, b in enumerate(self.bundles[1:]):
            members = set(b)
            for q, (j1, j2) in enumerate(self.pair_list):
                if j1 in members and j2 in members:
                    out[r, q] = 1.0
        return out

    @cached_property
    def good_in_bundle(self) -> np.ndarray:
        """``(R+1, J)`` incidence including the all-zero outside row."""
        return np.vstack([np.zeros((1, self.J)), self.membership])


def enumerate_choice_set(J: int) -> ChoiceSet:
    """Bundles by size, lexicographic within a size, outside option first."""
    if not isinstance(J, (int, np.integer)) or not 1 <= J <= MAX_GOODS:
        raise ConfigError(f"number of goods must lie in [1, {MAX_GOODS}], got {J!r}")
    J = int(J)
    bundles = [()]
    for size in range(1, J + 1):
        bundles.extend(combinations(range(J), size))
    return ChoiceSet(J=J, bundles=tuple(bundles))


def membership_matrix(cs: ChoiceSet) -> np.ndarray:
    out = np.zeros((cs.R, cs.J))
    for r, b in enumerate(cs.bundles[1:]):
        out[r, list(b)] = 1.0
    return out


def _as_blocks(arrs, n: int, count: int, what: str) -> tuple[np.ndarray, ...]:
    if arrs is None:
        arrs = [np.zeros((n, 0))] * count
    arrs = [np.asarray(a, dtype=float) for a in arrs]
    if len(arrs) != count:
        raise DataError(f"expected {count} {what} blocks, got {len(arrs)}")
    out = []
    for k, a in enumerate(arrs):
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] != n:
            raise DataError(f"{what} block {k + 1} has shape {a.shape}, expected ({n}, K)")
        if not np.all(np.isfinite(a)):
            raise DataError(f"{what} block {k + 1} contains non-finite values")
        out.append(a)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class PanelData:
    """Long-format panel: one row per (individual, period).

    Rows are stored sorted by (individual, period). ``z[j]`` holds the utility
    covariates of good ``j`` (price included), ``w[q]`` the bundle-effect
    covariates of pair ``q`` in ``choice_set.pair_list`` order, ``p`` the
    endogenous regressors and ``zp[k]`` the first-stage covariates of
    regressor ``k``. ``price_slot[j]`` is the column of ``z[j]`` holding the
    price of good ``j`` (``None`` when the good has no price covariate).
    """

    choice_set: ChoiceSet
    ids: np.ndarray
    periods: np.ndarray
    y: np.ndarray
    z: tuple[np.ndarray, ...]
    w: tuple[np.ndarray, ...] = ()
    p: np.ndarray | None = None
    zp: tuple[np.ndarray, ...] = ()
    price_slot: tuple[int | None, ...] | None = None
    individual_index: np.ndarray = field(init=False, repr=False)
    period_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cs = self.choice_set
        ids = np.asarray(self.ids).astype(np.int64).ravel()
        periods = np.asarray(self.periods).astype(np.int64).ravel()
        y = np.asarray(self.y).astype(np.int64).ravel()
        n = ids.size
        if periods.size != n or y.size != n:
            raise DataError("ids, periods and y must have equal length")
        if n == 0:
            raise DataError("panel has no observations")
        if y.min() < 0 or y.max() > cs.R:
            raise DataError(f"choices must index the {cs.R + 1} bundles")
        z = _as_blocks(self.z, n, cs.J, "z")
        w = _as_blocks(self.w if len(self.w) else None, n, cs.n_pairs, "w")
        p = np.zeros((n, 0)) if self.p is None else np.asarray(self.p, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.shape[0] != n or p.shape[1] > cs.J:
            raise DataError(f"p has shape {p.shape}; need ({n}, J_p) with J_p <= {cs.J}")
        zp = _as_blocks(self.zp if len(self.zp) else None, n, p.shape[1], "zp")
        if not np.all(np.isfinite(p)):
            raise DataError("p contains non-finite values")
        slots = self.price_slot
        if slots is None:
            slots = tuple([None] * cs.J)
        slots = tuple(None if s is None else int(s) for s in slots)
        if len(slots) != cs.J:
            raise DataError("price_slot needs one entry per good")
        for j, s in enumerate(slots):
            if s is not None and not 0 <= s < z[j].shape[1]:
                raise DataError(f"price slot {s} outside z block of good {j + 1}")

        order = np.lexsort((periods, ids))
        if np.any(order != np.arange(n)):
            ids, periods, y = ids[order], periods[order], y[order]
            z = tuple(a[order] for a in z)
            w = tuple(a[order] for a in w)
            p = p[order]
            zp = tuple(a[order] for a in zp)
        dup = (np.diff(ids) == 0) & (np.diff(periods) == 0)
        if np.any(dup):
            k = int(np.argmax(dup))
            raise DataError(f"duplicate observation for individual {ids[k]}, period {periods[k]}")
        _, ind = np.unique(ids, return_inverse=True)
        _, per = np.unique(periods, return_inverse=True)
        for name, val in (("ids", ids), ("periods", periods), ("y", y), ("z", z), ("w", w),
                          ("p", p), ("zp", zp), ("price_slot", slots),
                          ("individual_index", ind.ravel()), ("period_index", per.ravel())):
            object.__setattr__(self, name, val)
        for arr in (self.ids, self.periods, self.y, self.p, self.individual_index, self.period_index):
            arr.setflags(write=False)
        for arr in self.z + self.w + self.zp:
            arr.setflags(write=False)

    @property
    def n_obs(self) -> int:
        return self.y.size

    @cached_property
    def individual_labels(self) -> np.ndarray:
        return np.unique(self.ids)

    @cached_property
    def period_labels(self) -> np.ndarray:
        return np.unique(self.periods)

    @property
    def N(self) -> int:
        return self.individual_labels.size

    @property
    def T(self) -> int:
        """Number of distinct periods in the panel (the global period set)."""
        return self.period_labels.size

    @property
    def J_p(self) -> int:
        return self.p.shape[1]

    @cached_property
    def obs_start(self) -> np.ndarray:
        """Offsets of each individual's first row, plus ``n_obs`` at the end."""
        starts = np.flatnonzero(np.r_[True, np.diff(self.individual_index) != 0])
        return np.r_[starts, self.n_obs]

    @cached_property
    def periods_per_individual(self) -> np.ndarray:
        return np.diff(self.obs_start)

    @property
    def balanced(self) -> bool:
        return bool(np.all(self.periods_per_individual == self.T))

    def row(self, i, t) -> int:
        """Row number of the observation for individual label ``i`` in period label ``t``."""
        hit = np.flatnonzero((self.ids == i) & (self.periods == t))
        if hit.size == 0:
            raise DataError(f"no observation for individual {i}, period {t}")
        return int(hit[0])

    def with_prices(self, multipliers) -> "PanelData":
        """Copy with good ``j``'s price covariate scaled by ``multipliers[j]``.

        Only the utility covariates change; the first-stage block ``p`` is the
        observed data and is left as is.
        """
        mult = np.asarray(multipliers, dtype=float)
        z = list(self.z)
        for j, s in enumerate(self.price_slot):
            if s is None or mult[j] == 1.0:
                continue
            block = z[j].copy()
            block[:, s] *= mult[j]
            z[j] = block
        return PanelData(self.choice_set, self.ids, self.periods, self.y, tuple(z), self.w,
                         self.p, self.zp, self.price_slot)


@dataclass(frozen=True)
class ParamLayout:
    """Maps every covariate slot to a position in the flat parameter vector.

    ``Theta`` is ordered as (good-utility block, bundle-effect block,
    first-stage block). Within a block, slots are numbered in covariate order
    and a shared slot takes the position of its first occurrence.
    """

    z_index: tuple[np.ndarray, ...]
    w_index: tuple[np.ndarray, ...]
    zp_index: tuple[np.ndarray, ...]
    names: tuple[str, ...]
    n_theta: int
    n_gamma: int
    n_theta_p: int
    pair_list: tuple[tuple[int, int], ...] = ()

    @property
    def dim(self) -> int:
        return self.n_theta + self.n_gamma + self.n_theta_p

    def index_of(self, slot: str) -> int:
        kind, idx = _parse_slot(slot)
        table = {"z": self.z_index, "w": self.w_index, "zp": self.zp_index}[kind]
        block, col = idx
        if kind == "w":
            if block not in self.pair_list:
                raise ConfigError(f"no such pair in slot {slot!r}")
            block = self.pair_list.index(block)
        try:
            return int(table[block][col])
        except IndexError:
            raise ConfigError(f"slot {slot!r} does not exist in this layout") from None

    @classmethod
    def build(cls, cs: ChoiceSet, z_dims, w_dims, zp_dims, shared=()) -> "ParamLayout":
        """Create a layout from covariate widths and sharing groups.

        ``shared`` is a sequence of groups of slot names (``"z_1_1"``,
        ``"w_1_2_1"``, ``"zp_3_2"``, 1-based); every slot of a group maps to
        one scalar. Groups may not mix blocks.
        """
        names_by_kind = {
            "z": [[f"z_{j + 1}_{k + 1}" for k in range(d)] for j, d in enumerate(z_dims)],
            "w": [[f"w_{a + 1}_{b + 1}_{k + 1}" for k in range(d)]
                  for (a, b), d in zip(cs.pair_list, w_dims)],
            "zp": [[f"zp_{j + 1}_{k + 1}" for k in range(d)] for j, d in enumerate(zp_dims)],
        }
        owner: dict[str, str] = {}
        for group in shared:
            group = list(group)
            if len(group) < 2:
                raise ConfigError(f"sharing group {group} needs at least two slots")
            kinds = {_parse_slot(s)[0] for s in group}
            if len(kinds) != 1:
                raise ConfigError(f"sharing group {group} mixes equation blocks")
            kind = kinds.pop()
            valid = {n for blk in names_by_kind[kind] for n in blk}
            for s in group:
                if s not in valid:
                    raise ConfigError(f"sharing slot {s!r} does not exist in the data")
                if s in owner:
                    raise ConfigError(f"slot {s!r} appears in two sharing groups")
                owner[s] = group[0]
        indices = {}
        names: list[str] = []
        sizes = []
        offset = 0
        for kind in ("z", "w", "zp"):
            pos: dict[str, int] = {}
            blocks = []
            for blk in names_by_kind[kind]:
                idx = []
                for s in blk:
                    root = owner.get(s, s)
                    if root not in pos:
                        pos[root] = offset + len(pos)
                        names.append(_shared_name(root, owner) if root in owner.values() else root)
                    idx.append(pos[root])
                blocks.append(np.array(idx, dtype=np.int64))
            indices[kind] = tuple(blocks)
            sizes.append(len(pos))
            offset += len(pos)
        return cls(indices["z"], indices["w"], indices["zp"], tuple(names), *sizes,
                   pair_list=cs.pair_list)

    @classmethod
    def for_data(cls, data: PanelData, shared=(), endogenous: bool = True) -> "ParamLayout":
        zp_dims = [a.shape[1] for a in data.zp] if endogenous else []
        if not endogenous:
            shared = [g for g in shared if not str(g[0]).startswith("zp_")]
        return cls.build(data.choice_set, [a.shape[1] for a in data.z],
                         [a.shape[1] for a in data.w], zp_dims, shared)


def _shared_name(root: str, owner: dict[str, str]) -> str:
    members = sorted((s for s, r in owner.items() if r == root), key=_slot_sort_key)
    return "=".join(members)


def _slot_sort_key(slot: str):
    kind, (blk, col) = _parse_slot(slot)
    return (kind, str(blk), col, slot)


def _parse_slot(slot: str):
    parts = str(slot).split("_")
    try:
        if parts[0] == "z" and len(parts) == 3:
            return "z", (int(parts[1]) - 1, int(parts[2]) - 1)
        if parts[0] == "zp" and len(parts) == 3:
            return "zp", (int(parts[1]) - 1, int(parts[2]) - 1)
        if parts[0] == "w" and len(parts) == 4:
            a, b, k = int(parts[1]) - 1, int(parts[2]) - 1, int(parts[3]) - 1
            if not 0 <= a < b:
                raise ConfigError(f"pair in {slot!r} must list the lower good first")
            return "w", ((a, b), k)
    except ValueError:
        pass
    raise ConfigError(f"cannot parse covariate slot name {slot!r}")


@dataclass(frozen=True)
class EquationParams:
    """Flat parameter vector interpreted through a :class:`ParamLayout`."""

    layout: ParamLayout
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size != self.layout.dim:
            raise DataError(f"parameter vector has length {v.size}, layout needs {self.layout.dim}")
        object.__setattr__(self, "values", v)

    @property
    def theta(self) -> np.ndarray:
        return self.values[: self.layout.n_theta]

    @property
    def gamma(self) -> np.ndarray:
        lo = self.layout.n_theta
        return self.values[lo: lo + self.layout.n_gamma]

    @property
    def theta_p(self) -> np.ndarray:
        return self.values[self.layout.n_theta + self.layout.n_gamma:]

    def theta_j(self, j: int) -> np.ndarray:
        return self.values[self.layout.z_index[j]]

    def gamma_q(self, q: int) -> np.ndarray:
        return self.values[self.layout.w_index[q]]

    def theta_p_k(self, k: int) -> np.ndarray:
        return self.values[self.layout.zp_index[k]]


def mean_utility(params: EquationParams, data: PanelData, i, t, r: int) -> float:
    """Deterministic utility of bundle ``r`` for individual ``i`` in period ``t``.

    Reference (loop) implementation; the sampler uses the stacked form in
    :mod:`bundlechoice.vectorize`.
    """
    cs = data.choice_set
    if not 0 <= r <= cs.R:
        raise DataError(f"bundle index {r} outside 0..{cs.R}")
    if r == 0:
        return 0.0
    n = data.row(i, t)
    members = cs.bundles[r]
    total = 0.0
    for j in members:
        x = data.z[j][n]
        coef = params.theta_j(j)
        if x.size != coef.size:
            raise DataError(f"good {j + 1}: {x.size} covariates but {coef.size} coefficients")
        total += float(x @ coef)
    for q, (j1, j2) in enumerate(cs.pair_list):
        if j1 in members and j2 in members:
            x = data.w[q][n]
            coef = params.gamma_q(q)
            if x.size != coef.size:
                raise DataError(f"pair {q}: {x.size} covariates but {coef.size} coefficients")
            total += float(x @ coef)
    return total


def argmax_choice(utilities) -> int:
    """Index of the largest utility; ties go to the lowest index."""
    u = np.asarray(utilities, dtype=float)
    if np.isnan(u).any():
        raise NumericError("utility vector contains NaN")
    return int(np.argmax(u))
