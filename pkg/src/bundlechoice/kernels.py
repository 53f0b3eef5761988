"""Random-variate kernels used by the sampler.

* :class:`RngStream` - named, reproducible substreams over Philox.
* :func:`draw_truncated_normal` - vectorised, tail-robust.
* :func:`draw_gaussian_posterior` - precision-form conjugate normal draws.
* :func:`draw_gig` - generalized inverse Gaussian variates.
"""
from __future__ import annotations

import hashlib
import math
from typing import Any

import numpy as np
import scipy.linalg as sla
from scipy.special import log_ndtr, ndtri_exp

from .errors import DomainError, NumericError

__all__ = [
    "RngStream",
    "as_generator",
    "draw_truncated_normal",
    "draw_gaussian_posterior",
    "draw_gaussian_posterior_batch",
    "draw_gig",
]


def _name_key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    ``stream_id`` is a tuple of non-negative ints; :meth:`child` appends one
    more component (names are hashed to an int), so each logical consumer
    (trial, chain stage, sampler step) owns an independent Philox stream.
    """

    def __init__(self, seed: int, stream_id: tuple = ()):
        if int(seed) < 0:
            raise DomainError("seed must be non-negative")
        self.seed = int(seed)
        self.stream_id = tuple(int(s) for s in stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def child(self, name) -> "RngStream":
        return RngStream(self.seed, self.stream_id + (_name_key(name),))

    def get_state(self) -> dict[str, Any]:
        st = self.generator.bit_generator.state
        return {"seed": self.seed, "stream_id": list(self.stream_id), "bit_generator": _jsonable(st)}

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> "RngStream":
        out = cls(state["seed"], tuple(state["stream_id"]))
        out.generator.bit_generator.state = _from_jsonable(state["bit_generator"])
        return out

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an integer seed or None (fresh entropy)."""
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    if isinstance(rng, (int, np.integer)) and not isinstance(rng, bool):
        return RngStream(int(rng)).generator
    raise TypeError(f"expected RngStream, numpy Generator, int seed or None, got {type(rng).__name__}")


# ---------------------------------------------------------------- truncated normal

_TAIL_SWITCH = 5.0


def _std_left(a, b, gen):
    """Standard normal restricted to (a, b) where the interval lies in the left half-line
    (``a + b <= 0``). Log-space inverse CDF, exponential rejection for deep one-sided tails.
    """
    out = np.empty(a.shape)
    tail = np.isneginf(a) & (b < -_TAIL_SWITCH)
    body = ~tail
    if body.any():
        la = log_ndtr(a[body])
        lb = log_ndtr(b[body])
        u = gen.random(la.shape)
        # log(U*Phi(b) + (1-U)*Phi(a)), computed relative to Phi(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = lb + np.log(u + (1.0 - u) * np.exp(la - lb))
        out[body] = ndtri_exp(np.minimum(logp, 0.0))
    if tail.any():
        # x <= b with b far in the left tail: y = -x >= c via Robert's translated exponential
        c = -b[tail]
        alpha = 0.5 * (c + np.sqrt(c * c + 4.0))
        res = np.empty(c.shape)
        todo = np.arange(c.size)
        while todo.size:
            z = c[todo] - np.log1p(-gen.random(todo.size)) / alpha[todo]
            logv = np.log1p(-gen.random(todo.size))
            ok = logv <= -0.5 * (z - alpha[todo]) ** 2
            res[todo[ok]] = z[ok]
            todo = todo[~ok]
        out[tail] = -res
    return out


def draw_truncated_normal(mean, sd=1.0, lower=None, upper=None, rng=None):
    """Draw from N(mean, sd^2) restricted to the open interval (lower, upper).

    All arguments broadcast. ``None`` bounds mean unbounded. Returns a float for
    scalar input, an array otherwise. Draws always lie strictly inside the bounds.
    """
    gen = as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    lo = np.asarray(-np.inf if lower is None else lower, dtype=float)
    hi = np.asarray(np.inf if upper is None else upper, dtype=float)
    scalar = mean.ndim == 0 and sd.ndim == 0 and lo.ndim == 0 and hi.ndim == 0
    mean, sd, lo, hi = np.broadcast_arrays(mean, sd, lo, hi)
    shape = mean.shape
    mean, sd, lo, hi = (np.atleast_1d(v).ravel() for v in (mean, sd, lo, hi))
    if np.any(~(sd > 0)) or np.any(~np.isfinite(sd)):
        raise DomainError("truncated normal needs finite sd > 0")
    if np.isnan(mean).any() or np.isnan(lo).any() or np.isnan(hi).any():
        raise NumericError("truncated normal received NaN mean or bound")
    if np.any(~(lo < hi)):
        raise DomainError("truncated normal needs lower < upper")
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    with np.errstate(invalid="ignore"):
        flip = (a + b) > 0
    a_s = np.where(flip, -b, a)
    b_s = np.where(flip, -a, b)
    x = _std_left(a_s, b_s, gen)
    x = np.where(flip, -x, x)
    out = mean + sd * x
    # keep strictly inside, in the original scale
    lo_in = np.nextafter(lo, np.inf)
    hi_in = np.nextafter(hi, -np.inf)
    if np.any(lo_in > hi_in):
        raise NumericError("truncation interval contains no representable interior point")
    bad = ~np.isfinite(out)
    if bad.any():
        # only reachable when an interval of zero mass at working precision underflows;
        # fall back to the bound nearest the mean
        out[bad] = np.where(np.isfinite(lo[bad]), lo_in[bad], hi_in[bad])
        if not np.all(np.isfinite(out)):
            raise NumericError("truncated normal could not place a finite draw")
    out = np.clip(out, lo_in, hi_in)
    return float(out[0]) if scalar else out.reshape(shape)


# ---------------------------------------------------------------- Gaussian posterior

_JITTER = 1e-10


def _prior_precision_matrix(prior_precision, k):
    P = np.asarray(prior_precision, dtype=float)
    if P.ndim == 0:
        return np.eye(k) * float(P)
    if P.ndim == 1:
        return np.diag(P)
    return P


def _cholesky(P, what="posterior precision"):
    try:
        return sla.cholesky(P, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError):
        pass
    jitter = _JITTER * float(np.mean(np.diag(P)))
    try:
        return sla.cholesky(P + jitter * np.eye(P.shape[0]), lower=True)
    except (sla.LinAlgError, ValueError):
        diag = np.diag(P)
        raise NumericError(
            f"{what} is not positive definite even after jitter {jitter:.3g} "
            f"(diagonal range [{diag.min():.3g}, {diag.max():.3g}])") from None


def draw_gaussian_posterior(xtx, xty, prior_mean, prior_precision, rng, return_mean=False):
    """Draw from N(m_bar, V_bar) with V_bar = (X'X + P0)^-1, m_bar = V_bar (X'y + P0 m0).

    ``prior_precision`` may be a scalar, a diagonal vector or a full matrix.
    """
    gen = as_generator(rng)
    xtx = np.atleast_2d(np.asarray(xtx, dtype=float))
    k = xtx.shape[0]
    P0 = _prior_precision_matrix(prior_precision, k)
    m0 = np.broadcast_to(np.asarray(prior_mean, dtype=float), (k,))
    P = xtx + P0
    L = _cholesky(P)
    rhs = np.asarray(xty, dtype=float).reshape(k) + P0 @ m0
    m = sla.cho_solve((L, True), rhs)
    z = gen.standard_normal(k)
    draw = m + sla.solve_triangular(L, z, lower=True, trans="T")
    return (draw, m) if return_mean else draw


def draw_gaussian_posterior_batch(precision, linear, rng):
    """Independent draws ``x_b ~ N(P_b^-1 c_b, P_b^-1)`` for a stack of small systems.

    ``precision`` has shape (B, k, k) and ``linear`` (B, k). Used for per-individual
    factor and random-effect updates.
    """
    gen = as_generator(rng)
    P = np.asarray(precision, dtype=float)
    c = np.asarray(linear, dtype=float)
    B, k = c.shape
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        jitter = _JITTER * np.mean(np.diagonal(P, axis1=1, axis2=2), axis=1)
        try:
            L = np.linalg.cholesky(P + jitter[:, None, None] * np.eye(k))
        except np.linalg.LinAlgError:
            raise NumericError("a block precision is not positive definite after jitter") from None
    if k == 1:
        l = L[:, 0, 0]
        return (c[:, 0] / (l * l) + gen.standard_normal(B) / l)[:, None]
    Lt = np.swapaxes(L, 1, 2)
    # m = P^-1 c = L^-T L^-1 c ; noise L^-T z
    w = np.linalg.solve(L, c[..., None])
    z = gen.standard_normal((B, k, 1))
    return np.linalg.solve(Lt, w + z)[..., 0]


# ---------------------------------------------------------------- GIG


def _gig_mode(lam, omega):
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega * omega) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega * omega) + (1.0 - lam))


def _collect(gen, n, propose):
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        x = propose(need + need // 4 + 8)[:need]
        out[filled: filled + x.size] = x
        filled += x.size
    return out


def _rou_shift(lam, omega, n, gen):
    # ratio-of-uniforms with mode shift (Dagpunar, Lehner)
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    c = xm
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    fi = math.acos(-q / (2.0 * math.sqrt(-(p ** 3) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)

    def propose(m):
        u = uminus + gen.random(m) * (uplus - uminus)
        v = gen.random(m)
        x = u / v + xm
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & (np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc)
        return x[ok]

    return _collect(gen, n, propose)


def _rou_noshift(lam, omega, n, gen):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega * omega)) / omega
    um = math.exp(0.5 * (lam + 1.0) * math.log(ym) - s * (ym + 1.0 / ym) - nc)

    def propose(m):
        u = um * gen.random(m)
        v = gen.random(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = u / v
            ok = (x > 0) & (np.log(v) <= t * np.log(x) - s * (x + 1.0 / x) - nc)
        return x[ok]

    return _collect(gen, n, propose)


def _rou_small(lam, omega, n, gen):
    # Hormann-Leydold envelope for 0 <= lam < 1 and small omega (density not T-concave)
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    A0 = k0 * x0
    if x0 >= 2.0 / omega:
        k1, A1 = 0.0, 0.0
        k2 = x0 ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-omega * x0 / 2.0) / omega
    else:
        k1 = math.exp(-omega)
        if lam == 0.0:
            A1 = k1 * math.log(2.0 / (omega * omega))
        else:
            A1 = k1 / lam * ((2.0 / omega) ** lam - x0 ** lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        A2 = k2 * 2.0 * math.exp(-1.0) / omega
    Atot = A0 + A1 + A2
    edge = max(x0, 2.0 / omega)

    def propose(m):
        v = Atot * gen.random(m)
        x = np.empty(m)
        hx = np.empty(m)
        r0 = v <= A0
        x[r0] = x0 * v[r0] / A0
        hx[r0] = k0
        v1 = v - A0
        r1 = ~r0 & (v1 <= A1)
        if r1.any():
            if lam == 0.0:
                x[r1] = x0 * np.exp(v1[r1] / k1)
                hx[r1] = k1 / x[r1]
            else:
                x[r1] = (x0 ** lam + lam / k1 * v1[r1]) ** (1.0 / lam)
                hx[r1] = k1 * x[r1] ** (lam - 1.0)
        r2 = ~r0 & ~r1
        if r2.any():
            v2 = v1[r2] - A1
            with np.errstate(divide="ignore", invalid="ignore"):
                x[r2] = -2.0 / omega * np.log(math.exp(-omega / 2.0 * edge) - omega / (2.0 * k2) * v2)
            hx[r2] = k2 * np.exp(-omega / 2.0 * x[r2])
        u = gen.random(m) * hx
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (x > 0) & np.isfinite(x) & (np.log(u) <= (lam - 1.0) * np.log(x) - omega / 2.0 * (x + 1.0 / x))
        return x[ok]

    return _collect(gen, n, propose)


def _std_gig(lam, omega, n, gen):
    """Draws with density proportional to x^(lam-1) exp(-omega/2 (x + 1/x)), lam >= 0."""
    if lam > 1.0 or omega > 1.0:
        return _rou_shift(lam, omega, n, gen)
    if omega >= min(0.5, 2.0 / 3.0 * math.sqrt(1.0 - lam)):
        return _rou_noshift(lam, omega, n, gen)
    return _rou_small(lam, omega, n, gen)


def draw_gig(p, a, b, rng, size=None):
    """Generalized inverse Gaussian draw with density ∝ x^(p-1) exp(-(a x + b/x)/2).

    ``a > 0, b > 0`` for any real ``p``; the boundary ``b = 0`` requires ``p > 0``
    (Gamma with shape ``p`` and rate ``a/2``) and ``a = 0`` requires ``p < 0``
    (inverse gamma with shape ``-p`` and scale ``b/2``).
    """
    gen = as_generator(rng)
    p, a, b = float(p), float(a), float(b)
    if not (math.isfinite(p) and math.isfinite(a) and math.isfinite(b)):
        raise DomainError(f"GIG parameters must be finite, got ({p}, {a}, {b})")
    if a < 0 or b < 0:
        raise DomainError(f"GIG needs a >= 0 and b >= 0, got a={a}, b={b}")
    n = 1 if size is None else int(np.prod(size))
    if b == 0.0:
        if not (a > 0 and p > 0):
            raise DomainError(f"GIG boundary b=0 needs a > 0 and p > 0, got a={a}, p={p}")
        out = gen.gamma(p, 2.0 / a, size=n)
    elif a == 0.0:
        if not p < 0:
            raise DomainError(f"GIG boundary a=0 needs p < 0, got p={p}")
        out = (b / 2.0) / gen.gamma(-p, 1.0, size=n)
    else:
        omega = math.sqrt(a * b)
        lam = abs(p)
        y = _std_gig(lam, omega, n, gen)
        if p < 0:
            y = 1.0 / y
        out = math.sqrt(b / a) * y
    if size is None:
        return float(out[0])
    return out.reshape(size)
