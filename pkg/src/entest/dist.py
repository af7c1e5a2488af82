"""Tail probabilities for the null distributions used by the base tests.

Every function here is pure and accepts either a scalar or an array.  Tail
probabilities are clamped into ``[P_MIN, 1]`` so that downstream ``log``
transforms stay finite; the Cauchy transform treats 1 as ``P_MAX``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import erfc, gammaincc, gammainc

from .errors import DomainError, NumericalError

P_MIN = 1e-320
P_MAX = float(np.nextafter(1.0, 0.0))

# 1/sqrt(2) split into a double and its rounding error.
_RSQRT2_HI = 0.7071067811865476
_RSQRT2_LO = -4.833646656726457e-17
_TWO_OVER_SQRT_PI = 1.1283791670955126
_SPLITTER = 134217729.0  # 2**27 + 1


def _finite(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _out(arr, scalar):
    return float(arr) if scalar else arr


def clamp_p(p):
    """Clamp probabilities into ``[P_MIN, 1]``."""
    return np.clip(p, P_MIN, 1.0)


def _two_prod(a, b):
    # Dekker's exact product: a*b == p + err.
    p = a * b
    c = _SPLITTER * a
    ah = c - (c - a)
    al = a - ah
    c = _SPLITTER * b
    bh = c - (c - b)
    bl = b - bh
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def normal_sf(x):
    """Upper tail ``P(N(0,1) > x)``.

    Uses ``erfc`` with a first-order correction for the rounding of
    ``x / sqrt(2)``, which keeps the relative error near 1e-15 deep into
    the tail.
    """
    scalar = np.ndim(x) == 0
    x = _finite(x)
    ax = np.abs(x)
    z, e = _two_prod(ax, _RSQRT2_HI)
    e = e + ax * _RSQRT2_LO
    with np.errstate(under="ignore"):
        upper = 0.5 * (erfc(z) - _TWO_OVER_SQRT_PI * np.exp(-z * z) * e)
    out = np.where(x >= 0, upper, 0.5 * erfc(x * _RSQRT2_HI))
    return _out(clamp_p(out), scalar)


def two_sided_normal_p(t):
    """Two-sided p-value ``2 P(N(0,1) > |t|)``."""
    scalar = np.ndim(t) == 0
    t = _finite(t, "t")
    p = 2.0 * np.asarray(normal_sf(np.abs(t)))
    return _out(clamp_p(p), scalar)


def chisq_sf(x, df):
    """Upper tail of the chi-squared distribution with ``df`` degrees of freedom."""
    scalar = np.ndim(x) == 0
    x = _finite(x)
    if np.any(x < 0):
        raise DomainError("chisq_sf requires x >= 0")
    if not np.all(np.asarray(df) > 0):
        raise DomainError("df must be positive")
    return _out(clamp_p(gammaincc(0.5 * np.asarray(df, float), 0.5 * x)), scalar)


def chisq_cdf(x, df):
    scalar = np.ndim(x) == 0
    x = _finite(x)
    if np.any(x < 0):
        raise DomainError("chisq_cdf requires x >= 0")
    return _out(clamp_p(gammainc(0.5 * np.asarray(df, float), 0.5 * x)), scalar)


def cauchy_sf(t):
    """Upper tail of the standard Cauchy distribution.

    For ``t > 0`` this is evaluated as ``arctan(1/t)/pi``, which avoids the
    cancellation in ``1/2 - arctan(t)/pi`` and reduces to ``1/(pi t)`` for
    large ``t``.
    """
    scalar = np.ndim(t) == 0
    t = _finite(t, "t")
    with np.errstate(divide="ignore"):
        pos = np.arctan(1.0 / t) / np.pi
    out = np.where(t > 0, pos, 0.5 - np.arctan(t) / np.pi)
    return _out(clamp_p(out), scalar)


# --------------------------------------------------------------------------
# Weighted chi-squared mixtures
# --------------------------------------------------------------------------

_DROP_RATIO = 1e-12
# Below x / lambda_max = 1e-32 the lower tail is under sqrt(2e-32 / pi) < 1e-16,
# so the upper tail rounds to 1.
_TINY_X = 1e-32
_EQUAL_RTOL = 1e-12


@dataclass(frozen=True)
class MixtureSpec:
    """Weights of ``sum_j lambda_j chi2_j(1)``; stored nonincreasing."""

    eigenvalues: tuple

    def __init__(self, eigenvalues: Iterable[float]):
        lam = np.asarray(list(np.ravel(eigenvalues)), dtype=float)
        if lam.size == 0 or not np.all(np.isfinite(lam)):
            raise DomainError("eigenvalues must be a nonempty finite list")
        top = lam.max()
        if top <= 0:
            raise DomainError("at least one eigenvalue must be positive")
        if np.any(lam < -1e-10 * top):
            raise DomainError("eigenvalues must be nonnegative")
        lam = np.sort(np.clip(lam, 0.0, None))[::-1]
        object.__setattr__(self, "eigenvalues", tuple(float(v) for v in lam))

    @property
    def effective(self) -> np.ndarray:
        """Eigenvalues above ``1e-12 * max``; the rest are treated as noise."""
        lam = np.asarray(self.eigenvalues)
        return lam[lam > _DROP_RATIO * lam[0]]

    def cumulant(self, k: int) -> float:
        lam = self.effective
        return float(2 ** (k - 1) * math.factorial(k - 1) * np.sum(lam**k))

    @property
    def mean(self) -> float:
        return float(np.sum(self.effective))

    def is_scaled_chisq(self) -> bool:
        lam = self.effective
        return bool(np.all(np.abs(lam - lam[0]) <= _EQUAL_RTOL * lam[0]))


class TailProbability(float):
    """A float carrying the method that produced it."""

    method: str
    error: float

    def __new__(cls, value, method, error=0.0):
        obj = super().__new__(cls, value)
        obj.method = method
        obj.error = float(error)
        return obj

    def __repr__(self):
        return f"TailProbability({float(self)!r}, method={self.method!r})"


def _cgf(lam, s):
    return -0.5 * np.sum(np.log1p(-2.0 * np.multiply.outer(s, lam)), axis=-1)


def _cgf2(lam, s):
    return 2.0 * np.sum(lam**2 / (1.0 - 2.0 * np.multiply.outer(s, lam)) ** 2, axis=-1)


def _saddlepoints(lam, x):
    """Solve K'(s) = x for each x; ``lam`` is normalized so max(lam) == 1."""
    mean = lam.sum()
    up = x > mean
    lo = np.where(up, 0.0, -lam.size / (2.0 * np.maximum(x, 1e-300)))
    hi = np.where(up, 0.5 - 0.5 / np.maximum(x, 1.0), 0.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = np.sum(lam / (1.0 - 2.0 * np.multiply.outer(mid, lam)), axis=-1) - x
        lo = np.where(fm < 0, mid, lo)
        hi = np.where(fm < 0, hi, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(np.abs(mid), 1e-3)):
            break
    return 0.5 * (lo + hi)


def _contour(lam, x, h0=0.25, levels=5, rtol=1e-6, full=False):
    """Bromwich inversion on a hyperbolic contour through the saddlepoint.

    Returns ``(sf, cdf, ok)``.  For points above the mean the contour is
    placed at the saddlepoint to the right of the pole at 0 and the integral
    is the upper tail itself; below the mean it is placed left of the pole
    and the integral is the lower tail.  Either way the small side is
    obtained with relative accuracy, so neither tail suffers cancellation.
    """
    x = np.asarray(x, dtype=float)
    s_hat = _saddlepoints(lam, x)
    sigma0 = 1.0 / math.sqrt(2.0 * np.sum(lam**2))
    tau = min(1.5 * sigma0, 0.25)
    upper = s_hat > tau
    c = np.where(upper, s_hat, np.minimum(s_hat, -1.5 * sigma0))
    sig = 1.0 / np.sqrt(_cgf2(lam, c))
    kc = _cgf(lam, c)
    log_base = kc - c * x
    kappa = 1.0
    reach = np.maximum(kappa * sig * x, 1e-300)
    u_max = float(np.minimum(np.arccosh(1.0 + 60.0 / reach) + 1.0, 40.0).max())

    def panel(u):
        ch, sh = np.cosh(u), np.sinh(u)
        s = c[:, None] + kappa * sig[:, None] * (ch - 1.0) + 1j * sig[:, None] * sh
        ds = kappa * sig[:, None] * sh + 1j * sig[:, None] * ch
        # log(1 - 2 lam s) split into modulus and argument: much faster than
        # the complex log and exact on the principal branch used here
        re = 1.0 - 2.0 * np.multiply.outer(s.real, lam)
        im = -2.0 * np.multiply.outer(s.imag, lam)
        logm = -0.25 * np.log(re * re + im * im).sum(axis=-1) - 0.5j * np.arctan2(im, re).sum(axis=-1)
        with np.errstate(under="ignore", over="ignore"):
            f = np.exp(logm - s * x[:, None] - log_base[:, None]) / s * ds
        return f.imag

    # coarse probe for where the integrand has died out
    probe = np.arange(0.0, u_max + 1.0, 1.0)
    mag = np.abs(panel(probe))
    live = mag > 1e-18 * mag.max(axis=1, keepdims=True)
    last = int(np.max(np.where(live, np.arange(probe.size), 0)))
    u_cut = float(probe[min(last + 1, probe.size - 1)])

    h = h0
    u = np.arange(0.0, u_cut + h, h)
    f = panel(u)
    f[:, 0] *= 0.5
    acc = f.sum(axis=1)
    est = h * acc / math.pi
    ok = np.zeros(x.shape, dtype=bool)
    for _ in range(levels):
        h /= 2.0
        acc = acc + panel(np.arange(h, u_cut + h, 2 * h)).sum(axis=1)
        new = h * acc / math.pi
        ok = np.abs(new - est) <= rtol * np.abs(new)
        est = new
        if ok.all():
            break
    signed = np.where(upper, est, -est)
    ok &= np.isfinite(signed) & (signed > 0)
    with np.errstate(divide="ignore", invalid="ignore", under="ignore", over="ignore"):
        log_small = log_base + np.log(signed)
        small = np.exp(log_small)
    sf = np.where(upper, small, 1.0 - small)
    cdf = np.where(upper, 1.0 - small, small)
    if full:
        return sf, cdf, ok, log_small, upper
    return sf, cdf, ok


def _fourier(lam, x):
    """Vertical-line inversion with QUADPACK's Fourier-weighted rule (fallback)."""
    s_hat = float(_saddlepoints(lam, np.array([x]))[0])
    upper = s_hat >= 0
    c = max(s_hat, 0.05) if upper else min(s_hat, -0.05)
    kc = float(_cgf(lam, c))

    def f(y):
        s = complex(c, y)
        return np.exp(-0.5 * np.sum(np.log1p(-2.0 * lam * s)) - kc) / s

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        a, ea = integrate.quad(lambda y: f(y).real, 0, np.inf, weight="cos", wvar=x, limlst=200)
        b, eb = integrate.quad(lambda y: f(y).imag, 0, np.inf, weight="sin", wvar=x, limlst=200)
    small = (a + b) / math.pi * math.exp(kc - c * x)
    err = (ea + eb) / math.pi * math.exp(kc - c * x)
    if upper:
        return small, err
    return 1.0 + small, err


def _lugannani_rice(lam, x):
    s_hat = float(_saddlepoints(lam, np.array([x]))[0])
    if abs(s_hat) < 1e-4:
        raise NumericalError("saddlepoint too close to the mean", {"s_hat": s_hat})
    k = float(_cgf(lam, s_hat))
    w = math.copysign(math.sqrt(max(2.0 * (s_hat * x - k), 0.0)), s_hat)
    u = s_hat * math.sqrt(float(_cgf2(lam, s_hat)))
    phi = math.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    return float(normal_sf(w)) + phi * (1.0 / u - 1.0 / w)


def _moment_match(lam, x):
    # Three-cumulant scaled chi-squared: Q ~ a * chi2(nu) + b.
    c1, c2, c3 = (float(np.sum(lam**k)) for k in (1, 2, 3))
    a = c3 / c2
    nu = c2**3 / c3**2
    b = c1 - a * nu
    return float(gammaincc(0.5 * nu, 0.5 * max((x - b) / a, 0.0)))


def mixture_sf(x: float, spec: MixtureSpec) -> TailProbability:
    """Upper tail ``P(sum_j lambda_j chi2_j(1) > x)``.

    Tries, in order: the closed form when all weights are equal, contour
    integration, Fourier-weighted integration, the Lugannani-Rice
    saddlepoint approximation and a three-cumulant scaled chi-squared.  The
    returned float records which one was used in ``.method``.
    """
    x = float(_finite(x))
    if x < 0:
        raise DomainError("mixture_sf requires x >= 0")
    if not isinstance(spec, MixtureSpec):
        spec = MixtureSpec(spec)
    lam = spec.effective
    top = lam[0]
    if x <= _TINY_X * top:
        return TailProbability(1.0, "exact")
    if spec.is_scaled_chisq():
        return TailProbability(chisq_sf(x / top, lam.size), "exact-chisq")
    lam = lam / top
    xs = x / top
    diagnostics = {}
    sf, _, ok = _contour(lam, np.array([xs]))
    if ok[0] and 0 < sf[0] <= 1:
        return TailProbability(float(clamp_p(sf[0])), "contour")
    diagnostics["contour"] = float(sf[0])
    try:
        val, err = _fourier(lam, xs)
        if 0 < val <= 1 and err <= 1e-6 * val:
            return TailProbability(float(clamp_p(val)), "fourier", err)
        diagnostics["fourier"] = (val, err)
    except (integrate.IntegrationWarning, FloatingPointError, OverflowError) as exc:
        diagnostics["fourier"] = repr(exc)
    try:
        val = _lugannani_rice(lam, xs)
        if 0 < val <= 1:
            return TailProbability(float(clamp_p(val)), "saddlepoint")
        diagnostics["saddlepoint"] = val
    except (NumericalError, ValueError, OverflowError) as exc:
        diagnostics["saddlepoint"] = repr(exc)
    val = _moment_match(lam, xs)
    if 0 <= val <= 1:
        return TailProbability(float(clamp_p(val)), "moment-match")
    diagnostics["moment-match"] = val
    raise NumericalError("mixture tail evaluation failed", diagnostics)


def mixture_sf_many(x, spec: MixtureSpec) -> np.ndarray:
    """Vectorized :func:`mixture_sf` (contour integration with per-point fallback)."""
    x = _finite(x)
    if np.any(x < 0):
        raise DomainError("mixture_sf requires x >= 0")
    if not isinstance(spec, MixtureSpec):
        spec = MixtureSpec(spec)
    flat = np.ravel(x)
    out = np.empty(flat.shape)
    lam = spec.effective
    top = lam[0]
    if spec.is_scaled_chisq():
        return np.asarray(chisq_sf(x / top, lam.size), dtype=float)
    zero = flat <= _TINY_X * top
    out[zero] = 1.0
    idx = np.flatnonzero(~zero)
    for chunk in np.array_split(idx, max(1, idx.size // 256)):
        if chunk.size == 0:
            continue
        sf, _, ok = _contour(lam / top, flat[chunk] / top)
        out[chunk] = sf
        for j in chunk[~ok]:
            out[j] = mixture_sf(flat[j], spec)
    return clamp_p(out).reshape(np.shape(x))


def _log_tails(lam, xs):
    """``(log sf, log cdf)`` at ``xs`` for normalized weights, both accurate."""
    sf, cdf, ok, log_small, upper = _contour(lam, xs, full=True)
    if not ok.all():
        spec = MixtureSpec(lam)
        for j in np.flatnonzero(~ok):
            v = float(mixture_sf(xs[j], spec))
            upper[j] = v < 0.5
            log_small[j] = math.log(v if upper[j] else 1.0 - v)
    with np.errstate(under="ignore"):
        rest = np.log1p(-np.exp(log_small))
    return np.where(upper, log_small, rest), np.where(upper, rest, log_small)


class MixtureTail:
    """Fast batch evaluator of a mixture's upper tail.

    Log tail probabilities are tabulated once (lower tail against ``log x``
    below the mean, upper tail against ``x`` above it) and interpolated with
    cubic splines.  Points outside the table are evaluated directly.  Meant
    for simulations that need millions of evaluations against one mixture.
    """

    def __init__(self, spec: MixtureSpec, nodes: int = 128, depth: float = 745.0):
        if not isinstance(spec, MixtureSpec):
            spec = MixtureSpec(spec)
        self.spec = spec
        lam = spec.effective
        self._scale = float(lam[0])
        self._exact = spec.is_scaled_chisq()
        if self._exact:
            return
        lam = lam / self._scale
        self._lam = lam
        mean = float(lam.sum())
        self._lo = mean * 1e-4
        self._mid = mean
        # Chernoff bound at s = 1/4 puts the upper tail below exp(-depth)
        self._hi = (float(_cgf(lam, 0.25)) + depth) / 0.25
        t = np.linspace(math.log(self._lo), math.log(self._mid), nodes)
        # geometric nodes resolve the bend just above the mean, linear ones
        # the nearly straight far tail
        xu = np.unique(np.concatenate([
            np.geomspace(self._mid, self._hi, nodes),
            np.linspace(self._mid, self._hi, nodes // 2),
        ]))
        _, log_cdf = _log_tails(lam, np.exp(t))
        log_sf, _ = _log_tails(lam, xu)
        self._low = CubicSpline(t, log_cdf)
        self._high = CubicSpline(xu, log_sf)

    def log_sf(self, x) -> np.ndarray:
        """Natural log of the upper tail, without clamping."""
        x = np.asarray(x, dtype=float)
        if self._exact:
            with np.errstate(divide="ignore"):
                return np.log(gammaincc(0.5 * len(self.spec.effective), 0.5 * x / self._scale))
        xs = x / self._scale
        out = np.empty(xs.shape)
        low = (xs >= self._lo) & (xs < self._mid)
        high = (xs >= self._mid) & (xs <= self._hi)
        with np.errstate(under="ignore"):
            out[low] = np.log1p(-np.exp(self._low(np.log(xs[low]))))
        out[high] = self._high(xs[high])
        out[xs <= _TINY_X] = 0.0
        rest = ~(low | high) & (xs > _TINY_X)
        if rest.any():
            out[rest], _ = _log_tails(self._lam, xs[rest])
        return out

    def sf(self, x) -> np.ndarray:
        with np.errstate(under="ignore"):
            return clamp_p(np.exp(self.log_sf(x)))
