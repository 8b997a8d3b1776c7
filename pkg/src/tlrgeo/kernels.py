"""Covariance kernels: Matérn, parsimonious bivariate Matérn, Tukey g-and-h.

All kernels accept scalar or array distances and return float64 arrays of
the same shape (a Python float for scalar input).
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .core import BivariateMaternParams, InvalidArgument, MaternParams, TghParams

__all__ = [
    "KERNELS",
    "bessel_k",
    "matern",
    "matern_closed_form",
    "matern_fn",
    "has_closed_form",
    "bivariate_matern",
    "tgh_transform",
]

KERNELS = ("matern", "bivariate-matern", "tgh-matern")

_EPS = 1e-16
_MAXIT = 10_000

# Taylor coefficients of 1/Gamma(z) = sum_k c_k z^k, k = 1..16
_RGAMMA = (
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
)


def _temme_gammas(mu: float):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2.

    gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu), gam2 = their mean.
    Near mu = 0 the difference cancels, so it is summed from the series.
    """
    if abs(mu) < 0.1:
        m2 = mu * mu
        odd = sum(_RGAMMA[k] * m2 ** ((k - 1) // 2) for k in range(1, len(_RGAMMA), 2))
        even = sum(_RGAMMA[k] * m2 ** (k // 2) for k in range(0, len(_RGAMMA), 2))
        gam1 = -odd
        gam2 = even
        return gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1
    gampl = 1.0 / math.gamma(1.0 + mu)
    gammi = 1.0 / math.gamma(1.0 - mu)
    return (gammi - gampl) / (2.0 * mu), 0.5 * (gammi + gampl), gampl, gammi


@numba.njit(cache=True, nogil=True)
def _k_series(mu, x, gam1, gam2, gampl, gammi):
    """K_mu(x), K_{mu+1}(x) for 0 < x < 2 by Temme's series."""
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -math.log(x2)
    e = mu * d
    fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
    ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
    total = ff
    e = math.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    dd = x2 * x2
    total1 = p
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu * mu)
        c *= dd / i
        p /= i - mu
        q /= i + mu
        delta = c * ff
        total += delta
        total1 += c * (p - i * ff)
        if abs(delta) < abs(total) * _EPS:
            break
    return total, total1 * 2.0 / x


@numba.njit(cache=True, nogil=True)
def _k_cf2(mu, x):
    """K_mu(x), K_{mu+1}(x) for x >= 2 by Steed's continued fraction."""
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, _MAXIT):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels) < abs(s) * _EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) * math.exp(-x) / s
    return kmu, kmu * (mu + x + 0.5 - h) / x


@numba.njit(cache=True, nogil=True)
def _bessel_k_loop(nu, x, gam1, gam2, gampl, gammi, out):
    m = int(nu + 0.5)
    mu = nu - m
    for k in range(x.size):
        xk = x[k]
        if xk < 2.0:
            kmu, k1 = _k_series(mu, xk, gam1, gam2, gampl, gammi)
        else:
            kmu, k1 = _k_cf2(mu, xk)
        two_over_x = 2.0 / xk
        for i in range(1, m + 1):
            kmu, k1 = k1, (mu + i) * two_over_x * k1 + kmu
        out[k] = kmu


def bessel_k(nu: float, x):
    """Modified Bessel function of the second kind, K_nu(x), for real nu.

    Temme's method: the order is split as ``nu = mu + m`` with
    ``|mu| <= 1/2``; K_mu and K_{mu+1} come from a power series (x < 2) or
    Steed's continued fraction (x >= 2), then forward recurrence in the
    order reaches ``nu``. Vectorised over ``x``.

    Raises
    ------
    InvalidArgument
        If any ``x <= 0`` (K_nu diverges at the origin).
    """
    nu = abs(float(nu))  # K_{-nu} = K_nu
    if not math.isfinite(nu):
        raise InvalidArgument("order must be finite")
    scalar = np.ndim(x) == 0
    xa = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64))).ravel()
    if xa.size and not np.all(xa > 0):
        raise InvalidArgument("bessel_k is only defined for x > 0")
    mu = nu - int(nu + 0.5)
    out = np.empty_like(xa)
    _bessel_k_loop(nu, xa, *_temme_gammas(mu), out)
    return float(out[0]) if scalar else out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Matérn
# ---------------------------------------------------------------------------


def _as_distance(d):
    da = np.asarray(d, dtype=np.float64)
    if da.size and (np.any(da < 0) or not np.all(np.isfinite(da))):
        raise InvalidArgument("distances must be finite and non-negative")
    return da


@numba.njit(cache=True, nogil=True)
def _scaled_matern_loop(nu, r, logc, gam1, gam2, gampl, gammi, out):
    m = int(nu + 0.5)
    mu = nu - m
    for k in range(r.size):
        rk = r[k]
        if rk == 0.0:
            out[k] = 1.0
            continue
        if rk < 2.0:
            kmu, k1 = _k_series(mu, rk, gam1, gam2, gampl, gammi)
        else:
            kmu, k1 = _k_cf2(mu, rk)
        two_over_x = 2.0 / rk
        for i in range(1, m + 1):
            kmu, k1 = k1, (mu + i) * two_over_x * k1 + kmu
        out[k] = math.exp(logc + nu * math.log(rk)) * kmu if kmu > 0.0 else 0.0


def _scaled_matern(nu: float, r: np.ndarray) -> np.ndarray:
    """r^nu K_nu(r) / (Gamma(nu) 2^(nu-1)), with value 1 at r = 0."""
    flat = np.ascontiguousarray(r, dtype=np.float64).ravel()
    out = np.empty_like(flat)
    logc = -math.lgamma(nu) - (nu - 1.0) * math.log(2.0)
    _scaled_matern_loop(nu, flat, logc, *_temme_gammas(nu - int(nu + 0.5)), out)
    return out.reshape(np.shape(r))


def matern(d, params: MaternParams):
    """Matérn covariance evaluated through K_nu at distance(s) ``d``.

    ``C(0) = sigma2`` is returned directly instead of the 0 * inf form.
    """
    if not isinstance(params, MaternParams):
        raise InvalidArgument("matern expects MaternParams")
    da = _as_distance(d)
    out = params.sigma2 * _scaled_matern(params.nu, np.atleast_1d(da) / params.beta)
    return float(out[0]) if da.ndim == 0 else out.reshape(da.shape)


_CLOSED_FORMS = {
    0.5: lambda r: np.exp(-r),
    1.5: lambda r: (1.0 + r) * np.exp(-r),
    2.5: lambda r: (1.0 + r + r * r / 3.0) * np.exp(-r),
}


def matern_closed_form(d, params: MaternParams):
    """Exponential-polynomial form of the Matérn kernel for nu in {1/2, 3/2, 5/2}."""
    form = _CLOSED_FORMS.get(params.nu)
    if form is None:
        raise InvalidArgument(f"no closed form for nu={params.nu}")
    da = _as_distance(d)
    out = params.sigma2 * form(da / params.beta)
    return float(out) if da.ndim == 0 else out


def has_closed_form(params: MaternParams) -> bool:
    return params.nu in _CLOSED_FORMS


def matern_fn(params: MaternParams):
    """Fastest exact evaluator for ``params``: the closed form when the
    smoothness is 1/2, 3/2 or 5/2, the Bessel route otherwise."""
    if params.nu in _CLOSED_FORMS:
        form = _CLOSED_FORMS[params.nu]
        return lambda d: params.sigma2 * form(np.asarray(d, dtype=np.float64) / params.beta)
    return lambda d: matern(d, params)


# ---------------------------------------------------------------------------
# Bivariate Matérn
# ---------------------------------------------------------------------------


def bivariate_matern(d, i: int, j: int, params: BivariateMaternParams):
    """Cross-covariance ``C_ij(d)`` of the parsimonious bivariate Matérn.

    Marginals (``i == j``) use unit colocated correlation, so ``C_ii(0)`` is
    ``sigma_ii^2``. The cross term uses smoothness ``(nu11 + nu22) / 2`` and
    the colocated correlation ``params.rho12``.
    """
    if i not in (1, 2) or j not in (1, 2):
        raise InvalidArgument(f"components must be 1 or 2, got ({i}, {j})")
    if not isinstance(params, BivariateMaternParams):
        raise InvalidArgument("bivariate_matern expects BivariateMaternParams")
    sig = {1: params.sigma11, 2: params.sigma22}
    if i == j:
        nu = params.nu11 if i == 1 else params.nu22
        scale = sig[i] ** 2
    else:
        nu = params.nu12
        scale = params.rho12 * params.sigma11 * params.sigma22
    da = _as_distance(d)
    out = scale * _scaled_matern(nu, np.atleast_1d(da) / params.a)
    return float(out[0]) if da.ndim == 0 else out.reshape(da.shape)


# ---------------------------------------------------------------------------
# Tukey g-and-h
# ---------------------------------------------------------------------------


def tgh_transform(z, params: TghParams):
    """``xi + omega * tau_gh(z)`` with ``tau_gh(z) = (exp(g z) - 1)/g * exp(h z^2/2)``.

    For ``g == 0`` the first factor is its limit ``z``.
    """
    za = np.asarray(z, dtype=np.float64)
    g, h = params.g, params.h
    if g == 0.0:
        first = za
    else:
        first = np.expm1(g * za) / g
    out = params.xi + params.omega * first * np.exp(0.5 * h * za * za)
    return float(out) if za.ndim == 0 else out
