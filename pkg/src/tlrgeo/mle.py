"""Gaussian log-likelihood through the TLR pipeline and its maximization.

Evaluating ``loglik`` assembles the covariance matrix tile by tile,
compresses it, factorizes it in TLR format, then combines the
log-determinant and the forward solve:

    l(theta) = -n/2 log(2 pi) - sum_i log L_ii - 1/2 ||y||^2,  L y = z.

Estimates are found with nlopt's BOBYQA (bound-constrained,
derivative-free) on the logarithms of the parameters.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import nlopt
import numpy as np

from .core import (
    FactorizationError,
    InvalidArgument,
    LocationSet,
    MaternParams,
    OptimizationError,
    apply_permutation,
    generate_uniform_locations,
)
from .covgen import build_covariance, dense_cholesky, simulate_field
from .tlr import TlrMatrix, compress_covariance
from .tlr_linalg import logdet, tlr_potrf, tlr_trsv

__all__ = [
    "loglik",
    "tlr_loglik",
    "dense_loglik",
    "identifiable_f",
    "OptimizerConfig",
    "OptimizeResult",
    "MleResult",
    "maximize",
    "fit_matern",
    "EstimationReport",
    "run_replicates",
    "REPORT_COLUMNS",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


def _as_obs(z, n: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (n,):
        raise InvalidArgument(f"observation vector has shape {z.shape}, expected ({n},)")
    if not np.all(np.isfinite(z)):
        raise InvalidArgument("observations must be finite")
    return z


def tlr_loglik(a: TlrMatrix, z, threads: int = 1) -> float:
    """Log-likelihood of ``z`` under an already compressed covariance ``a``."""
    z = _as_obs(z, a.n)
    chol = tlr_potrf(a, threads=threads)
    y = tlr_trsv(chol, z)
    return -0.5 * a.n * _LOG_2PI - 0.5 * logdet(chol) - 0.5 * float(y @ y)


def loglik(theta: MaternParams, locs: LocationSet, z, nb: int, epsilon: float, threads: int = 1) -> float:
    """Matérn log-likelihood of ``z`` observed at ``locs`` (already ordered).

    Raises
    ------
    FactorizationError
        If the compressed covariance matrix is not numerically positive
        definite.
    """
    z = _as_obs(z, locs.n)
    a = compress_covariance(locs, "matern", theta, nb=min(nb, locs.n), epsilon=epsilon, threads=threads)
    return tlr_loglik(a, z, threads=threads)


def dense_loglik(theta: MaternParams, locs: LocationSet, z) -> float:
    """Same quantity as :func:`loglik` with a dense Cholesky factorization."""
    z = _as_obs(z, locs.n)
    cov = build_covariance(locs, "matern", theta).to_dense()
    chol = dense_cholesky(cov)
    y = np.linalg.solve(np.tril(chol), z)  # general solve keeps this independent of the TLR path
    return -0.5 * locs.n * _LOG_2PI - float(np.sum(np.log(np.diag(chol)))) - 0.5 * float(y @ y)


def identifiable_f(theta: MaternParams) -> float:
    """``sigma2 * beta^(-2 nu)``, the combination identifiable under infill asymptotics."""
    return theta.sigma2 * theta.beta ** (-2.0 * theta.nu)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Box, starting point and stopping rule for :func:`maximize`.

    The defaults describe the Matérn parameters ``(sigma2, beta, nu)``.
    """

    lower: tuple = (0.01, 0.001, 0.1)
    upper: tuple = (100.0, 3.0, 5.0)
    x0: tuple = (1.0, 0.1, 0.5)
    ftol_rel: float = 1e-9
    xtol_rel: float = 1e-8
    max_evals: int = 2000

    def __post_init__(self):
        lo, hi, x0 = (np.asarray(v, dtype=np.float64) for v in (self.lower, self.upper, self.x0))
        if not (lo.shape == hi.shape == x0.shape and lo.ndim == 1 and lo.size >= 1):
            raise InvalidArgument("lower, upper and x0 must be vectors of one common length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidArgument("bounds must be finite")
        if not np.all(lo < hi):
            raise InvalidArgument("each lower bound must be below its upper bound")
        if not np.all((lo <= x0) & (x0 <= hi)):
            raise InvalidArgument("initial point must lie inside the bounds")
        if not self.ftol_rel > 0 or self.max_evals < 1:
            raise InvalidArgument("tolerance must be positive and max_evals >= 1")
        for name in ("lower", "upper", "x0"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def dim(self) -> int:
        return len(self.x0)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    message: str
    failed_evaluations: int = 0


_CONVERGED = {
    nlopt.SUCCESS: "success",
    nlopt.FTOL_REACHED: "relative objective change below tolerance",
    nlopt.XTOL_REACHED: "relative step below tolerance",
    nlopt.STOPVAL_REACHED: "stop value reached",
}


def maximize(objective: Callable[[np.ndarray], float], config: OptimizerConfig) -> OptimizeResult:
    """Maximize ``objective`` over the box of ``config`` with BOBYQA.

    Evaluations that raise :class:`~tlrgeo.core.TlrError`, or return a
    non-finite value, count as failures. BOBYQA builds quadratic models
    and cannot digest ``-inf``, so a failure is reported to it as a value
    well below the worst seen so far; it is never the returned optimum.
    ``iterations`` is the number of objective evaluations.

    Raises
    ------
    OptimizationError
        If no evaluation succeeded.
    """
    from .core import TlrError

    best = {"x": None, "f": -math.inf, "worst": None, "fails": 0, "n": 0}

    def wrapped(x, grad):
        best["n"] += 1
        try:
            f = float(objective(np.array(x)))
        except (TlrError, np.linalg.LinAlgError) as exc:
            log.debug("evaluation at %s failed: %s", x, exc)
            f = -math.inf
        if not math.isfinite(f):
            best["fails"] += 1
            w = best["worst"]
            return -1e10 if w is None else w - 10.0 * (1.0 + abs(w))
        if f > best["f"]:
            best["x"], best["f"] = np.array(x), f
        best["worst"] = f if best["worst"] is None else min(best["worst"], f)
        return f

    opt = nlopt.opt(nlopt.LN_BOBYQA, config.dim)
    opt.set_lower_bounds(list(config.lower))
    opt.set_upper_bounds(list(config.upper))
    opt.set_max_objective(wrapped)
    opt.set_ftol_rel(config.ftol_rel)
    opt.set_xtol_rel(config.xtol_rel)
    opt.set_maxeval(config.max_evals)
    try:
        opt.optimize(list(config.x0))
        code = opt.last_optimize_result()
        converged = code in _CONVERGED
        message = _CONVERGED.get(code, "evaluation budget exhausted" if code == nlopt.MAXEVAL_REACHED else f"nlopt status {code}")
    except nlopt.RoundoffLimited:
        # raised once the trust region cannot shrink further; the best point is converged
        converged, message = True, "stopped at the roundoff limit"
    if best["x"] is None:
        raise OptimizationError(f"no successful objective evaluation in {best['n']} attempts")
    return OptimizeResult(best["x"], best["f"], best["n"], converged, message, best["fails"])


@dataclass
class MleResult:
    theta_hat: MaternParams
    loglik_at_opt: float
    iterations: int
    converged: bool
    f_hat: float
    message: str = ""

    def __post_init__(self):
        expected = identifiable_f(self.theta_hat)
        assert math.isclose(self.f_hat, expected, rel_tol=1e-12), (self.f_hat, expected)


def fit_matern(
    locs: LocationSet,
    z,
    nb: int,
    epsilon: float = 1e-7,
    config: OptimizerConfig | None = None,
    threads: int = 1,
    dense: bool = False,
) -> MleResult:
    """Maximum-likelihood estimate of ``(sigma2, beta, nu)``.

    The search runs on ``log(theta)`` inside the log of the bounds, so every
    candidate is positive. ``dense=True`` swaps in the dense likelihood.
    """
    config = config or OptimizerConfig()
    if config.dim != 3 or min(config.lower) <= 0:
        raise InvalidArgument("Matérn fits need three strictly positive bounds")
    z = _as_obs(z, locs.n)
    log_cfg = OptimizerConfig(
        lower=tuple(map(math.log, config.lower)),
        upper=tuple(map(math.log, config.upper)),
        x0=tuple(map(math.log, config.x0)),
        ftol_rel=config.ftol_rel,
        xtol_rel=config.xtol_rel,
        max_evals=config.max_evals,
    )

    def objective(x):
        theta = MaternParams(*np.exp(x))
        if dense:
            return dense_loglik(theta, locs, z)
        return loglik(theta, locs, z, nb, epsilon, threads=threads)

    res = maximize(objective, log_cfg)
    # clip guards exp(log(b)) landing a hair outside b
    theta = MaternParams(*np.clip(np.exp(res.x), config.lower, config.upper))
    return MleResult(theta, res.fun, res.iterations, res.converged, identifiable_f(theta), res.message)


# ---------------------------------------------------------------------------
# Replicated experiments
# ---------------------------------------------------------------------------

REPORT_COLUMNS = (
    "replicate", "seed", "ordering", "sigma2_hat", "beta_hat", "nu_hat",
    "f_hat", "iterations", "converged", "seconds",
)
_SUMMARY_COLUMNS = ("sigma2_hat", "beta_hat", "nu_hat", "f_hat", "iterations")


@dataclass
class EstimationReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def column(self, name: str, ordering: str | None = None) -> np.ndarray:
        return np.array([r[name] for r in self.rows if ordering is None or r["ordering"] == ordering], dtype=float)

    def orderings(self) -> list[str]:
        return list(dict.fromkeys(r["ordering"] for r in self.rows))

    def summary(self) -> dict:
        """Five-number summaries (min, q1, median, q3, max) per ordering and column."""
        out = {}
        for o in self.orderings():
            out[o] = {}
            for c in _SUMMARY_COLUMNS:
                v = self.column(c, o)
                v = v[np.isfinite(v)]
                out[o][c] = [float(q) for q in np.quantile(v, [0, 0.25, 0.5, 0.75, 1])] if v.size else None
        return out

    def median(self, name: str, ordering: str | None = None) -> float:
        v = self.column(name, ordering)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if v.size else math.nan

    def write_csv(self, path: str | Path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v) for k, v in r.items()})


def run_replicates(
    *,
    n: int,
    nb: int,
    theta: MaternParams,
    replicates: int,
    seed_base: int = 0,
    orderings: Sequence[str] = ("hilbert",),
    epsilon: float = 1e-7,
    config: OptimizerConfig | None = None,
    threads: int = 1,
    metadata: dict | None = None,
) -> EstimationReport:
    """Simulate ``replicates`` datasets and fit each one under every ordering.

    Replicate ``r`` uses seed ``seed_base + r`` for both its locations and
    its field, so every ordering sees the same data. A replicate that
    fails is recorded with NaN estimates and ``converged = False``.
    """
    from .ordering import order_locations

    if replicates < 1:
        raise InvalidArgument("need at least one replicate")
    config = config or OptimizerConfig()
    report = EstimationReport(metadata={
        "true_theta": theta.as_dict(),
        "true_f": identifiable_f(theta),
        "n": n, "nb": nb, "epsilon": epsilon, "replicates": replicates,
        "seed_base": seed_base, "orderings": list(orderings),
        "optimizer": {**asdict(config), "algorithm": "BOBYQA"},
        **(metadata or {}),
    })
    for r in range(replicates):
        seed = seed_base + r
        locs = generate_uniform_locations(n, seed)
        z = simulate_field(locs, "matern", theta, seed)
        for method in orderings:
            perm = order_locations(locs, method)
            t0 = time.perf_counter()
            try:
                res = fit_matern(apply_permutation(locs, perm), z[perm.map], nb, epsilon, config, threads)
            except (OptimizationError, FactorizationError, InvalidArgument) as exc:
                report.failures.append({"replicate": r, "seed": seed, "ordering": method, "error": str(exc)})
                log.warning("replicate %d (%s) failed: %s", r, method, exc)
                est, it, conv = (math.nan,) * 4, 0, False
            else:
                th = res.theta_hat
                est, it, conv = (th.sigma2, th.beta, th.nu, res.f_hat), res.iterations, res.converged
            report.rows.append(dict(zip(REPORT_COLUMNS, (
                r, seed, method, *est, it, conv, round(time.perf_counter() - t0, 3),
            ))))
    return report
