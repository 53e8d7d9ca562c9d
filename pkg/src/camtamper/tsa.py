"""Time-series tools for residual series.

Stationarity transforms and tests (ADF, KPSS), ACF/PACF, conditional-sum-of-squares
ARIMA estimation, AIC order selection on the exact Gaussian likelihood, one-step in-sample prediction and the
range-normalised RMSE used to score predictability.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import linalg, optimize, signal

ADF_CRITICAL_5PCT = -2.861
KPSS_CRITICAL_5PCT = 0.463
EPS_LOG = 1e-6


class NumericalError(ArithmeticError):
    """Degenerate input for a numerical routine (singular design, zero variance)."""


@dataclass
class Series:
    values: np.ndarray
    origin_feature: str | None = None
    transform_log: float | None = None
    transform_diff: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("series must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("series contains non-finite values")

    def __len__(self) -> int:
        return len(self.values)


def _values(s) -> np.ndarray:
    if isinstance(s, Series):
        return s.values
    x = np.asarray(s, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


# -- transforms ------------------------------------------------------------------


def difference(s, d: int = 1) -> Series:
    x = _values(s)
    if d < 0:
        raise ValueError("difference order must be >= 0")
    if len(x) <= d:
        raise ValueError(f"series of length {len(x)} too short for d={d}")
    base = s if isinstance(s, Series) else Series(x)
    return Series(np.diff(x, n=d) if d else x.copy(), base.origin_feature, base.transform_log, base.transform_diff + d)


def log_offset(s) -> tuple[np.ndarray, float]:
    """``ln(x + min_f + EPS_LOG)`` with ``min_f = |min x|`` when the series dips below zero."""
    x = _values(s)
    lo = float(x.min())
    min_f = abs(lo) if lo < 0 else 0.0
    return np.log(x + min_f + EPS_LOG), min_f


def log_lag_transform(s) -> Series:
    """Offset log followed by a first-order lag difference."""
    x = _values(s)
    if len(x) < 3:
        raise ValueError("log_lag_transform needs at least 3 values")
    y, min_f = log_offset(x)
    origin = s.origin_feature if isinstance(s, Series) else None
    return Series(np.diff(y), origin, min_f, 1)


# -- correlation -------------------------------------------------------------------


def acf(s, max_lag: int) -> np.ndarray:
    """Sample autocorrelation with the biased (divide-by-n) autocovariance."""
    x = _values(s)
    n = len(x)
    if max_lag < 0 or n <= max_lag:
        raise ValueError("series must be longer than max_lag")
    z = x - x.mean()
    g0 = z @ z / n
    if g0 <= 0:
        raise NumericalError("zero-variance series")
    gam = np.array([z[h:] @ z[: n - h] / n for h in range(max_lag + 1)])
    return gam / g0


def durbin_levinson(rho: np.ndarray) -> np.ndarray:
    """Partial autocorrelations ``pacf[0..m]`` from autocorrelations ``rho[0..m]``."""
    m = len(rho) - 1
    out = np.empty(m + 1)
    out[0] = 1.0
    if m == 0:
        return out
    phi = np.zeros(m + 1)
    phi[1] = rho[1]
    v = 1.0 - rho[1] ** 2
    out[1] = rho[1]
    for k in range(2, m + 1):
        a = (rho[k] - phi[1:k] @ rho[k - 1 : 0 : -1]) / v
        prev = phi[1:k].copy()
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = a
        v *= 1.0 - a * a
        out[k] = a
    return out


def pacf(s, max_lag: int) -> np.ndarray:
    return durbin_levinson(acf(s, max_lag))


# -- unit root / stationarity tests --------------------------------------------------


class TestResult(NamedTuple):
    statistic: float
    flag: bool


def schwert_lags(n: int) -> int:
    return int(math.floor(12 * (n / 100) ** 0.25))


def adf_test(s, lags: int | None = None) -> TestResult:
    """Augmented Dickey-Fuller with constant, no trend.

    Returns the t-ratio of the lagged level and whether the unit root is rejected
    at 5% (``statistic < -2.861``).
    """
    y = _values(s)
    n = len(y)
    if n < 30:
        raise ValueError("adf_test needs at least 30 observations")
    L = schwert_lags(n) if lags is None else lags
    dy = np.diff(y)
    rows = len(dy) - L
    if rows <= L + 3:
        raise NumericalError("too few observations for the lag length")
    cols = [np.ones(rows), y[L:-1]]
    cols += [dy[L - i : len(dy) - i] for i in range(1, L + 1)]
    X = np.column_stack(cols)
    target = dy[L:]
    beta, _, rank, _ = np.linalg.lstsq(X, target, rcond=None)
    if rank < X.shape[1]:
        raise NumericalError("singular ADF design matrix")
    resid = target - X @ beta
    dof = rows - X.shape[1]
    s2 = resid @ resid / dof
    if s2 <= 0:
        raise NumericalError("zero residual variance in ADF regression")
    cov = s2 * np.linalg.inv(X.T @ X)
    stat = float(beta[1] / math.sqrt(cov[1, 1]))
    return TestResult(stat, stat < ADF_CRITICAL_5PCT)


def kpss_test(s, lags: int | None = None) -> TestResult:
    """Level-stationarity KPSS with a Bartlett-kernel Newey-West variance.

    Returns the statistic and whether stationarity is accepted at 5% (``statistic < 0.463``).
    """
    y = _values(s)
    n = len(y)
    if n < 30:
        raise ValueError("kpss_test needs at least 30 observations")
    L = int(math.floor(4 * (n / 100) ** 0.25)) if lags is None else lags
    e = y - y.mean()
    lrv = e @ e / n
    if lrv <= 0:
        raise NumericalError("zero-variance series")
    for j in range(1, L + 1):
        lrv += 2.0 * (1.0 - j / (L + 1.0)) * (e[j:] @ e[:-j]) / n
    partial = np.cumsum(e)
    stat = float(partial @ partial / (n * n * lrv))
    return TestResult(stat, stat < KPSS_CRITICAL_5PCT)


@dataclass
class StationarityReport:
    adf_stat: float
    adf_reject_unit_root: bool
    kpss_stat: float
    kpss_accept_stationary: bool


def stationarity_report(s) -> StationarityReport:
    a = adf_test(s)
    k = kpss_test(s)
    return StationarityReport(a.statistic, a.flag, k.statistic, k.flag)


# -- ARIMA ---------------------------------------------------------------------------


class ArimaOrder(NamedTuple):
    p: int
    d: int
    q: int


@dataclass
class ArimaFit:
    order: ArimaOrder
    phi: np.ndarray
    theta: np.ndarray
    intercept: float
    sigma2: float
    loglik: float
    aic: float
    converged: bool
    n_cond: int = 0
    iterations: int = field(default=0, compare=False)

    @property
    def n_params(self) -> int:
        return self.order.p + self.order.q + 2

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "phi": [float(v) for v in self.phi],
            "theta": [float(v) for v in self.theta],
            "intercept": float(self.intercept),
            "sigma2": float(self.sigma2),
            "loglik": float(self.loglik),
            "aic": float(self.aic),
            "converged": bool(self.converged),
            "n_cond": int(self.n_cond),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArimaFit":
        return cls(
            ArimaOrder(*d["order"]),
            np.asarray(d["phi"], dtype=np.float64),
            np.asarray(d["theta"], dtype=np.float64),
            float(d["intercept"]),
            float(d["sigma2"]),
            float(d["loglik"]),
            float(d["aic"]),
            bool(d["converged"]),
            int(d.get("n_cond", 0)),
        )


def aic(fit: ArimaFit) -> float:
    """``2k - 2 loglik`` with ``k = p + q + 2`` (coefficients, intercept, variance)."""
    return 2.0 * fit.n_params - 2.0 * fit.loglik


def pacf_to_coefficients(r) -> np.ndarray:
    """Map partial autocorrelations in (-1, 1) to stationary AR coefficients."""
    return np.array(_pacf_to_coefficients_list(list(map(float, r))), dtype=np.float64)


def _pacf_to_coefficients_list(a: list[float]) -> list[float]:
    # plain floats: orders are tiny and this runs inside the optimiser loop
    for k in range(1, len(a)):
        rk = a[k]
        head = a[:k]
        a[:k] = [head[j] - rk * head[k - 1 - j] for j in range(k)]
    return a


def coefficients_to_pacf(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pacf_to_coefficients` (step-down recursion)."""
    a = np.array(a, dtype=np.float64)
    r = np.empty_like(a)
    for k in range(len(a) - 1, -1, -1):
        r[k] = a[k]
        if k:
            denom = 1.0 - r[k] ** 2
            a[:k] = (a[:k] + r[k] * a[:k][::-1]) / denom
    return r


def _unpack(params: np.ndarray, p: int, q: int) -> tuple[float, list[float], list[float]]:
    t = np.tanh(params[1:]).tolist()
    phi = _pacf_to_coefficients_list(t[:p])
    theta = [-v for v in _pacf_to_coefficients_list(t[p : p + q])]
    return float(params[0]), phi, theta


def css_residuals(x: np.ndarray, mu: float, phi: np.ndarray, theta: np.ndarray, ncond: int | None = None) -> np.ndarray:
    """Innovations for ``t >= ncond`` (default ``p``), conditioning on the values before
    and taking pre-sample shocks as zero."""
    p = len(phi)
    c = p if ncond is None else ncond
    if c < p:
        raise ValueError("ncond must be at least the AR order")
    w = x - mu
    if p:
        a = np.convolve(w, np.array([1.0, *(-v for v in phi)]))[c : len(w)]
    else:
        a = w[c:]
    if len(theta):
        return signal.lfilter([1.0], np.array([1.0, *theta]), a)
    return a


def gaussian_loglik(sse: float, n: int) -> float:
    sigma2 = sse / n
    return -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)


def _stationary_covariance(T: np.ndarray, Q: np.ndarray) -> np.ndarray:
    # AR roots close to the unit circle make the Kronecker system ill-conditioned and
    # scipy warns; the large-variance answer is still the right start, and the filter
    # below rejects a non-positive one.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        P = linalg.solve_discrete_lyapunov(T, Q)
    if not np.all(np.isfinite(P)):
        raise NumericalError("stationary state covariance is not finite")
    return 0.5 * (P + P.T)


def exact_loglik(x: np.ndarray, mu: float, phi, theta) -> float:
    """Exact Gaussian log-likelihood of ARMA(p, q) with the innovation variance profiled out.

    Kalman filter on the Harvey state-space form, started from the stationary state
    covariance. Unlike the conditional sum of squares it charges for the start-up
    transient, so nearly cancelling AR/MA root pairs on the unit circle gain nothing
    from the zero pre-sample shocks.
    """
    y = np.asarray(x, dtype=np.float64) - mu
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    p, q = len(phi), len(theta)
    n = len(y)
    if p == 0 and q == 0:
        return gaussian_loglik(float(y @ y), n)
    r = max(p, q + 1)
    T = np.zeros((r, r))
    T[:p, 0] = phi
    T[:-1, 1:] = np.eye(r - 1)
    R = np.zeros(r)
    R[0] = 1.0
    R[1 : q + 1] = theta
    Q = np.outer(R, R)
    P = _stationary_covariance(T, Q)
    a = np.zeros(r)
    v = np.empty(n)
    F = np.empty(n)
    steady = False
    for t in range(n):
        f = P[0, 0]
        if not f > 0:
            raise NumericalError("non-positive innovation variance in the Kalman filter")
        vt = y[t] - a[0]
        v[t] = vt
        F[t] = f
        K = (T @ P[:, 0]) / f
        a = T @ a + K * vt
        if not steady:
            P_next = T @ P @ T.T + Q - np.outer(K, K) * f
            steady = float(np.max(np.abs(P_next - P))) < 1e-13
            P = P_next
    s2 = float(np.mean(v * v / F))
    return -0.5 * n * (math.log(2 * math.pi * s2) + 1.0) - 0.5 * float(np.sum(np.log(F)))


def fit_arima(s, order: ArimaOrder | tuple, maxiter: int = 500, gtol: float = 1e-6,
              ncond: int | None = None) -> ArimaFit:
    """Fit ARMA(p, q) with mean to an already-differenced series by conditional sum of squares.

    Coefficients are optimised in an unconstrained space (tanh of partial
    autocorrelations) so every fit is stationary and invertible. ``order.d`` is only
    recorded. ``ncond`` (default ``p``) is the number of leading values conditioned
    on; give every candidate the same ``ncond`` when comparing AICs. ``loglik`` (and
    so ``aic``) is the exact Gaussian likelihood of the values after the first
    ``ncond`` at the CSS estimates.
    """
    order = ArimaOrder(*order)
    p, d, q = order
    if min(order) < 0:
        raise ValueError("orders must be non-negative")
    x = _values(s)
    n = len(x)
    if n < 10 * (p + q + 1):
        raise ValueError(f"series of length {n} too short for order {tuple(order)}")

    loc = x.mean()
    scale = x.std()
    if scale <= 0:
        raise NumericalError("zero-variance series")
    z = (x - loc) / scale
    c = p if ncond is None else int(ncond)
    if c < p:
        raise ValueError("ncond must be at least p")
    n_eff = n - c

    if p == 0 and q == 0:
        sse = float(z[c:] @ z[c:]) * scale**2
        mu, phi, theta, conv, nit = loc, np.zeros(0), np.zeros(0), True, 0
    else:
        def objective(params):
            m, ph, th = _unpack(params, p, q)
            e = css_residuals(z, m, ph, th, c)
            return 0.5 * math.log(max(e @ e / n_eff, 1e-300))

        x0 = np.zeros(1 + p + q)
        res = optimize.minimize(objective, x0, method="BFGS", options={"maxiter": maxiter, "gtol": gtol})
        params = res.x
        grad = optimize.approx_fprime(params, objective, 1.5e-8)
        gnorm = float(np.linalg.norm(grad, np.inf))
        # BFGS stops with "precision loss" once finite-difference noise dominates; accept
        # those when the gradient is still numerically flat.
        conv = bool(res.success or (res.status == 2 and gnorm < 1e-4)) and res.nit < maxiter
        nit = int(res.nit)
        mz, phi_l, theta_l = _unpack(params, p, q)
        phi, theta = np.array(phi_l, dtype=np.float64), np.array(theta_l, dtype=np.float64)
        e = css_residuals(z, mz, phi, theta, c)
        sse = float(e @ e) * scale**2
        mu = loc + scale * mz
    if p == 0 and q == 0 and c:
        # mean over the conditioned span keeps the intercept at the CSS optimum
        mu = float(x[c:].mean())
        sse = float(((x[c:] - mu) ** 2).sum())
    loglik = exact_loglik(x[c:], mu, phi, theta) if p or q else gaussian_loglik(sse, n_eff)
    fit = ArimaFit(order, phi, theta, float(mu), sse / n_eff, loglik, 0.0, conv, c, nit)
    fit.aic = aic(fit)
    return fit


def _fit_or_none(args):
    x, order, ncond = args
    try:
        return fit_arima(x, order, ncond=ncond)
    except (ValueError, NumericalError, FloatingPointError):
        return None


def fit_grid(s, p_max: int = 6, q_max: int = 6, d: int = 1, executor: Executor | None = None) -> dict[ArimaOrder, ArimaFit | None]:
    """Fit every ``(p, d, q)`` with ``p <= p_max``, ``q <= q_max``; failed fits map to ``None``.

    All candidates condition on the first ``p_max`` values so their AICs share a sample.
    """
    x = difference(s, d).values if d else _values(s)
    orders = [ArimaOrder(p, d, q) for p in range(p_max + 1) for q in range(q_max + 1)]
    jobs = [(x, o, p_max) for o in orders]
    if executor is None:
        results = map(_fit_or_none, jobs)
    else:
        results = executor.map(_fit_or_none, jobs)
    return dict(zip(orders, results))


def best_fit(fits: dict[ArimaOrder, ArimaFit | None]) -> tuple[ArimaOrder, ArimaFit]:
    ok = [f for f in fits.values() if f is not None and f.converged and np.isfinite(f.aic)]
    if not ok:
        raise NumericalError("every candidate ARIMA fit failed")
    best = min(ok, key=lambda f: (f.aic, f.order.p + f.order.q, f.order.p))
    return best.order, best


def select_order(s, p_max: int = 6, q_max: int = 6, d: int = 1, executor: Executor | None = None) -> tuple[ArimaOrder, ArimaFit]:
    """Minimum-AIC order over the grid; ties go to fewer terms, then fewer AR terms."""
    return best_fit(fit_grid(s, p_max, q_max, d, executor))


def forecast_insample(fit: ArimaFit, s, window: int = 1000) -> np.ndarray:
    """One-step-ahead predictions for the last ``window`` points of ``s``.

    ``s`` is the series the model was fitted to (already differenced). Each prediction
    conditions on every observation before it.
    """
    x = _values(s)
    c = max(fit.n_cond, fit.order.p)
    if window < 1 or window > len(x) - c:
        raise ValueError(f"window {window} too large for series of length {len(x)} conditioned on {c}")
    e = css_residuals(x, fit.intercept, fit.phi, fit.theta, c)
    return (x[c:] - e)[-window:]


def simulate_arima(order: ArimaOrder | tuple, phi=(), theta=(), n: int = 1000, sigma: float = 1.0,
                   mean: float = 0.0, seed=None, burn: int = 500) -> np.ndarray:
    """Gaussian ARIMA sample path of length ``n``; ``mean`` is the mean of the differenced process."""
    p, d, q = ArimaOrder(*order)
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if len(phi) != p or len(theta) != q:
        raise ValueError("coefficient counts do not match the order")
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, sigma, n + burn)
    w = signal.lfilter(np.r_[1.0, theta], np.r_[1.0, -phi], e)[burn:] + mean
    for _ in range(d):
        w = np.cumsum(w)
    return w


def polynomial_root_moduli(coefs: np.ndarray, sign: float) -> np.ndarray:
    """Root moduli of ``1 + sign * sum(c_i z^i)``."""
    c = np.asarray(coefs, dtype=np.float64)
    if len(c) == 0 or not np.any(c):
        return np.array([np.inf])
    # roots of the monic reciprocal polynomial are the inverses of the wanted roots,
    # which stays well conditioned when the highest coefficient is tiny
    w = np.abs(np.roots(np.r_[1.0, sign * c]))
    with np.errstate(divide="ignore"):
        return 1.0 / w


# -- scoring -------------------------------------------------------------------------


def srmse(actual, predicted) -> float:
    """RMSE divided by the range of ``actual``; NaN when ``actual`` is constant."""
    a = np.asarray(actual, dtype=np.float64)
    b = np.asarray(predicted, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValueError("srmse needs equal-length, non-empty sequences")
    span = a.max() - a.min()
    if span == 0:
        return float("nan")
    return float(np.sqrt(np.mean((a - b) ** 2)) / span)
