"""Streaming uncertainty quantification for per-element time series.

Maintains sample-estimated autocorrelations at a set of training lags from
streaming updates, fits an exponential correlation model, and converts the
integrated autocorrelation time into the standard error of the sample mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ACF_USE_THRESHOLD = 0.05   # lags with rho below this are log-of-noise
MIN_USABLE_LAGS = 3
TAU_INT_FLOOR = 0.5        # uncorrelated limit of the integrated time
_FIT_TOL = 1e-10
_FIT_MAXIT = 60


class TrainingLags:
    """Streaming sufficient statistics for lag-k autocorrelations.

    One value per element per update; pairs (x_{t-k}, x_t) feed per-lag
    Pearson statistics. O(K) work per element per update.
    """

    def __init__(self, n_lags: int, n_elements: int):
        if n_lags < 1 or n_elements < 1:
            raise ValueError("n_lags and n_elements must be >= 1")
        self.n_lags = n_lags
        self.n_elements = n_elements
        self.count = 0
        k, e = n_lags, n_elements
        self._ring = np.zeros((n_lags, e))
        self._n = np.zeros(k, dtype=np.int64)
        self._sx = np.zeros((k, e))
        self._sy = np.zeros((k, e))
        self._sxx = np.zeros((k, e))
        self._syy = np.zeros((k, e))
        self._sxy = np.zeros((k, e))
        # whole-series moments for mean/variance
        self._tot = np.zeros(e)
        self._tot2 = np.zeros(e)

    def update(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_elements,):
            raise ValueError(
                f"expected {self.n_elements} values, got shape {values.shape}")
        t = self.count
        n_active = min(t, self.n_lags)
        if n_active:
            ks = np.arange(1, n_active + 1)
            x = self._ring[(t - ks) % self.n_lags]  # (n_active, e)
            sl = slice(0, n_active)
            self._n[sl] += 1
            self._sx[sl] += x
            self._sy[sl] += values[None, :]
            self._sxx[sl] += x * x
            self._syy[sl] += values[None, :] ** 2
            self._sxy[sl] += x * values[None, :]
        self._ring[t % self.n_lags] = values
        self._tot += values
        self._tot2 += values * values
        self.count += 1

    def mean(self) -> np.ndarray:
        return self._tot / max(self.count, 1)

    def variance(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros(self.n_elements)
        m = self.mean()
        return np.maximum(self._tot2 / self.count - m * m, 0.0)

    def acf(self) -> np.ndarray:
        """Sample ACF estimate, shape (n_lags, n_elements); rho(0) = 1."""
        rho = np.ones((self.n_lags, self.n_elements))
        for i in range(self.n_lags):
            n = self._n[i]
            if n < 2:
                continue
            mx = self._sx[i] / n
            my = self._sy[i] / n
            vx = self._sxx[i] / n - mx * mx
            vy = self._syy[i] / n - my * my
            cov = self._sxy[i] / n - mx * my
            denom = np.sqrt(np.maximum(vx, 0.0) * np.maximum(vy, 0.0))
            # zero-variance series are perfectly correlated by convention
            rho[i] = np.where(denom > 0.0, cov / np.where(denom > 0.0, denom, 1.0), 1.0)
        return rho

    def copy(self) -> "TrainingLags":
        dup = TrainingLags(self.n_lags, self.n_elements)
        dup.count = self.count
        dup._ring = self._ring.copy()
        dup._n = self._n.copy()
        for name in ("_sx", "_sy", "_sxx", "_syy", "_sxy", "_tot", "_tot2"):
            setattr(dup, name, getattr(self, name).copy())
        return dup


@dataclass
class UQResult:
    element_id: int
    mean: float
    variance: float
    tau_int: float
    uncertainty: float
    fit_residual: float


def _fit_tau(lags: np.ndarray, rho: np.ndarray) -> tuple[float, float]:
    """Fit rho(k) = exp(-k/tau); returns (tau, residual rms).

    Log-linear least squares through the origin seeds a Gauss-Newton
    refinement on the exponential itself; iteration count depends on the
    data. Returns (nan, inf) when no lag is usable.
    """
    usable = rho > ACF_USE_THRESHOLD
    if usable.sum() >= MIN_USABLE_LAGS:
        k = lags[usable]
        y = np.log(rho[usable])
        slope = float(k @ y) / float(k @ k)  # = -1/tau
    elif rho.size and rho[0] > ACF_USE_THRESHOLD:
        slope = math.log(rho[0]) / lags[0]
        k = lags[:1]
        y = np.log(rho[:1])
    else:
        return float("nan"), float("inf")
    slope = min(slope, -1e-12)
    for _ in range(_FIT_MAXIT):
        model = np.exp(slope * k)
        r = rho[usable] if usable.sum() >= MIN_USABLE_LAGS else rho[:1]
        resid = r - model
        jac = k * model
        denom = float(jac @ jac)
        if denom == 0.0:
            break
        delta = float(jac @ resid) / denom
        slope_new = min(slope + delta, -1e-12)
        if abs(slope_new - slope) < _FIT_TOL * abs(slope):
            slope = slope_new
            break
        slope = slope_new
    tau = -1.0 / slope
    model = np.exp(slope * k)
    r = rho[usable] if usable.sum() >= MIN_USABLE_LAGS else rho[:1]
    residual = float(np.sqrt(np.mean((r - model) ** 2)))
    return tau, residual


def tau_integrated(tau: float) -> float:
    """Closed-form sum_{k>=0} exp(-k/tau) - 1/2, floored at 1/2."""
    if not math.isfinite(tau) or tau <= 0:
        return TAU_INT_FLOOR
    tau_int = 1.0 / (1.0 - math.exp(-1.0 / tau)) - 0.5
    return max(tau_int, TAU_INT_FLOOR)


def estimate(lags: TrainingLags) -> list[UQResult]:
    """Per-element model fit and sample-mean uncertainty."""
    if lags.count == 0 or int(lags._n.min()) < 10:
        raise ValueError("every lag needs at least 10 samples before estimation")
    rho = lags.acf()
    mean = lags.mean()
    var = lags.variance()
    t_samples = lags.count
    k = np.arange(1, lags.n_lags + 1, dtype=float)
    results = []
    for e in range(lags.n_elements):
        tau, residual = _fit_tau(k, rho[:, e])
        tau_int = tau_integrated(tau)
        uncertainty = math.sqrt(var[e] * 2.0 * tau_int / t_samples)
        results.append(UQResult(element_id=e, mean=float(mean[e]),
                                variance=float(var[e]), tau_int=tau_int,
                                uncertainty=uncertainty, fit_residual=residual))
    return results


def write_uq_csv(path, results: list[UQResult]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("element_id,mean,variance,tau_int,uncertainty,fit_residual\n")
        for r in results:
            fh.write(f"{r.element_id},{r.mean!r},{r.variance!r},{r.tau_int!r},"
                     f"{r.uncertainty!r},{r.fit_residual!r}\n")
