"""Chain post-processing: autocorrelation, update frequency, ESS and summaries.

Every function works on in-memory arrays. Burn-in is removed by the caller,
typically with :meth:`margpg.samplers.Chain.after_burn_in` or `drop_burn_in`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)


@dataclass(frozen=True)
class AcfResult:
    """Sample autocorrelation at lags ``0..K`` with Bartlett standard errors."""

    lags: np.ndarray
    acf: np.ndarray
    se: np.ndarray

    @property
    def max_lag(self) -> int:
        return int(self.lags[-1])

    def band(self, z: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
        return self.acf - z * self.se, self.acf + z * self.se


@dataclass(frozen=True)
class UpdateFrequency:
    """Per-timestep fraction of iterations in which the state changed."""

    freq: np.ndarray

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.freq))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    # all lags at once via a zero-padded FFT, biased (divide by M)
    M = len(x)
    d = x - x.mean()
    n = 1 << int(np.ceil(np.log2(2 * M)))
    f = np.fft.rfft(d, n)
    return np.fft.irfft(f * np.conj(f), n)[:M] / M


def _check_series(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a one-dimensional series")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")
    return x


def acf(series, max_lag: int) -> AcfResult:
    """Sample autocorrelation function.

    Uses the biased estimator ``c_k / c_0`` with ``c_k = sum_t (x_t - xbar)(x_{t+k} - xbar) / M``,
    which keeps the sequence positive semidefinite and ``|acf[k]| <= 1``.

    Parameters
    ----------
    series : array_like, shape (M,)
    max_lag : int
        Largest lag, ``1 <= max_lag < M``.

    Returns
    -------
    AcfResult
        ``se[k] = sqrt((1 + 2 sum_{j<k} acf[j]^2) / M)`` (Bartlett), ``se[0] = 0``.

    Raises
    ------
    ValueError
        For a constant series or an out-of-range lag.
    """
    x = _check_series(series)
    M = len(x)
    max_lag = int(max_lag)
    if not 1 <= max_lag < M:
        raise ValueError(f"need 1 <= max_lag < M (got max_lag={max_lag}, M={M})")
    if np.ptp(x) == 0.0:
        raise ValueError("autocorrelation is undefined for a constant series")
    c = _autocovariance(x)[: max_lag + 1]
    if c[0] <= 0.0:
        raise ValueError("autocorrelation is undefined for a constant series")
    r = np.clip(c / c[0], -1.0, 1.0)
    r[0] = 1.0
    se = np.zeros_like(r)
    se[1:] = np.sqrt((1.0 + 2.0 * np.concatenate(([0.0], np.cumsum(r[1:-1] ** 2)))) / M)
    return AcfResult(lags=np.arange(max_lag + 1), acf=r, se=se)


def update_frequency(trajectories) -> UpdateFrequency:
    """Fraction of consecutive iterations in which each ``x_t`` changed (exact inequality).

    Parameters
    ----------
    trajectories : array_like, shape (M, T+1)
        One stored trajectory per iteration, burn-in already removed.
    """
    X = np.asarray(trajectories)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need an (M, T+1) array with M >= 2")
    return UpdateFrequency(freq=np.mean(X[1:] != X[:-1], axis=0))


def integrated_autocorr_time(series) -> float:
    """``1 + 2 sum_k rho_k``, truncated by Geyer's initial positive sequence."""
    x = _check_series(series)
    if np.ptp(x) == 0.0:
        raise ValueError("autocorrelation is undefined for a constant series")
    c = _autocovariance(x)
    rho = c / c[0]
    M = len(rho) - (len(rho) % 2)
    pairs = rho[0:M:2] + rho[1:M:2]
    nonpos = np.flatnonzero(pairs <= 0.0)
    k = nonpos[0] if nonpos.size else len(pairs)
    return float(max(2.0 * pairs[:k].sum() - 1.0, 1.0 / len(x)))


def ess(series) -> float:
    """Effective sample size ``M / tau`` with Geyer's initial positive sequence truncation."""
    x = np.asarray(series, dtype=float)
    return float(len(x) / integrated_autocorr_time(x))


def weighted_ess(weights) -> float:
    """Kish effective sample size ``1 / sum w_i^2`` of normalized importance weights."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    return float(1.0 / np.sum(w * w))


def batch_means_se(series, n_batches: int | None = None) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means.

    The default uses ``floor(sqrt(M))`` batches of equal size; a trailing
    remainder is dropped.
    """
    x = _check_series(series)
    M = len(x)
    b = int(n_batches) if n_batches is not None else int(np.sqrt(M))
    if b < 2 or M // b < 1:
        raise ValueError("need at least two non-empty batches")
    size = M // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(b))


def weighted_quantiles(x, weights, q) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    xs = np.asarray(x, dtype=float)[order]
    cw = np.cumsum(np.asarray(weights, dtype=float)[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(q), side="left")
    return xs[np.minimum(idx, len(xs) - 1)]


def summarize_series(series, weights=None) -> dict:
    """Mean, variance, quantiles, ESS and Monte Carlo standard error of one series.

    With `weights` (importance sampling), moments and quantiles are weighted,
    ESS is Kish's, and the standard error is the delta-method one.
    """
    x = _check_series(series)
    if weights is None:
        out = {"mean": float(x.mean()), "variance": float(x.var(ddof=1)) if len(x) > 1 else 0.0}
        q = np.quantile(x, QUANTILES)
        try:
            out["ess"] = ess(x)
        except ValueError:
            out["ess"] = float("nan")
        try:
            out["mcse"] = batch_means_se(x)
        except ValueError:
            out["mcse"] = float("nan")
    else:
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        mu = float(np.sum(w * x))
        out = {"mean": mu, "variance": float(np.sum(w * (x - mu) ** 2))}
        q = weighted_quantiles(x, w, QUANTILES)
        out["ess"] = weighted_ess(w)
        out["mcse"] = float(np.sqrt(np.sum(w * w * (x - mu) ** 2)))
    out["quantiles"] = {f"{p:g}": float(v) for p, v in zip(QUANTILES, q)}
    return out


def summarize(chain) -> dict:
    """`summarize_series` for every scalar parameter of a `Chain`, plus acceptance rate and an all-rejected flag if present."""
    out = {name: summarize_series(v, chain.weights) for name, v in chain.scalar_series().items()}
    if chain.accepted is not None and len(chain.accepted):
        out["acceptance_rate"] = float(np.mean(chain.accepted))
        out["all_rejected"] = not bool(np.any(chain.accepted))
    return out


def histogram(series, bins=50, weights=None, range=None) -> np.ndarray:
    """Normalized histogram as a table with columns ``bin_left, bin_right, density``."""
    x = _check_series(series)
    dens, edges = np.histogram(x, bins=bins, range=range, weights=weights, density=True)
    return np.column_stack([edges[:-1], edges[1:], dens])


def drop_burn_in(arr, burn_in: int):
    """Rows of `arr` after the first `burn_in` iterations."""
    burn_in = int(burn_in)
    if burn_in < 0 or burn_in >= len(arr):
        raise ValueError(f"burn-in {burn_in} leaves no draws out of {len(arr)}")
    return arr[burn_in:]
