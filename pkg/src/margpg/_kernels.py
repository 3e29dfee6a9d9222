"""Compiled per-step kernels for additive-Gaussian models with inverse-gamma variances.

The models covered have ``x_t = f(x_{t-1}, t) + v_t`` and
``y_t = h(x_t) + w_t`` with ``v_t ~ N(0, s2_v)``, ``w_t ~ N(0, s2_w)``.
``f`` and ``h`` are jitted scalar functions taking a parameter vector.
Random numbers are drawn outside the kernels from the caller's numpy
generator, in the same order as the generic sweep consumes them, so both
paths give the same particle system up to floating-point rounding.
"""

from __future__ import annotations

import functools
import math

import numpy as np
from numba import njit

_LOG_2PI = math.log(2.0 * math.pi)


@njit(cache=True)
def _normalized(logw):
    m = np.max(logw)
    w = np.exp(logw - m)
    return w / np.sum(w)


@njit(cache=True)
def _upper_bound(c, v):
    # first index with c[j] > v (numpy's searchsorted side="right"); the
    # branch-free form avoids mispredictions on random queries
    first = 0
    n = c.shape[0]
    while n > 1:
        half = n >> 1
        first = first + half if c[first + half - 1] <= v else first
        n -= half
    return first + (1 if c[first] <= v else 0)


@njit(cache=True)
def _search(W, u, out, start):
    # guide-table lookup; returns exactly what searchsorted(side="right") does
    c = np.cumsum(W)
    total = c[-1]
    n = W.shape[0]
    guide = np.empty(n + 1, dtype=np.int64)
    j = 0
    for b in range(n + 1):
        thr = b * total / n
        while j < n and c[j] <= thr:
            j += 1
        guide[b] = j
    for k in range(u.shape[0]):
        v = u[k] * total
        b = min(int(u[k] * n), n)
        while b > 0 and b * total / n > v:
            b -= 1
        j = guide[b]
        while j < n and c[j] <= v:
            j += 1
        out[start + k] = min(j, n - 1)


@njit(cache=True)
def _log_g_ig2(c0, c1, n0, n1):
    if not (c0 > 0.0 and c1 > 0.0 and n0 > 0.0 and n1 > 0.0):
        return np.nan
    return n0 * math.log(c0) - math.lgamma(n0) + n1 * math.log(c1) - math.lgamma(n1)


@njit(cache=True)
def _lgamma_memo(x, memo, k):
    # particles usually share shape parameters; reuse the last evaluation per slot
    if x != memo[k, 0]:
        memo[k, 0] = x
        memo[k, 1] = math.lgamma(x)
    return memo[k, 1]


@njit(cache=True)
def _new_memo(n):
    m = np.empty((n, 2))
    m[:, 0] = np.nan
    return m


@njit(cache=True)
def _log_g_ig2_memo(c0, c1, n0, n1, memo):
    if not (c0 > 0.0 and c1 > 0.0 and n0 > 0.0 and n1 > 0.0):
        return np.nan
    return n0 * math.log(c0) - _lgamma_memo(n0, memo, 0) + n1 * math.log(c1) - _lgamma_memo(n1, memo, 1)


@njit(cache=True)
def _pick_reference_ancestor(lw, u_as):
    m = -np.inf
    for i in range(lw.shape[0]):
        if np.isnan(lw[i]):
            lw[i] = -np.inf
        if lw[i] > m:
            m = lw[i]
    if not np.isfinite(m):
        return -1
    s = 0.0
    for i in range(lw.shape[0]):
        s += math.exp(lw[i] - m)
    lse = m + math.log(s)
    p = np.exp(lw - lse)
    c = np.cumsum(p)
    return min(_upper_bound(c, u_as * c[-1]), lw.shape[0] - 1)


@njit(cache=True)
def log_mean_exp(lw):
    m = np.max(lw)
    if not np.isfinite(m):
        return m
    return m + math.log(np.sum(np.exp(lw - m))) - math.log(lw.shape[0])


@functools.lru_cache(maxsize=None)
def kernels_for(f, h):
    """Per-step kernels specialized to the jitted model functions `f` and `h`."""

    @njit
    def select_conditional(x_last, logw, u_res, u_as, xref_t, t, s2_v, cond, anc, fp, a):
        """Resample ancestors into `a`; with `anc`, draw the reference's ancestor from the Markov ancestor weights."""
        N = x_last.shape[0]
        W = _normalized(logw)
        _search(W, u_res, a, 0)
        if cond:
            if anc:
                lw = np.empty(N)
                for i in range(N):
                    d = xref_t - f(x_last[i], t, fp)
                    lw[i] = (math.log(W[i]) if W[i] > 0 else -np.inf) - 0.5 * (_LOG_2PI + math.log(s2_v) + d * d / s2_v)
                a[N - 1] = _pick_reference_ancestor(lw, u_as)
            else:
                a[N - 1] = N - 1

    @njit
    def weight_conditional(x_last, a, z, xref_t, cond, t, y_t, s2_v, s2_w, fp, x_new, lw):
        """Bootstrap propagation and observation log-likelihood weights; returns the log mean weight."""
        N = a.shape[0]
        sd = math.sqrt(s2_v)
        for i in range(N):
            x_new[i] = f(x_last[a[i]], t, fp) + sd * z[i]
        if cond:
            x_new[N - 1] = xref_t
        c = _LOG_2PI + math.log(s2_w)
        for i in range(N):
            e = y_t - h(x_new[i], fp)
            v = -0.5 * (c + e * e / s2_w)
            lw[i] = -np.inf if np.isnan(v) else v
        return log_mean_exp(lw)

    @njit
    def select_marginal(x_last, logw, chi, nu, lgc, u_res, u_as, xref_t, y_t, t, tail_s, tail_r, cond, anc, fp, a):
        """Resample ancestors; with `anc`, draw the reference's ancestor from the parameter-marginal ancestor weights.

        Ancestors are written to `a`. Returns ``(ok, shared)``: ``ok`` is False when some live candidate
        produced invalid terminal hyperparameters, in which case the caller
        recomputes. ``shared`` is the transition-channel shape common to all
        selected ancestors, or NaN if they differ.
        """
        N = x_last.shape[0]
        W = _normalized(logw)
        _search(W, u_res, a, 0)
        ok = True
        if cond:
            if anc:
                ew = y_t - h(xref_t, fp)
                sw = 0.5 * ew * ew
                lw = np.empty(N)
                memo = _new_memo(2)
                for i in range(N):
                    lwbar = math.log(W[i]) if W[i] > 0 else -np.inf
                    d = xref_t - f(x_last[i], t, fp)
                    sv = 0.5 * d * d
                    if not (np.isfinite(lwbar) and np.isfinite(sv)):
                        lw[i] = -np.inf
                        continue
                    lgT = _log_g_ig2_memo(
                        chi[i, 0] + sv + tail_s[0], chi[i, 1] + sw + tail_s[1],
                        nu[i, 0] + 0.5 + tail_r[0], nu[i, 1] + 0.5 + tail_r[1], memo,
                    )
                    if not np.isfinite(lgT):
                        ok = False
                        lw[i] = -np.inf
                        continue
                    lw[i] = lwbar - _LOG_2PI + lgc[i, 0] + lgc[i, 1] - lgT
                if ok:
                    a[N - 1] = _pick_reference_ancestor(lw, u_as)
                else:
                    a[N - 1] = -1
            else:
                a[N - 1] = N - 1
        shared = nu[a[0], 0]
        for i in range(1, N):
            if a[i] >= 0 and nu[a[i], 0] != shared:
                shared = np.nan
                break
        return ok, shared

    @njit
    def weight_marginal(x_last, a, tdraw, chi, nu, lgc, xref_t, cond, anc, t, y_t, fp,
                        x_new, chi_new, nu_new, lgc_new, lw):
        """Marginal-bootstrap propagation, hyperparameter update, and weights.

        ``lgc[i, k]`` is channel ``k``'s log normalizer. With the marginal
        transition as proposal, the transition channel of the predictive
        cancels against the proposal density, leaving the observation
        channel's predictive ``-log(2 pi)/2 + lgc_prev[., 1] - lgc_new[., 1]``.
        The transition channel's normalizer is only needed by ancestor sampling.
        Outputs go to the trailing arrays; returns the log mean weight.
        """
        N = a.shape[0]
        memo = _new_memo(2)
        for i in range(N):
            k = a[i]
            loc = f(x_last[k], t, fp)
            x = loc + math.sqrt(chi[k, 0] / nu[k, 0]) * tdraw[i]
            if cond and i == N - 1:
                x = xref_t
            x_new[i] = x
            d = x - loc
            e = y_t - h(x, fp)
            c0 = chi[k, 0] + 0.5 * d * d
            c1 = chi[k, 1] + 0.5 * e * e
            n0 = nu[k, 0] + 0.5
            n1 = nu[k, 1] + 0.5
            chi_new[i, 0] = c0
            chi_new[i, 1] = c1
            nu_new[i, 0] = n0
            nu_new[i, 1] = n1
            lgc_new[i, 0] = n0 * math.log(c0) - _lgamma_memo(n0, memo, 0) if anc else 0.0
            g1 = n1 * math.log(c1) - _lgamma_memo(n1, memo, 1)
            lgc_new[i, 1] = g1
            v = -0.5 * _LOG_2PI + lgc[k, 1] - g1
            lw[i] = -np.inf if np.isnan(v) else v
        return log_mean_exp(lw)

    return select_conditional, weight_conditional, select_marginal, weight_marginal
