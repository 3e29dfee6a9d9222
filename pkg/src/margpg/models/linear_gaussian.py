"""Scalar linear-Gaussian SSM and its exact Kalman recursions (used as a test oracle)."""

from __future__ import annotations

import numpy as np
from numba import njit

from ..conjugacy import InverseGammaVariance, ProductFamily
from ..rand import Density, as_rng
from .base import StateSpaceModel

_LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def _mean_kernel(x, t, p):
    return p[0] * x


@njit(cache=True)
def _obs_kernel(x, p):
    return p[1] * x


class LinearGaussianModel(StateSpaceModel):
    """``x_t = a x_{t-1} + v_t``, ``y_t = c x_t + w_t``; ``a``, ``c`` known, IG priors on the variances."""

    name = "linear-gaussian"

    def __init__(self, a=0.9, c=1.0, x0_mean=0.0, x0_var=1.0, alpha_v=1.0, beta_v=1.0, alpha_w=1.0, beta_w=1.0):
        self.a = float(a)
        self.c = float(c)
        self.x0_mean = float(x0_mean)
        self.x0_var = float(x0_var)
        self.family = ProductFamily(InverseGammaVariance("sigma2_v"), InverseGammaVariance("sigma2_w"))
        self.prior_hp = self.family.prior(
            InverseGammaVariance.prior(alpha_v, beta_v), InverseGammaVariance.prior(alpha_w, beta_w)
        )

    @property
    def kernels(self):
        """Jitted ``(f, h, params)`` for the compiled sweep."""
        return _mean_kernel, _obs_kernel, np.array([self.a, self.c])

    def initial(self):
        return Density.gaussian(self.x0_mean, self.x0_var)

    def transition(self, t, x_prev, theta):
        return Density.gaussian(self.a * np.asarray(x_prev, dtype=float), theta["sigma2_v"])

    def observation(self, t, x, theta):
        return Density.gaussian(self.c * np.asarray(x, dtype=float), theta["sigma2_w"])

    def step_stats(self, t, x, x_prev, y, theta_u=None):
        x = np.asarray(x, dtype=float)
        ev = x - self.a * np.asarray(x_prev, dtype=float)
        ew = np.asarray(y, dtype=float) - self.c * x
        s = np.stack(np.broadcast_arrays(0.5 * ev * ev, 0.5 * ew * ew), axis=-1)
        return s, np.full(s.shape, 0.5), np.full(s.shape[:-1], -_LOG_2PI)

    def observation_scale(self, x):
        return self.c * np.asarray(x, dtype=float)

    def marginal_transition(self, t, x_prev, hp, theta_u=None):
        a = hp.nu[..., 0]
        b = hp.chi[..., 0]
        return Density.student_t(2.0 * a, self.a * np.asarray(x_prev, dtype=float), np.sqrt(b / a), check=False)

    def simulate(self, theta, T, rng):
        """Forward simulation; zero variances (including ``x0_var``) give the noiseless recursion."""
        q, r = float(theta["sigma2_v"]), float(theta["sigma2_w"])
        if not (q >= 0 and r >= 0 and np.isfinite(q) and np.isfinite(r)):
            raise ValueError("variances must be non-negative and finite")
        g = as_rng(rng).gen
        x = np.empty(T + 1)
        y = np.empty(T)
        x[0] = self.x0_mean + np.sqrt(self.x0_var) * g.standard_normal()
        for t in range(1, T + 1):
            x[t] = self.a * x[t - 1] + np.sqrt(q) * g.standard_normal()
            y[t - 1] = self.c * x[t] + np.sqrt(r) * g.standard_normal()
        return x, y

    # -- exact recursions --

    def kalman_filter(self, y, theta):
        """Filtered means/variances of ``x_{0:T}`` and the exact ``log p(y_{1:T} | theta)``."""
        q, r = float(theta["sigma2_v"]), float(theta["sigma2_w"])
        T = len(y)
        m = np.empty(T + 1)
        P = np.empty(T + 1)
        m[0], P[0] = self.x0_mean, self.x0_var
        logz = 0.0
        for t in range(1, T + 1):
            mp = self.a * m[t - 1]
            Pp = self.a**2 * P[t - 1] + q
            S = self.c**2 * Pp + r
            e = y[t - 1] - self.c * mp
            logz += -0.5 * (_LOG_2PI + np.log(S) + e * e / S)
            K = Pp * self.c / S
            m[t] = mp + K * e
            P[t] = (1.0 - K * self.c) * Pp
        return m, P, logz

    def kalman_smoother(self, y, theta):
        """Rauch-Tung-Striebel smoothed means and variances of ``x_{0:T}``."""
        q = float(theta["sigma2_v"])
        m, P, _ = self.kalman_filter(y, theta)
        T = len(y)
        ms, Ps = m.copy(), P.copy()
        for t in range(T - 1, -1, -1):
            Pp = self.a**2 * P[t] + q
            G = P[t] * self.a / Pp
            ms[t] = m[t] + G * (ms[t + 1] - self.a * m[t])
            Ps[t] = P[t] + G * G * (Ps[t + 1] - Pp)
        return ms, Ps

    def sample_posterior_trajectory(self, y, theta, rng):
        """Exact draw from ``p(x_{0:T} | y_{1:T}, theta)`` by forward filtering, backward sampling."""
        g = as_rng(rng).gen
        q = float(theta["sigma2_v"])
        m, P, _ = self.kalman_filter(y, theta)
        T = len(y)
        x = np.empty(T + 1)
        x[T] = m[T] + np.sqrt(P[T]) * g.standard_normal()
        for t in range(T - 1, -1, -1):
            Pp = self.a**2 * P[t] + q
            G = P[t] * self.a / Pp
            mean = m[t] + G * (x[t + 1] - self.a * m[t])
            var = P[t] - G * self.a * P[t]
            x[t] = mean + np.sqrt(var) * g.standard_normal()
        return x
