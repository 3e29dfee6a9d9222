"""The classic nonlinear growth benchmark with unknown process and observation variances."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..conjugacy import InverseGammaVariance, ProductFamily
from ..rand import Density
from .base import StateSpaceModel

_LOG_2PI = np.log(2.0 * np.pi)


def benchmark_mean(x_prev, t):
    """``x/2 + 25 x / (1 + x^2) + 8 cos(1.2 t)``."""
    x_prev = np.asarray(x_prev, dtype=float)
    return 0.5 * x_prev + 25.0 * x_prev / (1.0 + x_prev * x_prev) + 8.0 * np.cos(1.2 * np.asarray(t, dtype=float))


@njit(cache=True)
def _mean_kernel(x, t, p):
    return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * math.cos(1.2 * t)


@njit(cache=True)
def _obs_kernel(x, p):
    return x * x / 20.0


def benchmark_suffstats(x, x_prev, y, t):
    """Statistics for the two inverse-gamma channels: ``s = (e_v^2/2, e_w^2/2)``, ``r = (1/2, 1/2)``."""
    x = np.asarray(x, dtype=float)
    ev = x - benchmark_mean(x_prev, t)
    ew = np.asarray(y, dtype=float) - x * x / 20.0
    s = np.stack(np.broadcast_arrays(0.5 * ev * ev, 0.5 * ew * ew), axis=-1)
    return s, np.full(s.shape, 0.5)


class BenchmarkModel(StateSpaceModel):
    """``x_t = f(x_{t-1}, t) + v_t``, ``y_t = x_t^2 / 20 + w_t`` with IG priors on both variances.

    The initial state defaults to ``N(0, 5)``.
    """

    name = "benchmark"

    def __init__(self, alpha_v=1.0, beta_v=1.0, alpha_w=1.0, beta_w=1.0, x0_mean=0.0, x0_var=5.0):
        self.hyper = dict(alpha_v=alpha_v, beta_v=beta_v, alpha_w=alpha_w, beta_w=beta_w)
        self.x0_mean = float(x0_mean)
        self.x0_var = float(x0_var)
        self.family = ProductFamily(InverseGammaVariance("sigma2_v"), InverseGammaVariance("sigma2_w"))
        self.prior_hp = self.family.prior(
            InverseGammaVariance.prior(alpha_v, beta_v), InverseGammaVariance.prior(alpha_w, beta_w)
        )

    @property
    def kernels(self):
        """Jitted ``(f, h, params)`` for the compiled sweep."""
        return _mean_kernel, _obs_kernel, np.empty(0)

    def initial(self):
        return Density.gaussian(self.x0_mean, self.x0_var)

    def transition(self, t, x_prev, theta):
        return Density.gaussian(benchmark_mean(x_prev, t), theta["sigma2_v"])

    def observation(self, t, x, theta):
        x = np.asarray(x, dtype=float)
        return Density.gaussian(x * x / 20.0, theta["sigma2_w"])

    def step_stats(self, t, x, x_prev, y, theta_u=None):
        s, r = benchmark_suffstats(x, x_prev, y, t)
        return s, r, np.full(s.shape[:-1], -_LOG_2PI)

    def observation_scale(self, x):
        x = np.asarray(x, dtype=float)
        return x * x / 20.0

    def marginal_transition(self, t, x_prev, hp, theta_u=None):
        a = hp.nu[..., 0]
        b = hp.chi[..., 0]
        return Density.student_t(2.0 * a, benchmark_mean(x_prev, t), np.sqrt(b / a), check=False)
