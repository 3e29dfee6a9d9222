"""Density-regulated population growth on the log scale, observed with additive noise.

``log n_t = log n_{t-1} + [1, n_{t-1}^c] b + sigma_v v_t`` and ``y_t = n_t + sigma_w w_t``.
``(b, sigma_v^2)`` has a normal-inverse-gamma prior and ``sigma_w^2`` an
inverse-gamma prior; both are integrated out. The density-regulation
exponent ``c`` is the only parameter left for Metropolis-Hastings.
"""

from __future__ import annotations

import numpy as np

from ..conjugacy import InverseGammaVariance, NormalInverseGammaRegression, ProductFamily
from ..rand import Density, as_rng
from .base import StateSpaceModel

_LOG_2PI = np.log(2.0 * np.pi)


def population_step_components(n, c):
    """Regressor ``u = (1, n^c)`` of the log-growth increment."""
    n = np.asarray(n, dtype=float)
    if np.any(n <= 0):
        raise ValueError("population size must be positive")
    return np.stack(np.broadcast_arrays(np.ones_like(n), n ** float(c)), axis=-1)


def _regressors(log_n, c):
    log_n = np.asarray(log_n, dtype=float)
    with np.errstate(over="ignore"):
        return np.stack([np.ones_like(log_n), np.exp(float(c) * log_n)], axis=-1)


class PopulationModel(StateSpaceModel):
    """The latent state is ``log n_t``.

    ``x0_mean=None`` centres the initial state at ``log y_1`` once data are bound.
    """

    name = "population"
    theta_u_names = ("c",)

    def __init__(
        self,
        mu=(1.0, 1.0),
        Lambda=((1.0, 0.0), (0.0, 1.0)),
        alpha_v=2.5,
        beta_v=2.5,
        alpha_w=2.5,
        beta_w=2.5,
        sigma2_c=4.0,
        x0_mean=None,
        x0_var=1.0,
    ):
        self.hyper = dict(mu=list(mu), Lambda=[list(r) for r in Lambda], alpha_v=alpha_v, beta_v=beta_v,
                          alpha_w=alpha_w, beta_w=beta_w)
        self.sigma2_c = float(sigma2_c)
        self.x0_mean = None if x0_mean is None else float(x0_mean)
        self.x0_var = float(x0_var)
        self.nig = NormalInverseGammaRegression(2, "b", "sigma2_v")
        self.family = ProductFamily(self.nig, InverseGammaVariance("sigma2_w"))
        self.prior_hp = self.family.prior(
            self.nig.prior(mu, Lambda, alpha_v, beta_v), InverseGammaVariance.prior(alpha_w, beta_w)
        )

    def bind_data(self, y):
        if self.x0_mean is not None:
            return self
        y1 = float(np.asarray(y)[0])
        if y1 <= 0:
            raise ValueError("cannot centre the initial log-population on a non-positive first count")
        out = PopulationModel(
            sigma2_c=self.sigma2_c, x0_mean=np.log(y1), x0_var=self.x0_var,
            **{k: v for k, v in self.hyper.items()},
        )
        return out

    def _x0_mean(self):
        if self.x0_mean is None:
            raise ValueError("initial state mean unset; call bind_data(y) or pass x0_mean")
        return self.x0_mean

    def initial(self):
        return Density.gaussian(self._x0_mean(), self.x0_var)

    def transition(self, t, x_prev, theta):
        u = _regressors(x_prev, theta["c"])
        with np.errstate(invalid="ignore", over="ignore"):
            mean = np.asarray(x_prev, dtype=float) + u @ np.asarray(theta["b"], dtype=float)
        return Density.gaussian(mean, theta["sigma2_v"])

    def observation(self, t, x, theta):
        with np.errstate(over="ignore"):
            return Density.gaussian(np.exp(np.asarray(x, dtype=float)), theta["sigma2_w"])

    def step_stats(self, t, x, x_prev, y, theta_u=None):
        c = theta_u["c"]
        x = np.asarray(x, dtype=float)
        x_prev = np.asarray(x_prev, dtype=float)
        x, x_prev = np.broadcast_arrays(x, x_prev)
        with np.errstate(over="ignore", invalid="ignore"):
            s_v, r_v = self.nig.stat(x - x_prev, _regressors(x_prev, c))
            s_w, r_w = InverseGammaVariance.stat(np.asarray(y, dtype=float) - np.exp(x))
        s = np.concatenate([s_v, s_w], axis=-1)
        r = np.concatenate([r_v, r_w], axis=-1)
        return s, r, np.full(x.shape, -_LOG_2PI)

    def marginal_transition(self, t, x_prev, hp, theta_u=None):
        c = theta_u["c"]
        x_prev = np.asarray(x_prev, dtype=float)
        block = self.family.block(hp, 0)
        mu, lam, det, alpha, beta = self.nig._parts(block.chi, block.nu)
        u = _regressors(x_prev, c)
        # u' inv(Lambda) u for 2x2 Lambda
        l00, l01, l11 = lam[..., 0, 0], lam[..., 0, 1], lam[..., 1, 1]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            quad = (l11 * u[..., 0] ** 2 - 2 * l01 * u[..., 0] * u[..., 1] + l00 * u[..., 1] ** 2) / det
            loc = x_prev + np.sum(u * mu, axis=-1)
            scale = np.sqrt(beta / alpha * (1.0 + quad))
        # particles whose regressor overflowed get an infinite-scale proposal and die at weighting
        scale = np.where(np.isfinite(scale) & (scale > 0), scale, 1e300)
        loc = np.where(np.isfinite(loc), loc, 0.0)
        return Density.student_t(2.0 * alpha, loc, scale, check=False)

    def sample_prior_theta_u(self, rng):
        return {"c": float(np.sqrt(self.sigma2_c) * as_rng(rng).gen.standard_normal())}

    def observation_scale(self, x):
        with np.errstate(over="ignore"):
            return np.exp(np.asarray(x, dtype=float))

    def log_prior_theta_u(self, theta_u):
        c = float(theta_u["c"])
        return -0.5 * (_LOG_2PI + np.log(self.sigma2_c) + c * c / self.sigma2_c)
