"""Single-compartment epidemic count model with under-reporting.

The latent incidence ``x_t`` follows a binomial chain with known dynamics,
``x_t ~ Binomial(P, 1 - (1 - eps) exp(-R x_{t-1} / P))``, and each case is
reported independently: ``y_t ~ Binomial(x_t, rho)`` with ``rho ~ Beta(a, b)``.
Only ``rho`` is unknown, and it is integrated out via the beta-binomial
predictive.
"""

from __future__ import annotations

import numpy as np

from ..conjugacy import BetaBinomial, ProductFamily
from ..rand import Density, binomial_logpmf, log_binom_coef
from .base import StateSpaceModel


class EpidemicModel(StateSpaceModel):
    name = "epidemic"
    discrete_state = True

    def __init__(self, population=1000, R=1.5, eps=0.01, x0_prob=0.01, a=1.0, b=1.0):
        self.population = int(population)
        self.R = float(R)
        self.eps = float(eps)
        self.x0_prob = float(x0_prob)
        self.hyper = dict(a=a, b=b)
        self.family = ProductFamily(BetaBinomial("rho"))
        self.prior_hp = self.family.prior(BetaBinomial.prior(a, b))

    def infection_prob(self, x_prev):
        x_prev = np.asarray(x_prev, dtype=float)
        return 1.0 - (1.0 - self.eps) * np.exp(-self.R * x_prev / self.population)

    def initial(self):
        return Density.binomial(self.population, self.x0_prob)

    def transition(self, t, x_prev, theta=None):
        return Density.binomial(self.population, self.infection_prob(x_prev), check=False)

    def observation(self, t, x, theta):
        return Density.binomial(np.asarray(x), theta["rho"], check=False)

    def step_stats(self, t, x, x_prev, y, theta_u=None):
        x, x_prev, y = np.broadcast_arrays(
            np.asarray(x, dtype=float), np.asarray(x_prev, dtype=float), np.asarray(y, dtype=float)
        )
        # y > x leaves the support; the statistic is clamped so hyperparameters stay valid
        # and the -inf base measure kills the particle
        k = np.minimum(y, x)
        s, r = BetaBinomial.stat(k, x)
        lh = binomial_logpmf(x, self.population, self.infection_prob(x_prev)) + log_binom_coef(x, y)
        return s, r, lh

    def marginal_transition(self, t, x_prev, hp, theta_u=None):
        return self.transition(t, x_prev)


def beta_binomial_logpmf(k, n, a, b):
    """Log-pmf of the beta-binomial distribution."""
    from scipy.special import betaln

    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    return log_binom_coef(n, k) + betaln(k + a, n - k + b) - betaln(a, b)
