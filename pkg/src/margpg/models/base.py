from __future__ import annotations

import numpy as np

from ..conjugacy import HyperParams, ProductFamily, SuffStat, predictive_logpdf
from ..rand import Density, as_rng


class StateSpaceModel:
    """Binding of a scalar-state SSM to its conjugate parameter blocks.

    Subclasses provide the forward densities (for simulation and the
    parameter-conditional samplers) and the per-step statistics
    ``(s_t, r_t, log h_t)`` (for the parameter-marginal samplers). All
    methods are vectorized over particles: ``x`` and ``x_prev`` broadcast.

    ``theta`` is a dict holding every parameter; ``theta_u`` holds only the
    parameters that are not integrated out (empty for fully conjugate models).
    """

    name = "model"
    family: ProductFamily
    prior_hp: HyperParams
    theta_u_names: tuple[str, ...] = ()
    discrete_state = False

    def bind_data(self, y) -> StateSpaceModel:
        """Hook for models whose defaults depend on the data."""
        return self

    # -- parameter-conditional densities --

    def initial(self) -> Density:
        raise NotImplementedError

    def transition(self, t: int, x_prev, theta: dict) -> Density:
        raise NotImplementedError

    def observation(self, t: int, x, theta: dict) -> Density:
        raise NotImplementedError

    def log_joint(self, t, x, x_prev, y, theta):
        """``log p(x_t, y_t | x_{t-1}, theta)`` evaluated directly from the densities."""
        with np.errstate(invalid="ignore", over="ignore"):
            out = self.transition(t, x_prev, theta).log_pdf(x) + self.observation(t, x, theta).log_pdf(y)
        return np.where(np.isnan(out), -np.inf, out)

    # -- conjugate statistics --

    def step_stats(self, t: int, x, x_prev, y, theta_u: dict | None = None):
        """Return ``(s, r, log_h)`` with ``s`` shaped ``(..., chi_dim)``, ``r`` shaped ``(..., nu_dim)``."""
        raise NotImplementedError

    def suffstats(self, t, x, x_prev, y, theta_u=None) -> SuffStat:
        s, r, _ = self.step_stats(t, x, x_prev, y, theta_u)
        return SuffStat(s, r)

    def log_h(self, t, x, x_prev, y, theta_u=None):
        return self.step_stats(t, x, x_prev, y, theta_u)[2]

    def marginal_transition(self, t: int, x_prev, hp: HyperParams, theta_u: dict | None = None) -> Density:
        """``p(x_t | x_{0:t-1}, y_{1:t-1})`` with the conjugate parameters integrated out."""
        raise NotImplementedError

    def predictive_logpdf(self, hp: HyperParams, x_prev, x, y, t, theta_u=None):
        s, r, lh = self.step_stats(t, x, x_prev, y, theta_u)
        return predictive_logpdf(self.family, hp, SuffStat(s, r), lh)

    def trajectory_stats(self, x, y, theta_u=None, t_start: int = 0) -> SuffStat:
        """Per-step statistics along one trajectory; row ``t`` holds step ``t`` (rows ``<= t_start`` are zero)."""
        x = np.asarray(x, dtype=float)
        T = len(y)
        s = np.zeros((T + 1, self.family.chi_dim))
        r = np.zeros((T + 1, self.family.nu_dim))
        if T > t_start:
            ts = np.arange(t_start + 1, T + 1)
            s_, r_, _ = self.step_stats(ts, x[ts], x[ts - 1], np.asarray(y)[ts - 1], theta_u)
            s[t_start + 1 :] = s_
            r[t_start + 1 :] = r_
        return SuffStat(s, r)

    def posterior_hp(self, x, y, theta_u=None) -> HyperParams:
        st = self.trajectory_stats(x, y, theta_u)
        return HyperParams(self.prior_hp.chi + st.s.sum(0), self.prior_hp.nu + st.r.sum(0))

    def log_prior_theta_u(self, theta_u: dict) -> float:
        return 0.0

    def sample_prior_theta_u(self, rng) -> dict:
        return {}

    def observation_scale(self, x):
        """The state mapped to the scale the observations are centred on (for filtered summaries)."""
        return np.asarray(x, dtype=float)

    # -- simulation --

    def simulate(self, theta: dict, T: int, rng):
        """Forward-simulate ``(x_{0:T}, y_{1:T})``."""
        rng = as_rng(rng)
        x = np.empty(T + 1)
        y = np.empty(T)
        x[0] = self.initial().sample(rng)
        for t in range(1, T + 1):
            x[t] = self.transition(t, x[t - 1], theta).sample(rng)
            y[t - 1] = self.observation(t, x[t], theta).sample(rng)
        return x, y
