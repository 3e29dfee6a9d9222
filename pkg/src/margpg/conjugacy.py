"""Conjugate families whose log-partition separates into a parameter part and a state part.

A joint state/observation density in this class factorizes as::

    p(x_t, y_t | x_{t-1}, theta) = h_t * exp(eta(theta) . s_t - A(theta) . r_t)

with ``s_t = s(x_t, x_{t-1}, y_t)`` and ``r_t = r(x_{t-1})``. The conjugate
prior ``g(chi, nu) * exp(eta . chi - A . nu)`` is closed under the additive
recursion ``chi += s_t, nu += r_t``, and integrating ``theta`` out of one step
gives ``h_t * g(chi, nu) / g(chi + s_t, nu + r_t)``.

Hyperparameters are stored in that accumulator form. Arrays carry the
statistic dimension last so a batch of particles is just a leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

from .rand import Density, as_rng

_LOG_2PI = np.log(2.0 * np.pi)


class InvalidHyperParams(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    """Accumulators ``(chi, nu)``; leading axes (if any) index particles."""

    chi: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "chi", np.asarray(self.chi, dtype=float))
        object.__setattr__(self, "nu", np.asarray(self.nu, dtype=float))

    def __getitem__(self, idx) -> HyperParams:
        return HyperParams(self.chi[idx], self.nu[idx])

    def __len__(self):
        return len(self.chi) if self.chi.ndim > 1 else 1

    def repeat(self, n: int) -> HyperParams:
        return HyperParams(np.tile(self.chi, (n, 1)), np.tile(self.nu, (n, 1)))


@dataclass(frozen=True)
class SuffStat:
    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))

    def __add__(self, other: SuffStat) -> SuffStat:
        return SuffStat(self.s + other.s, self.r + other.r)

    def sum(self, axis=0) -> SuffStat:
        return SuffStat(self.s.sum(axis=axis), self.r.sum(axis=axis))


def _check_dims(hp: HyperParams, st: SuffStat):
    if hp.chi.shape[-1] != st.s.shape[-1] or hp.nu.shape[-1] != st.r.shape[-1]:
        raise ValueError(
            f"dimension mismatch: hyperparameters ({hp.chi.shape[-1]}, {hp.nu.shape[-1]}) "
            f"vs statistics ({st.s.shape[-1]}, {st.r.shape[-1]})"
        )


def update_hyperparams(hp: HyperParams, st: SuffStat) -> HyperParams:
    """``(chi + s, nu + r)``; the input is left untouched."""
    _check_dims(hp, st)
    return HyperParams(hp.chi + st.s, hp.nu + st.r)


def downdate_hyperparams(hp: HyperParams, st: SuffStat, family: ConjugateFamily | None = None) -> HyperParams:
    """Inverse of `update_hyperparams`.

    With a `family`, the result is validated and `InvalidHyperParams` is
    raised when subtraction leaves the family's domain.
    """
    _check_dims(hp, st)
    out = HyperParams(hp.chi - st.s, hp.nu - st.r)
    if family is not None and not np.all(family.is_valid(out.chi, out.nu)):
        raise InvalidHyperParams(f"downdate left the valid domain of {family!r}: chi={out.chi}, nu={out.nu}")
    return out


class ConjugateFamily:
    """Interface for one parameter block.

    Subclasses implement the array-level methods; all of them broadcast over
    leading axes of ``chi``/``nu``.
    """

    chi_dim: int
    nu_dim: int
    param_names: tuple[str, ...]

    def log_g_arrays(self, chi, nu):
        raise NotImplementedError

    def is_valid(self, chi, nu):
        raise NotImplementedError

    def natural(self, theta: dict) -> tuple[np.ndarray, np.ndarray]:
        """``(eta(theta), A(theta))`` so that ``log p = log h + eta . s - A . r``."""
        raise NotImplementedError

    def sample_arrays(self, chi, nu, rng) -> dict:
        raise NotImplementedError

    def mean_arrays(self, chi, nu) -> dict:
        raise NotImplementedError

    def decode(self, hp: HyperParams) -> dict:
        raise NotImplementedError

    # -- HyperParams-level conveniences --

    def log_g(self, hp: HyperParams):
        if not np.all(self.is_valid(hp.chi, hp.nu)):
            raise InvalidHyperParams(f"invalid hyperparameters for {self!r}: {self.decode(hp)}")
        return self.log_g_arrays(hp.chi, hp.nu)

    def sample_posterior(self, hp: HyperParams, rng) -> dict:
        if not np.all(self.is_valid(hp.chi, hp.nu)):
            raise InvalidHyperParams(f"invalid hyperparameters for {self!r}: {self.decode(hp)}")
        return self.sample_arrays(hp.chi, hp.nu, as_rng(rng))

    def posterior_mean(self, hp: HyperParams) -> dict:
        return self.mean_arrays(hp.chi, hp.nu)

    def zero_stat(self) -> SuffStat:
        return SuffStat(np.zeros(self.chi_dim), np.zeros(self.nu_dim))


class InverseGammaVariance(ConjugateFamily):
    """Unknown variance of a Gaussian residual, ``s2 ~ IG(alpha, beta)``.

    ``chi = [beta]``, ``nu = [alpha]``; a residual ``e`` contributes
    ``s = e**2 / 2`` and ``r = 1/2``; ``log g = alpha log beta - lgamma(alpha)``.
    """

    chi_dim = 1
    nu_dim = 1

    def __init__(self, name: str = "sigma2"):
        self.name = name
        self.param_names = (name,)

    def __repr__(self):
        return f"InverseGammaVariance({self.name!r})"

    @staticmethod
    def prior(alpha: float, beta: float) -> HyperParams:
        return HyperParams([beta], [alpha])

    @staticmethod
    def stat(residual) -> tuple[np.ndarray, np.ndarray]:
        residual = np.asarray(residual, dtype=float)
        return (0.5 * residual * residual)[..., None], np.full(residual.shape + (1,), 0.5)

    def log_g_arrays(self, chi, nu):
        a = nu[..., 0]
        b = chi[..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * np.log(b) - gammaln(a)
        return np.where((a > 0) & (b > 0), out, np.nan)

    def is_valid(self, chi, nu):
        return (nu[..., 0] > 0) & (chi[..., 0] > 0)

    def natural(self, theta):
        s2 = float(theta[self.name])
        return np.array([-1.0 / s2]), np.array([np.log(s2)])

    def sample_arrays(self, chi, nu, rng):
        return {self.name: chi[..., 0] / rng.gen.standard_gamma(nu[..., 0])}

    def mean_arrays(self, chi, nu):
        a = nu[..., 0]
        return {self.name: np.where(a > 1, chi[..., 0] / np.maximum(a - 1, 1e-300), np.inf)}

    def decode(self, hp):
        return {"alpha": hp.nu[..., 0], "beta": hp.chi[..., 0]}


class NormalInverseGammaRegression(ConjugateFamily):
    """Gaussian regression ``z = u . b + e``, ``e ~ N(0, s2)``, with ``(b, s2) ~ NIG(mu, Lambda, alpha, beta)``.

    ``Lambda`` is the prior precision of ``b`` in units of ``s2``. The
    accumulators are ``chi = [beta + mu'Lambda mu / 2, Lambda mu, vec(Lambda)]``
    and ``nu = [alpha + d/2]``; an observation contributes
    ``s = [z**2/2, z u, vec(u u')]`` and ``r = [1/2]``.
    """

    nu_dim = 1

    def __init__(self, dim: int, coef_name: str = "b", var_name: str = "sigma2"):
        self.dim = int(dim)
        self.coef_name = coef_name
        self.var_name = var_name
        self.param_names = (coef_name, var_name)
        self.chi_dim = 1 + self.dim + self.dim * self.dim

    def __repr__(self):
        return f"NormalInverseGammaRegression(dim={self.dim}, {self.coef_name!r}, {self.var_name!r})"

    def prior(self, mu, Lambda, alpha, beta) -> HyperParams:
        mu = np.asarray(mu, dtype=float).reshape(self.dim)
        lam = np.asarray(Lambda, dtype=float).reshape(self.dim, self.dim)
        c0 = beta + 0.5 * mu @ lam @ mu
        chi = np.concatenate([[c0], lam @ mu, lam.ravel()])
        return HyperParams(chi, [alpha + 0.5 * self.dim])

    def stat(self, z, u) -> tuple[np.ndarray, np.ndarray]:
        """Statistics for responses ``z`` (shape ``(...)``) and regressors ``u`` (shape ``(..., d)``)."""
        z = np.asarray(z, dtype=float)
        u = np.asarray(u, dtype=float)
        outer = (u[..., :, None] * u[..., None, :]).reshape(u.shape[:-1] + (self.dim * self.dim,))
        s = np.concatenate([(0.5 * z * z)[..., None], z[..., None] * u, outer], axis=-1)
        return s, np.full(z.shape + (1,), 0.5)

    def _unpack(self, chi, nu):
        d = self.dim
        c0 = chi[..., 0]
        c1 = chi[..., 1 : 1 + d]
        lam = chi[..., 1 + d :].reshape(chi.shape[:-1] + (d, d))
        return c0, c1, lam, nu[..., 0] - 0.5 * d

    def _solve(self, lam, c1):
        if self.dim == 2:
            a, b, c, e = lam[..., 0, 0], lam[..., 0, 1], lam[..., 1, 0], lam[..., 1, 1]
            det = a * e - b * c
            with np.errstate(divide="ignore", invalid="ignore"):
                m0 = (e * c1[..., 0] - b * c1[..., 1]) / det
                m1 = (a * c1[..., 1] - c * c1[..., 0]) / det
            return np.stack([m0, m1], axis=-1), det
        det = np.linalg.det(lam)
        return np.linalg.solve(lam, c1[..., None])[..., 0], det

    def decode(self, hp):
        c0, c1, lam, alpha = self._unpack(hp.chi, hp.nu)
        mu, _ = self._solve(lam, c1)
        beta = c0 - 0.5 * np.sum(c1 * mu, axis=-1)
        return {"mu": mu, "Lambda": lam, "alpha": alpha, "beta": beta}

    def _parts(self, chi, nu):
        c0, c1, lam, alpha = self._unpack(chi, nu)
        mu, det = self._solve(lam, c1)
        beta = c0 - 0.5 * np.sum(c1 * mu, axis=-1)
        return mu, lam, det, alpha, beta

    def is_valid(self, chi, nu):
        _, lam, det, alpha, beta = self._parts(chi, nu)
        return (det > 0) & (lam[..., 0, 0] > 0) & (alpha > 0) & (beta > 0)

    def log_g_arrays(self, chi, nu):
        _, lam, det, alpha, beta = self._parts(chi, nu)
        ok = (det > 0) & (lam[..., 0, 0] > 0) & (alpha > 0) & (beta > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 0.5 * np.log(det) - 0.5 * self.dim * _LOG_2PI + alpha * np.log(beta) - gammaln(alpha)
        return np.where(ok, out, np.nan)

    def natural(self, theta):
        b = np.asarray(theta[self.coef_name], dtype=float).reshape(self.dim)
        s2 = float(theta[self.var_name])
        eta = np.concatenate([[-1.0 / s2], b / s2, -0.5 * np.outer(b, b).ravel() / s2])
        return eta, np.array([np.log(s2)])

    def sample_arrays(self, chi, nu, rng):
        mu, lam, _, alpha, beta = self._parts(chi, nu)
        b, s2 = Density.normal_inverse_gamma(mu, lam, alpha, beta).sample(rng)
        return {self.coef_name: b, self.var_name: s2}

    def mean_arrays(self, chi, nu):
        mu, _, _, alpha, beta = self._parts(chi, nu)
        return {
            self.coef_name: mu,
            self.var_name: np.where(alpha > 1, beta / np.maximum(alpha - 1, 1e-300), np.inf),
        }


class BetaBinomial(ConjugateFamily):
    """Unknown success probability of binomial observations, ``rho ~ Beta(a, b)``.

    ``chi = [a, b]``, no ``nu``; an observation of ``k`` successes in ``n``
    trials contributes ``s = [k, n - k]``; ``log g = -log B(a, b)``.
    """

    chi_dim = 2
    nu_dim = 0

    def __init__(self, name: str = "rho"):
        self.name = name
        self.param_names = (name,)

    def __repr__(self):
        return f"BetaBinomial({self.name!r})"

    @staticmethod
    def prior(a: float, b: float) -> HyperParams:
        return HyperParams([a, b], np.zeros(0))

    @staticmethod
    def stat(successes, trials) -> tuple[np.ndarray, np.ndarray]:
        k = np.asarray(successes, dtype=float)
        n = np.asarray(trials, dtype=float)
        return np.stack([k, n - k], axis=-1), np.zeros(k.shape + (0,))

    def log_g_arrays(self, chi, nu):
        a, b = chi[..., 0], chi[..., 1]
        with np.errstate(invalid="ignore"):
            out = -betaln(a, b)
        return np.where((a > 0) & (b > 0), out, np.nan)

    def is_valid(self, chi, nu):
        return (chi[..., 0] > 0) & (chi[..., 1] > 0)

    def natural(self, theta):
        rho = float(theta[self.name])
        with np.errstate(divide="ignore"):
            return np.array([np.log(rho), np.log1p(-rho)]), np.zeros(0)

    def sample_arrays(self, chi, nu, rng):
        return {self.name: rng.gen.beta(chi[..., 0], chi[..., 1])}

    def mean_arrays(self, chi, nu):
        return {self.name: chi[..., 0] / (chi[..., 0] + chi[..., 1])}

    def decode(self, hp):
        return {"a": hp.chi[..., 0], "b": hp.chi[..., 1]}


class ProductFamily(ConjugateFamily):
    """Independent blocks; ``log g`` is the sum of the blocks' values."""

    def __init__(self, *blocks: ConjugateFamily):
        self.blocks = tuple(blocks)
        self.chi_dim = sum(b.chi_dim for b in self.blocks)
        self.nu_dim = sum(b.nu_dim for b in self.blocks)
        self.param_names = tuple(n for b in self.blocks for n in b.param_names)
        self._chi_slices = []
        self._nu_slices = []
        i = j = 0
        for b in self.blocks:
            self._chi_slices.append(slice(i, i + b.chi_dim))
            self._nu_slices.append(slice(j, j + b.nu_dim))
            i += b.chi_dim
            j += b.nu_dim

    def __repr__(self):
        return "ProductFamily(" + ", ".join(map(repr, self.blocks)) + ")"

    def _split(self, chi, nu):
        for b, cs, ns in zip(self.blocks, self._chi_slices, self._nu_slices):
            yield b, chi[..., cs], nu[..., ns]

    def prior(self, *block_priors: HyperParams) -> HyperParams:
        return HyperParams(
            np.concatenate([p.chi for p in block_priors], axis=-1),
            np.concatenate([p.nu for p in block_priors], axis=-1),
        )

    def block(self, hp: HyperParams, k: int) -> HyperParams:
        return HyperParams(hp.chi[..., self._chi_slices[k]], hp.nu[..., self._nu_slices[k]])

    def log_g_arrays(self, chi, nu):
        out = 0.0
        for b, c, n in self._split(chi, nu):
            out = out + b.log_g_arrays(c, n)
        return out

    def is_valid(self, chi, nu):
        ok = True
        for b, c, n in self._split(chi, nu):
            ok = ok & b.is_valid(c, n)
        return ok

    def natural(self, theta):
        parts = [b.natural(theta) for b in self.blocks]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def sample_arrays(self, chi, nu, rng):
        out = {}
        for b, c, n in self._split(chi, nu):
            out.update(b.sample_arrays(c, n, rng))
        return out

    def mean_arrays(self, chi, nu):
        out = {}
        for b, c, n in self._split(chi, nu):
            out.update(b.mean_arrays(c, n))
        return out

    def decode(self, hp):
        return [b.decode(HyperParams(c, n)) for b, c, n in self._split(hp.chi, hp.nu)]


def log_g(family: ConjugateFamily, hp: HyperParams):
    return family.log_g(hp)


def predictive_logpdf(family: ConjugateFamily, hp: HyperParams, st: SuffStat, log_h):
    """``log h + log g(chi, nu) - log g(chi + s, nu + r)``: the parameter-marginal one-step density."""
    new = update_hyperparams(hp, st)
    lg0 = family.log_g(hp)
    lg1 = family.log_g_arrays(new.chi, new.nu)
    with np.errstate(invalid="ignore"):
        out = np.asarray(log_h, dtype=float) + lg0 - lg1
    return np.where(np.isnan(out), -np.inf, out)


def sample_posterior_params(family: ConjugateFamily, hp: HyperParams, rng) -> dict:
    return family.sample_posterior(hp, rng)


def log_likelihood_from_stats(family: ConjugateFamily, theta: dict, st: SuffStat, log_h):
    """Reconstruct ``log p(x_t, y_t | x_{t-1}, theta)`` from statistics (separability form)."""
    eta, A = family.natural(theta)
    with np.errstate(invalid="ignore"):
        out = np.asarray(log_h, dtype=float) + st.s @ eta - st.r @ A
    return np.where(np.isnan(out), -np.inf, out)
