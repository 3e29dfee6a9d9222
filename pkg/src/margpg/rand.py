"""Seeded random streams and the handful of densities the samplers need.

All densities are evaluated in log-space with their full normalizing
constants. Parameters broadcast against each other so a single `Density`
can describe one distribution per particle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln, xlog1py, xlogy

_LOG_2PI = np.log(2.0 * np.pi)
_MASK64 = (1 << 64) - 1

TAGS = (
    "gaussian",
    "inverse-gamma",
    "normal-inverse-gamma",
    "beta",
    "binomial",
    "student-t",
    "categorical",
    "uniform",
)


class InvalidParameters(ValueError):
    """Raised when a density is built with parameters outside their domain."""

    def __init__(self, tag: str, field_name: str, message: str = ""):
        self.tag = tag
        self.field = field_name
        super().__init__(f"{tag}: invalid parameter '{field_name}'" + (f" ({message})" if message else ""))


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator, so streams with different
    ids are independent and can be handed to different workers.
    """

    seed: int
    stream_id: int = 0
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> RngStream:
        """Deterministically derived stream; distinct indices give distinct streams."""
        return RngStream(self.seed, _splitmix64(self.stream_id ^ _splitmix64(int(index) + 1)))

    def split(self, n: int) -> list[RngStream]:
        return [self.child(i) for i in range(n)]


def as_rng(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng))
    raise TypeError(f"expected RngStream or integer seed, got {type(rng).__name__}")


@dataclass(frozen=True)
class Density:
    """A tagged distribution with per-tag parameters.

    Use the constructors (`Density.gaussian`, ...) rather than building the
    parameter dict by hand; they validate the parameters.
    """

    tag: str
    params: dict

    # -- constructors -------------------------------------------------------

    @classmethod
    def gaussian(cls, mean, var, check=True):
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        if check:
            _require(np.all(var > 0) and np.all(np.isfinite(var)), "gaussian", "var", "must be positive and finite")
        return cls("gaussian", {"mean": mean, "var": var})

    @classmethod
    def inverse_gamma(cls, shape, scale):
        shape = np.asarray(shape, dtype=float)
        scale = np.asarray(scale, dtype=float)
        _require(np.all(shape > 0), "inverse-gamma", "shape", "must be positive")
        _require(np.all(scale > 0), "inverse-gamma", "scale", "must be positive")
        return cls("inverse-gamma", {"shape": shape, "scale": scale})

    @classmethod
    def normal_inverse_gamma(cls, mean, precision, shape, scale):
        """Joint law of ``(b, s2)``: ``s2 ~ IG(shape, scale)``, ``b | s2 ~ N(mean, s2 * inv(precision))``."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        precision = np.atleast_2d(np.asarray(precision, dtype=float))
        _require(precision.shape == (mean.size, mean.size), "normal-inverse-gamma", "precision", "shape mismatch")
        _require(np.allclose(precision, precision.T), "normal-inverse-gamma", "precision", "must be symmetric")
        try:
            np.linalg.cholesky(precision)
        except np.linalg.LinAlgError:
            raise InvalidParameters("normal-inverse-gamma", "precision", "must be positive definite") from None
        _require(float(shape) > 0, "normal-inverse-gamma", "shape", "must be positive")
        _require(float(scale) > 0, "normal-inverse-gamma", "scale", "must be positive")
        return cls(
            "normal-inverse-gamma",
            {"mean": mean, "precision": precision, "shape": float(shape), "scale": float(scale)},
        )

    @classmethod
    def beta(cls, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        _require(np.all(a > 0), "beta", "a", "must be positive")
        _require(np.all(b > 0), "beta", "b", "must be positive")
        return cls("beta", {"a": a, "b": b})

    @classmethod
    def binomial(cls, n, p, check=True):
        n = np.asarray(n)
        p = np.asarray(p, dtype=float)
        if check:
            _require(np.all(n >= 0) and np.all(np.floor(n) == n), "binomial", "n", "must be a non-negative integer")
            _require(np.all((p >= 0) & (p <= 1)), "binomial", "p", "must lie in [0, 1]")
        return cls("binomial", {"n": n.astype(np.int64), "p": p})

    @classmethod
    def student_t(cls, dof, loc, scale, check=True):
        dof = np.asarray(dof, dtype=float)
        loc = np.asarray(loc, dtype=float)
        scale = np.asarray(scale, dtype=float)
        if check:
            _require(np.all(dof > 0), "student-t", "dof", "must be positive")
            _require(np.all(scale > 0) and np.all(np.isfinite(scale)), "student-t", "scale", "must be positive")
        return cls("student-t", {"dof": dof, "loc": loc, "scale": scale})

    @classmethod
    def categorical(cls, weights):
        w = np.asarray(weights, dtype=float)
        _require(np.all(np.isfinite(w)) and np.all(w >= 0), "categorical", "weights", "must be finite and non-negative")
        total = w.sum(axis=-1, keepdims=True)
        _require(np.all(total > 0), "categorical", "weights", "must not all be zero")
        return cls("categorical", {"weights": w / total})

    @classmethod
    def uniform(cls, low=0.0, high=1.0):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        _require(np.all(high > low), "uniform", "high", "must exceed low")
        return cls("uniform", {"low": low, "high": high})

    # -- evaluation ---------------------------------------------------------

    def sample(self, rng, size=None):
        return sample(self, rng, size)

    def log_pdf(self, x):
        return log_pdf(self, x)

    def mean(self):
        p = self.params
        if self.tag == "gaussian":
            return p["mean"]
        if self.tag == "inverse-gamma":
            return np.where(p["shape"] > 1, p["scale"] / np.maximum(p["shape"] - 1, 1e-300), np.inf)
        if self.tag == "beta":
            return p["a"] / (p["a"] + p["b"])
        if self.tag == "binomial":
            return p["n"] * p["p"]
        if self.tag == "student-t":
            return np.where(p["dof"] > 1, p["loc"], np.nan)
        if self.tag == "uniform":
            return 0.5 * (p["low"] + p["high"])
        if self.tag == "categorical":
            return (p["weights"] * np.arange(p["weights"].shape[-1])).sum(axis=-1)
        raise NotImplementedError(self.tag)

    def var(self):
        p = self.params
        if self.tag == "gaussian":
            return p["var"]
        if self.tag == "inverse-gamma":
            a, b = p["shape"], p["scale"]
            return np.where(a > 2, b**2 / (np.maximum(a - 1, 1e-300) ** 2 * np.maximum(a - 2, 1e-300)), np.inf)
        if self.tag == "beta":
            a, b = p["a"], p["b"]
            return a * b / ((a + b) ** 2 * (a + b + 1))
        if self.tag == "binomial":
            return p["n"] * p["p"] * (1 - p["p"])
        if self.tag == "student-t":
            v = p["dof"]
            return np.where(v > 2, p["scale"] ** 2 * v / np.maximum(v - 2, 1e-300), np.inf)
        if self.tag == "uniform":
            return (p["high"] - p["low"]) ** 2 / 12.0
        if self.tag == "categorical":
            w = p["weights"]
            k = np.arange(w.shape[-1])
            m = (w * k).sum(axis=-1)
            return (w * k**2).sum(axis=-1) - m**2
        raise NotImplementedError(self.tag)


def _require(ok, tag, field_name, message):
    if not ok:
        raise InvalidParameters(tag, field_name, message)


def _shape(d: Density, size):
    if size is not None:
        return size
    return np.broadcast_shapes(*(np.shape(v) for v in d.params.values())) if d.params else ()


def sample(d: Density, rng, size=None):
    """Draw from `d`. Without `size` the draw has the broadcast shape of the parameters."""
    g = as_rng(rng).gen
    p = d.params
    tag = d.tag
    if tag == "gaussian":
        shape = _shape(d, size)
        return p["mean"] + np.sqrt(p["var"]) * g.standard_normal(shape)
    if tag == "inverse-gamma":
        shape = _shape(d, size)
        return p["scale"] / g.standard_gamma(p["shape"], size=shape)
    if tag == "normal-inverse-gamma":
        if size is not None:
            return [sample(d, rng) for _ in range(int(np.prod(size)))]
        s2 = p["scale"] / g.standard_gamma(p["shape"])
        chol = np.linalg.cholesky(p["precision"])
        z = g.standard_normal(p["mean"].size)
        # b = mean + sqrt(s2) * L^{-T} z has covariance s2 * inv(precision)
        b = p["mean"] + np.sqrt(s2) * np.linalg.solve(chol.T, z)
        return b, s2
    if tag == "beta":
        return g.beta(p["a"], p["b"], size=_shape(d, size))
    if tag == "binomial":
        return g.binomial(p["n"], p["p"], size=_shape(d, size))
    if tag == "student-t":
        shape = _shape(d, size)
        return p["loc"] + p["scale"] * g.standard_t(p["dof"], size=shape)
    if tag == "uniform":
        shape = _shape(d, size)
        return p["low"] + (p["high"] - p["low"]) * g.random(shape)
    if tag == "categorical":
        w = p["weights"]
        if w.ndim != 1:
            raise NotImplementedError("batched categorical sampling")
        n = 1 if size is None else int(np.prod(size))
        idx = np.searchsorted(np.cumsum(w), g.random(n) * w.sum(), side="right")
        idx = np.minimum(idx, w.size - 1)
        return int(idx[0]) if size is None else idx.reshape(size)
    raise ValueError(f"unknown density tag {tag!r}")


def log_pdf(d: Density, x):
    """Exact log-density (or log-pmf) of `d` at `x`; ``-inf`` off the support."""
    p = d.params
    tag = d.tag
    if tag == "gaussian":
        x = np.asarray(x, dtype=float)
        return -0.5 * (_LOG_2PI + np.log(p["var"]) + (x - p["mean"]) ** 2 / p["var"])
    if tag == "inverse-gamma":
        x = np.asarray(x, dtype=float)
        a, b = p["shape"], p["scale"]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a * np.log(b) - gammaln(a) - (a + 1) * np.log(x) - b / x
        return np.where(x > 0, out, -np.inf)
    if tag == "normal-inverse-gamma":
        b, s2 = x
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if not s2 > 0:
            return -np.inf
        lam, mu, a, beta = p["precision"], p["mean"], p["shape"], p["scale"]
        k = mu.size
        r = b - mu
        _, logdet = np.linalg.slogdet(lam)
        lp_b = -0.5 * (k * (_LOG_2PI + np.log(s2)) - logdet + r @ lam @ r / s2)
        lp_s2 = a * np.log(beta) - gammaln(a) - (a + 1) * np.log(s2) - beta / s2
        return float(lp_b + lp_s2)
    if tag == "beta":
        x = np.asarray(x, dtype=float)
        a, b = p["a"], p["b"]
        inside = (x >= 0) & (x <= 1)
        xc = np.clip(x, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = xlogy(a - 1, xc) + xlog1py(b - 1, -xc) - betaln(a, b)
        return np.where(inside, out, -np.inf)
    if tag == "binomial":
        return binomial_logpmf(x, p["n"], p["p"])
    if tag == "student-t":
        x = np.asarray(x, dtype=float)
        v, m, s = p["dof"], p["loc"], p["scale"]
        z = (x - m) / s
        return (
            gammaln(0.5 * (v + 1))
            - gammaln(0.5 * v)
            - 0.5 * np.log(v * np.pi)
            - np.log(s)
            - 0.5 * (v + 1) * np.log1p(z * z / v)
        )
    if tag == "uniform":
        x = np.asarray(x, dtype=float)
        lo, hi = p["low"], p["high"]
        return np.where((x >= lo) & (x <= hi), -np.log(hi - lo), -np.inf)
    if tag == "categorical":
        w = p["weights"]
        x = np.asarray(x)
        ok = (x >= 0) & (x < w.shape[-1]) & (np.floor(x) == x)
        idx = np.where(ok, x, 0).astype(np.int64)
        with np.errstate(divide="ignore"):
            lw = np.log(w[..., idx])
        return np.where(ok, lw, -np.inf)
    raise ValueError(f"unknown density tag {tag!r}")


def binomial_logpmf(k, n, p):
    """Binomial log-pmf via log-gamma; ``-inf`` for ``k`` outside ``0..n``."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    ok = (k >= 0) & (k <= n) & (np.floor(k) == k)
    kk = np.where(ok, k, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logc = gammaln(n + 1) - gammaln(kk + 1) - gammaln(n - kk + 1)
        # xlogy-style handling so that p in {0, 1} gives exact 0 / -inf
        t1 = np.where(kk > 0, kk * np.log(p), 0.0)
        t2 = np.where(n - kk > 0, (n - kk) * np.log1p(-p), 0.0)
    return np.where(ok, logc + t1 + t2, -np.inf)


def log_binom_coef(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    ok = (k >= 0) & (k <= n)
    kk = np.where(ok, k, 0.0)
    return np.where(ok, gammaln(n + 1) - gammaln(kk + 1) - gammaln(n - kk + 1), -np.inf)


def logsumexp(a, axis=None):
    """Max-shifted log-sum-exp that returns ``-inf`` (not NaN) for all ``-inf`` input."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.squeeze(axis=axis) if axis is not None else float(out.squeeze())


def normalize_log_weights(logw):
    """Return ``(normalized weights, log of their unnormalized sum)``."""
    logw = np.asarray(logw, dtype=float)
    m = np.max(logw)
    if not np.isfinite(m):
        return np.full_like(logw, np.nan), -np.inf
    w = np.exp(logw - m)
    s = w.sum()
    return w / s, m + np.log(s)
