"""MCMC drivers built on the SMC sweeps.

* ``pg`` / ``pgas``: particle Gibbs (with ancestor sampling) alternating a
  conditional sweep given ``theta`` with a conjugate draw of ``theta``.
* ``mpg`` / ``mpgas``: the same kernels with the conjugate parameters
  integrated out of the sweep; ``theta`` is drawn from the posterior given
  the new reference each iteration.
* ``blocked-mpg`` / ``blocked-mpgas``: a parameter-conditional sweep over the
  first ``B + L`` steps, then a parameter-marginal sweep over steps
  ``B+1..T`` given ``x_{0:B}``, then a draw of ``theta``.
* ``mpmmh``: random-walk Metropolis-Hastings on the non-conjugate parameters
  using the parameter-marginal SMC evidence estimate.
* ``mis``: independent parameter-marginal SMC runs weighted by their evidence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .conjugacy import HyperParams
from .rand import RngStream
from .smc import (
    BOOTSTRAP,
    MARGINAL_BOOTSTRAP,
    ParticleSystem,
    ReferenceState,
    WeightCollapse,
    _sweep,
    run_csmc,
    run_smc,
)

METHODS = ("pg", "pgas", "mpg", "mpgas", "blocked-mpg", "blocked-mpgas", "mpmmh", "mis")

_BLOCKED_HINT = "diffuse priors can starve the parameter-marginal sweep; try blocked-mpg or blocked-mpgas"


class ConfigError(ValueError):
    """A sampler setting is invalid; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class SamplerConfig:
    """Settings for one chain.

    ``theta_init`` fixes the starting conjugate parameters (drawn from the
    prior otherwise); ``theta_u_init`` does the same for the parameters
    updated by Metropolis-Hastings. ``tau`` is the random-walk variance.
    """

    method: str = "mpgas"
    N: int = 100
    M: int = 1000
    burn_in: int = 0
    seed: int = 0
    stream: int = 0
    B: int = 0
    L: int = 0
    tau: float = 0.05
    theta_init: dict | None = None
    theta_u_init: dict | None = None
    store_trajectories: bool = True

    def validate(self, T: int | None = None) -> SamplerConfig:
        if self.method not in METHODS:
            raise ConfigError("method", f"unknown sampler {self.method!r}; valid samplers: {', '.join(METHODS)}")
        if int(self.N) < 1:
            raise ConfigError("N", "need at least one particle")
        if int(self.M) < 1:
            raise ConfigError("M", "need at least one iteration")
        if not 0 <= int(self.burn_in) < int(self.M):
            raise ConfigError("burn_in", "must satisfy 0 <= burn_in < M")
        if self.method.startswith("blocked"):
            if self.B < 1 or self.L < 0:
                raise ConfigError("B", "blocked samplers need B >= 1 and L >= 0")
            if T is not None and self.B + self.L >= T:
                raise ConfigError("B, L", f"B + L = {self.B + self.L} must be below T = {T}")
        if self.method == "mpmmh" and not self.tau > 0:
            raise ConfigError("tau", "random-walk variance must be positive")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> SamplerConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], f"unknown sampler setting; valid settings: {', '.join(sorted(known))}")
        return cls(**d)


@dataclass
class Chain:
    """Draws from one sampler run.

    ``params[name]`` has one row per iteration (``mis``: per run, paired
    with ``weights``). ``trajectories`` is ``(M, T+1)`` when stored.
    """

    method: str
    params: dict
    trajectories: np.ndarray | None = None
    accepted: np.ndarray | None = None
    log_z: np.ndarray | None = None
    weights: np.ndarray | None = None
    extras: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def M(self) -> int:
        return len(next(iter(self.params.values())))

    def after_burn_in(self, burn_in: int) -> Chain:
        """The chain with its first `burn_in` iterations dropped."""
        if self.method == "mis" or burn_in == 0:
            return self
        cut = lambda a: None if a is None else a[burn_in:]  # noqa: E731
        return replace(
            self,
            params={k: v[burn_in:] for k, v in self.params.items()},
            trajectories=cut(self.trajectories),
            accepted=cut(self.accepted),
            log_z=cut(self.log_z),
            extras={k: (v[burn_in:] if isinstance(v, np.ndarray) and v.shape[:1] == (self.M,) else v)
                    for k, v in self.extras.items()},
        )

    def scalar_series(self) -> dict:
        """Every scalar parameter component as its own series (``b`` becomes ``b[0]``, ``b[1]``)."""
        out = {}
        for k, v in self.params.items():
            v = np.asarray(v)
            if v.ndim == 1:
                out[k] = v
            else:
                for j in range(v.shape[1]):
                    out[f"{k}[{j}]"] = v[:, j]
        return out


class _Recorder:
    def __init__(self, M, T, store):
        self.M = M
        self.rows: dict[str, list] = {}
        self.traj = np.empty((M, T + 1)) if store else None

    def add(self, m, theta, x=None):
        for k, v in theta.items():
            self.rows.setdefault(k, []).append(np.asarray(v, dtype=float))
        if self.traj is not None and x is not None:
            self.traj[m] = x

    def params(self):
        return {k: np.array(v) for k, v in self.rows.items()}


def _prepare(model, config, y):
    y = np.asarray(y, dtype=float)
    config.validate(len(y))
    model = model.bind_data(y)
    return model, y, RngStream(config.seed, config.stream)


def _theta_u(model, config, rng):
    if not model.theta_u_names:
        return None
    if config.theta_u_init is not None:
        return {k: float(config.theta_u_init[k]) for k in model.theta_u_names}
    return model.sample_prior_theta_u(rng)


def _initial_theta(model, config, rng):
    if config.theta_init is not None:
        return dict(config.theta_init)
    return model.family.sample_posterior(model.prior_hp, rng)


def _require_conjugate(model, method, config=None):
    if model.theta_u_names and (config is None or config.theta_u_init is None):
        raise ConfigError("method", f"{method} needs a fully conjugate model; {model.name} has {model.theta_u_names}")


def _posterior(model, ref_stats_s, ref_stats_r) -> HyperParams:
    return HyperParams(model.prior_hp.chi + ref_stats_s.sum(axis=0), model.prior_hp.nu + ref_stats_r.sum(axis=0))


def _draw_reference(ps: ParticleSystem, rng) -> np.ndarray:
    return ps.trajectory(ps.sample_index(rng))


def _finish(method, rec, start, **kw) -> Chain:
    return Chain(method=method, params=rec.params(), trajectories=rec.traj, wall_clock=time.perf_counter() - start, **kw)


def run_pg(model, config: SamplerConfig, y, *, ancestor_sampling: bool = False) -> Chain:
    """Particle Gibbs (``ancestor_sampling=True`` gives PGAS)."""
    start = time.perf_counter()
    model, y, rng = _prepare(model, config, y)
    _require_conjugate(model, config.method)
    N, M = int(config.N), int(config.M)
    theta = _initial_theta(model, config, rng)
    ref = ReferenceState(_draw_reference(run_smc(model, y, N, rng, theta), rng))
    rec = _Recorder(M, len(y), config.store_trajectories)
    for m in range(M):
        _, ref = run_csmc(model, y, N, ref, rng, theta=theta, ancestor_sampling=ancestor_sampling)
        theta = model.family.sample_posterior(model.posterior_hp(ref.x, y), rng)
        rec.add(m, theta, ref.x)
    return _finish(config.method, rec, start)


def run_pgas(model, config: SamplerConfig, y) -> Chain:
    return run_pg(model, config, y, ancestor_sampling=True)


def run_mpg(model, config: SamplerConfig, y, *, ancestor_sampling: bool = False) -> Chain:
    """Particle Gibbs on the parameter-marginal model (``ancestor_sampling=True`` gives mPGAS).

    Models with non-conjugate parameters run with those held fixed at
    ``config.theta_u_init``; use mPMMH to sample them.
    """
    start = time.perf_counter()
    model, y, rng = _prepare(model, config, y)
    _require_conjugate(model, config.method, config)
    N, M = int(config.N), int(config.M)
    tu = _theta_u(model, config, rng)
    try:
        x0 = _draw_reference(run_smc(model, y, N, rng, marginal=True, theta_u=tu), rng)
        ref = ReferenceState.from_trajectory(model, x0, y, theta_u=tu)
        rec = _Recorder(M, len(y), config.store_trajectories)
        for m in range(M):
            _, ref = run_csmc(model, y, N, ref, rng, marginal=True, theta_u=tu, ancestor_sampling=ancestor_sampling)
            theta = model.family.sample_posterior(_posterior(model, ref.s, ref.r), rng)
            rec.add(m, {**theta, **(tu or {})}, ref.x)
    except WeightCollapse as e:
        raise WeightCollapse(e.step, _BLOCKED_HINT) from e
    return _finish(config.method, rec, start)


def run_mpgas(model, config: SamplerConfig, y) -> Chain:
    return run_mpg(model, config, y, ancestor_sampling=True)


def run_blocked(model, config: SamplerConfig, y, *, ancestor_sampling: bool | None = None,
                block1_ancestor_sampling: bool | None = None) -> Chain:
    """Two overlapping blocks: ``x_{0:B+L}`` given ``theta``, then ``x_{B+1:T}`` with ``theta`` integrated out.

    `ancestor_sampling` (default: on for ``blocked-mpgas``) applies to the
    marginalized block-2 sweep and, unless `block1_ancestor_sampling` says
    otherwise, to the block-1 sweep as well.
    """
    start = time.perf_counter()
    model, y, rng = _prepare(model, config, y)
    _require_conjugate(model, config.method)
    if ancestor_sampling is None:
        ancestor_sampling = config.method == "blocked-mpgas"
    if block1_ancestor_sampling is None:
        block1_ancestor_sampling = ancestor_sampling
    N, M, B, L = int(config.N), int(config.M), int(config.B), int(config.L)
    T = len(y)
    if B < 1 or L < 0 or B + L >= T:
        raise ConfigError("B, L", f"blocking needs B >= 1, L >= 0 and B + L < T = {T}")
    end1 = B + L
    theta = _initial_theta(model, config, rng)
    x = _draw_reference(run_smc(model, y, N, rng, marginal=True), rng)
    rec = _Recorder(M, T, config.store_trajectories)
    fam = model.family
    for m in range(M):
        # block 1: x_{0:B+L} | theta, y_{1:B+L}, x_{B+L+1}
        boundary = x[end1 + 1]
        th = theta
        ps1 = _sweep(
            model, y, N, rng, theta=th, marginal=False, proposal=BOOTSTRAP,
            ref=ReferenceState(x[: end1 + 1]), ancestor_sampling=block1_ancestor_sampling, t_end=end1,
            terminal_log_factor=lambda xe, th=th, b=boundary: model.transition(end1 + 1, xe, th).log_pdf(b),
        )
        x = x.copy()
        x[: end1 + 1] = _draw_reference(ps1, rng)
        # block 2: x_{B+1:T} | x_{0:B}, y with theta integrated out
        st = model.trajectory_stats(x, y)
        hp_b = HyperParams(model.prior_hp.chi + st.s[: B + 1].sum(axis=0), model.prior_hp.nu + st.r[: B + 1].sum(axis=0))
        ref = ReferenceState(x, st.s.copy(), st.r.copy(), t_start=B)
        ref.s[: B + 1] = 0.0
        ref.r[: B + 1] = 0.0
        try:
            ps2 = _sweep(model, y, N, rng, marginal=True, proposal=MARGINAL_BOOTSTRAP, ref=ref,
                         ancestor_sampling=ancestor_sampling, t_start=B, prefix=x, hp_start=hp_b)
        except WeightCollapse as e:
            raise WeightCollapse(e.step, "block 2 collapsed") from e
        x = _draw_reference(ps2, rng)
        # theta | x, y
        theta = fam.sample_posterior(model.posterior_hp(x, y), rng)
        rec.add(m, theta, x)
    return _finish(config.method, rec, start)


def mh_log_accept_ratio(log_z_new, log_z_old, log_prior_new, log_prior_old, log_q_reverse=0.0, log_q_forward=0.0):
    """``log min(1, [Z* p(u*) q(u'|u*)] / [Z' p(u') q(u*|u')])``; ``-inf`` when the proposal has zero evidence."""
    num = log_z_new + log_prior_new + log_q_reverse
    if not np.isfinite(num):
        return -np.inf
    return float(min(0.0, num - (log_z_old + log_prior_old + log_q_forward)))


def run_mpmmh(model, config: SamplerConfig, y) -> Chain:
    """Random-walk Metropolis-Hastings on ``theta_u`` with the parameter-marginal SMC evidence.

    Each iteration also keeps a trajectory drawn from the particle system of
    the current state, a fresh draw of the conjugate parameters given that
    trajectory, and the filtering moments of the current particle system.
    """
    start = time.perf_counter()
    model, y, rng = _prepare(model, config, y)
    if not model.theta_u_names:
        raise ConfigError("method", f"mpmmh needs non-conjugate parameters; {model.name} has none")
    N, M, T = int(config.N), int(config.M), len(y)
    sd = float(np.sqrt(config.tau))
    names = model.theta_u_names
    gen = rng.gen

    def evaluate(tu):
        try:
            ps = run_smc(model, y, N, rng, marginal=True, theta_u=tu)
        except WeightCollapse:
            return None, -np.inf
        return ps, ps.log_z

    tu = _theta_u(model, config, rng)
    ps, logz = evaluate(tu)
    if ps is None:
        raise WeightCollapse(0, f"the initial {names} gives zero evidence; set theta_u_init")
    lp = model.log_prior_theta_u(tu)
    rec = _Recorder(M, T, config.store_trajectories)
    accepted = np.zeros(M, dtype=bool)
    log_zs = np.empty(M)
    f_mean = np.empty((M, T + 1))
    f_var = np.empty((M, T + 1))
    x_cur = None
    for m in range(M):
        prop = {k: tu[k] + sd * gen.standard_normal() for k in names}
        ps_new, logz_new = evaluate(prop)
        lp_new = model.log_prior_theta_u(prop)
        log_a = mh_log_accept_ratio(logz_new, logz, lp_new, lp)
        if np.log(gen.random()) < log_a:
            tu, ps, logz, lp = prop, ps_new, logz_new, lp_new
            accepted[m] = True
            x_cur = None
        if x_cur is None:
            k = ps.sample_index(rng)
            x_cur = ps.trajectory(k)
            hp_k = ps.hp[k]
            fm, fv = ps.filter_moments(model.observation_scale)
        theta_m = model.family.sample_posterior(hp_k, rng)
        rec.add(m, {**{k: tu[k] for k in names}, **theta_m}, x_cur)
        log_zs[m] = logz
        f_mean[m] = fm
        f_var[m] = fv
    return _finish(config.method, rec, start, accepted=accepted, log_z=log_zs,
                   extras={"filter_mean": f_mean, "filter_var": f_var})


def run_mis(model, config: SamplerConfig, y) -> Chain:
    """``M`` independent parameter-marginal SMC runs, weighted by their evidence estimates.

    Each run contributes one trajectory and one parameter draw (from the
    particle selected by the final weights), its weighted state mean, and
    its mixture-of-posteriors parameter mean.
    """
    start = time.perf_counter()
    model, y, rng = _prepare(model, config, y)
    _require_conjugate(model, config.method)
    N, M, T = int(config.N), int(config.M), len(y)
    rec = _Recorder(M, T, config.store_trajectories)
    log_zs = np.empty(M)
    state_means = np.empty((M, T + 1))
    param_means: dict[str, list] = {}
    for m in range(M):
        ps = run_smc(model, y, N, rng, marginal=True)
        log_zs[m] = ps.log_z
        W = ps.norm_weights
        k = ps.sample_index(rng)
        rec.add(m, model.family.sample_posterior(ps.hp[k], rng), ps.trajectory(k))
        state_means[m] = W @ ps.trajectories()
        for name, v in model.family.posterior_mean(ps.hp).items():
            param_means.setdefault(name, []).append(np.tensordot(W, v, axes=(0, 0)))
    w = np.exp(log_zs - log_zs.max())
    w /= w.sum()
    return _finish(config.method, rec, start, log_z=log_zs, weights=w,
                   extras={"state_means": state_means, "param_means": {k: np.array(v) for k, v in param_means.items()}})


_DRIVERS = {
    "pg": lambda mdl, c, y: run_pg(mdl, c, y, ancestor_sampling=False),
    "pgas": lambda mdl, c, y: run_pg(mdl, c, y, ancestor_sampling=True),
    "mpg": lambda mdl, c, y: run_mpg(mdl, c, y, ancestor_sampling=False),
    "mpgas": lambda mdl, c, y: run_mpg(mdl, c, y, ancestor_sampling=True),
    "blocked-mpg": lambda mdl, c, y: run_blocked(mdl, c, y, ancestor_sampling=False),
    "blocked-mpgas": lambda mdl, c, y: run_blocked(mdl, c, y, ancestor_sampling=True),
    "mpmmh": run_mpmmh,
    "mis": run_mis,
}


def run_sampler(model, config: SamplerConfig, y) -> Chain:
    config.validate(len(y))
    return _DRIVERS[config.method](model, config, y)
