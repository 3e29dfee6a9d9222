"""Sequential Monte Carlo sweeps: plain, conditional, and parameter-marginal.

One engine (`_sweep`) covers every configuration used by the samplers:

* parameter-conditional weighting (``theta`` given) or parameter-marginal
  weighting (conjugate parameters integrated out, per-particle
  hyperparameters carried along);
* unconditional SMC or conditional SMC with a reference trajectory, with
  the reference's ancestor either fixed or resampled (ancestor sampling);
* sweeps that start from a fixed prefix ``x_{0:t0}`` and/or stop early with
  an extra terminal weight factor, as needed by the blocked sampler.

Particles are resampled at every step. Trajectories are stored as
per-step particle values plus ancestor indices and rebuilt by index chasing.
Indices are 0-based; the conditioned particle is the last one (``N - 1``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .conjugacy import HyperParams, InvalidHyperParams, SuffStat
from .rand import Density, as_rng, logsumexp

_NEG_INF = -np.inf


class WeightCollapse(RuntimeError):
    """Every particle received zero weight at some step."""

    def __init__(self, step: int, hint: str = ""):
        self.step = step
        msg = f"all particle weights are zero at step t={step}"
        super().__init__(msg + (f"; {hint}" if hint else ""))


@dataclass(frozen=True)
class ProposalKind:
    """How particles are propagated.

    ``custom`` proposals take a factory ``(t, x_prev, cond) -> Density`` where
    ``cond`` is the parameter dict (conditional sweeps) or the particles'
    `HyperParams` (marginal sweeps).
    """

    tag: str
    factory: Callable | None = None

    def __post_init__(self):
        if self.tag not in ("bootstrap", "marginalized-bootstrap", "custom"):
            raise ValueError(f"unknown proposal kind {self.tag!r}")
        if (self.tag == "custom") != (self.factory is not None):
            raise ValueError("a factory is required for (and only for) custom proposals")


BOOTSTRAP = ProposalKind("bootstrap")
MARGINAL_BOOTSTRAP = ProposalKind("marginalized-bootstrap")


def resample_categorical(norm_weights, count: int, rng) -> np.ndarray:
    """``count`` iid draws from the categorical distribution on ``0..N-1``."""
    w = np.asarray(norm_weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("resampling weights must be finite and non-negative")
    c = np.cumsum(w)
    total = c[-1]
    if not total > 0:
        raise ValueError("resampling weights sum to zero")
    u = as_rng(rng).gen.random(count) * total
    return np.minimum(np.searchsorted(c, u, side="right"), w.size - 1)


def resample_systematic(norm_weights, count: int, rng) -> np.ndarray:
    """Systematic resampling: one uniform shared by ``count`` evenly spaced points."""
    w = np.asarray(norm_weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("resampling weights must be finite and non-negative")
    c = np.cumsum(w)
    if not c[-1] > 0:
        raise ValueError("resampling weights sum to zero")
    u = (as_rng(rng).gen.random() + np.arange(count)) / count * c[-1]
    return np.minimum(np.searchsorted(c, u, side="right"), w.size - 1)


_RESAMPLERS = {"multinomial": resample_categorical, "systematic": resample_systematic}


def _normalized(logw):
    m = np.max(logw)
    w = np.exp(logw - m)
    return w / w.sum()


def _log_normalized(lw):
    return lw - logsumexp(lw)


@dataclass
class ParticleSystem:
    """Output of one sweep.

    ``particles[t, i]`` is ``x_t^i`` and ``ancestors[t, i]`` the index (into
    row ``t - 1``) it was propagated from. Rows up to ``t_start`` hold the
    fixed prefix. ``hp`` holds each particle's final hyperparameters
    (marginal sweeps only).
    """

    particles: np.ndarray
    ancestors: np.ndarray
    log_weights: np.ndarray
    norm_weights: np.ndarray
    log_z_increments: np.ndarray
    hp: HyperParams | None = None
    t_start: int = 0
    step_log_weights: np.ndarray | None = None

    def filter_moments(self, fn=None):
        """Filtering mean and variance of ``fn(x_t)`` at every step (``fn`` defaults to identity).

        Row ``t`` uses the particles at step ``t`` with their weights before
        the next resampling; rows up to ``t_start`` are the fixed prefix.
        """
        v = self.particles if fn is None else fn(self.particles)
        lw = self.step_log_weights
        W = np.exp(lw - lw.max(axis=1, keepdims=True))
        W /= W.sum(axis=1, keepdims=True)
        live = W > 0
        with np.errstate(over="ignore", invalid="ignore"):
            mean = np.sum(np.where(live, W * np.where(live, v, 0.0), 0.0), axis=1)
            m2 = np.sum(np.where(live, W * np.where(live, v * v, 0.0), 0.0), axis=1)
        var = np.maximum(m2 - mean * mean, 0.0)
        return mean, var

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    @property
    def log_z(self) -> float:
        """Log of the normalizing-constant estimate ``prod_t (1/N) sum_i w_t^i``."""
        return float(np.sum(self.log_z_increments))

    def lineage(self, k) -> np.ndarray:
        """Particle indices ``(T+1, ...)`` of the ancestral line(s) ending at `k`."""
        k = np.asarray(k)
        idx = np.empty((self.T + 1,) + k.shape, dtype=np.int64)
        cur = k.astype(np.int64)
        for t in range(self.T, self.t_start, -1):
            idx[t] = cur
            cur = self.ancestors[t, cur]
        idx[: self.t_start + 1] = cur
        return idx

    def trajectory(self, k: int) -> np.ndarray:
        idx = self.lineage(k)
        return self.particles[np.arange(self.T + 1), idx]

    def trajectories(self) -> np.ndarray:
        """All ``N`` ancestral trajectories, shape ``(N, T+1)``."""
        idx = self.lineage(np.arange(self.N))
        return np.take_along_axis(self.particles, idx, axis=1).T

    def sample_index(self, rng) -> int:
        return int(resample_categorical(self.norm_weights, 1, rng)[0])


class ReferenceState:
    """A reference trajectory with its per-step statistics.

    ``s[t]``, ``r[t]`` are the statistics of step ``t`` (row 0 unused).
    `running_tails` yields the tails ``s'_{t+1:T}`` maintained by
    subtraction, exactly as the marginal ancestor-sampling step consumes
    them.
    """

    def __init__(self, x, s=None, r=None, t_start: int = 0):
        self.x = np.asarray(x, dtype=float)
        self.s = None if s is None else np.asarray(s, dtype=float)
        self.r = None if r is None else np.asarray(r, dtype=float)
        self.t_start = t_start

    @classmethod
    def from_trajectory(cls, model, x, y, theta_u=None, t_start: int = 0) -> ReferenceState:
        st = model.trajectory_stats(x, y, theta_u, t_start=t_start)
        return cls(x, st.s, st.r, t_start)

    @property
    def T(self) -> int:
        return len(self.x) - 1

    def tail(self, t: int) -> SuffStat:
        """``s'_{t+1:T}`` recomputed from scratch."""
        return SuffStat(self.s[t + 1 :].sum(axis=0), self.r[t + 1 :].sum(axis=0))

    def running_tails(self, t_from: int | None = None, t_to: int | None = None):
        """Yield ``(t, tail)`` for ``t = t_from+1 .. t_to`` with ``tail = s'_{t+1:T}`` maintained by subtraction."""
        t_from = self.t_start if t_from is None else t_from
        t_to = self.T if t_to is None else t_to
        ts, tr = self.tail_table(t_from)
        for t in range(t_from + 1, t_to + 1):
            yield t, SuffStat(ts[t], tr[t])

    def tail_table(self, t_from: int | None = None):
        """Rows ``t`` hold the running tails ``s'_{t+1:T}``, ``r'_{t+1:T}`` for ``t > t_from``.

        A cumulative sum over ``[total, -s_{t_from+1}, -s_{t_from+2}, ...]``
        performs the subtractions in sequence; the last row is snapped to zero.
        """
        t_from = self.t_start if t_from is None else t_from
        out = []
        for a in (self.s, self.r):
            steps = a[t_from + 1 :]
            tab = np.zeros_like(a)
            seq = np.concatenate([steps.sum(axis=0, keepdims=True), -steps], axis=0)
            tab[t_from:] = np.cumsum(seq, axis=0)
            tab[-1] = 0.0
            out.append(tab)
        return out[0], out[1]


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def _proposal_density(model, proposal, t, x_prev, theta, hp, theta_u) -> Density:
    if proposal.tag == "bootstrap":
        if theta is None:
            raise ValueError("the bootstrap proposal needs parameters; use the marginalized bootstrap")
        return model.transition(t, x_prev, theta)
    if proposal.tag == "marginalized-bootstrap":
        if hp is None:
            raise ValueError("the marginalized bootstrap proposal only applies to marginal sweeps")
        return model.marginal_transition(t, x_prev, hp, theta_u)
    return proposal.factory(t, x_prev, theta if hp is None else hp)


def _nan_to_neginf(a):
    return np.where(np.isnan(a), _NEG_INF, a)


def smc_weight(model, theta: dict, proposal: ProposalKind, path, y_t, t: int):
    """Log incremental weight ``log[gamma_t / (gamma_{t-1} q_t)]`` for paths ``(..., t+1)``."""
    path = np.asarray(path, dtype=float)
    x_prev, x = path[..., -2], path[..., -1]
    if proposal.tag == "bootstrap":
        with np.errstate(invalid="ignore", over="ignore"):
            return _nan_to_neginf(model.observation(t, x, theta).log_pdf(y_t))
    q = _proposal_density(model, proposal, t, x_prev, theta, None, None)
    with np.errstate(invalid="ignore", over="ignore"):
        return _nan_to_neginf(model.log_joint(t, x, x_prev, y_t, theta) - q.log_pdf(x))


def smc_weight_marginal(model, hp_prev: HyperParams, proposal: ProposalKind, path, y_t, t: int, theta_u=None):
    """Parameter-marginal log weight and updated hyperparameters.

    The numerator is the one-step predictive ``h_t g(chi_{t-1}, nu_{t-1}) / g(chi_t, nu_t)``.
    """
    path = np.asarray(path, dtype=float)
    x_prev, x = path[..., -2], path[..., -1]
    fam = model.family
    s, r, lh = model.step_stats(t, x, x_prev, y_t, theta_u)
    new = HyperParams(hp_prev.chi + s, hp_prev.nu + r)
    q = _proposal_density(model, proposal, t, x_prev, None, hp_prev, theta_u)
    with np.errstate(invalid="ignore", over="ignore"):
        lw = lh + fam.log_g_arrays(hp_prev.chi, hp_prev.nu) - fam.log_g_arrays(new.chi, new.nu) - q.log_pdf(x)
    return _nan_to_neginf(lw), new


def ancestor_weights_std(model, theta: dict, x_prev, log_wbar, x_ref_t, t: int):
    """Normalized log ancestor weights ``log wbar_{t-1}^i + log p(x'_t | x_{t-1}^i, theta)`` (Markov case)."""
    with np.errstate(invalid="ignore", over="ignore"):
        lw = np.asarray(log_wbar, dtype=float) + model.transition(t, x_prev, theta).log_pdf(x_ref_t)
    return _log_normalized(_nan_to_neginf(lw))


def ancestor_weights_marginal(
    model,
    hp_prev: HyperParams,
    log_wbar,
    x_prev,
    x_ref_t,
    y_t,
    t: int,
    tail: SuffStat,
    theta_u=None,
    lg_prev=None,
    recompute_tail: Callable[[], SuffStat] | None = None,
):
    """Normalized log ancestor weights for the parameter-marginal sweep.

    ``log wbar^i + log h_t^i + log g(chi_{t-1}^i, nu_{t-1}^i) - log g(chi_T^i, nu_T^i)``
    where ``chi_T^i = chi_{t-1}^i + s_t(x'_t, x_{t-1}^i, y_t) + s'_{t+1:T}``.
    The reference-only factors ``h'_k`` for ``k > t`` are common to all
    candidates and dropped.

    If cancellation in the maintained tail makes some ``chi_T^i`` invalid,
    the tail is recomputed with `recompute_tail` before giving up.
    """
    fam = model.family
    log_wbar = np.asarray(log_wbar, dtype=float)
    s, r, lh = model.step_stats(t, x_ref_t, x_prev, y_t, theta_u)
    if lg_prev is None:
        lg_prev = fam.log_g_arrays(hp_prev.chi, hp_prev.nu)
    base_chi = hp_prev.chi + s
    base_nu = hp_prev.nu + r
    with np.errstate(invalid="ignore", over="ignore"):
        lgT = fam.log_g_arrays(base_chi + tail.s, base_nu + tail.r)
    alive = np.isfinite(log_wbar) & np.isfinite(lh) & np.all(np.isfinite(s), axis=-1)
    bad = alive & ~np.isfinite(lgT)
    if np.any(bad):
        if recompute_tail is not None:
            fresh = recompute_tail()
            with np.errstate(invalid="ignore", over="ignore"):
                lgT = np.where(bad, fam.log_g_arrays(base_chi + fresh.s, base_nu + fresh.r), lgT)
            bad = alive & ~np.isfinite(lgT)
        if np.any(bad):
            raise InvalidHyperParams(f"ancestor-weight hyperparameters invalid at t={t} for particles {np.flatnonzero(bad)}")
    with np.errstate(invalid="ignore"):
        lw = np.where(alive, log_wbar + lh + lg_prev - lgT, _NEG_INF)
    return _log_normalized(_nan_to_neginf(lw))


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def _sweep(
    model,
    y,
    N: int,
    rng,
    *,
    theta=None,
    theta_u=None,
    marginal: bool,
    proposal: ProposalKind,
    ref: ReferenceState | None = None,
    ancestor_sampling: bool = False,
    t_start: int = 0,
    prefix=None,
    hp_start: HyperParams | None = None,
    t_end: int | None = None,
    terminal_log_factor: Callable | None = None,
    resampling: str = "multinomial",
    check: bool = False,
    backend: str = "auto",
) -> ParticleSystem:
    if backend not in ("auto", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "auto" and _fast_eligible(model, proposal, marginal, resampling, terminal_log_factor, check):
        return _sweep_fast(model, y, N, rng, theta=theta, marginal=marginal, ref=ref,
                           ancestor_sampling=ancestor_sampling, t_start=t_start, prefix=prefix,
                           hp_start=hp_start, t_end=t_end)
    rng = as_rng(rng)
    gen = rng.gen
    y = np.asarray(y, dtype=float)
    T = len(y) if t_end is None else int(t_end)
    if N < 1:
        raise ValueError("need at least one particle")
    if T < 1 or T <= t_start:
        raise ValueError("need at least one time step to process")
    if marginal and theta_u is None and model.theta_u_names:
        raise ValueError(f"marginal sweep needs values for {model.theta_u_names}")
    resample = _RESAMPLERS[resampling]
    cond = ref is not None
    if cond and len(ref.x) < T + 1:
        raise ValueError("reference trajectory is shorter than the sweep")
    fam = model.family
    LW = np.zeros((T + 1, N))

    X = np.empty((T + 1, N))
    A = np.empty((T + 1, N), dtype=np.int64)
    A[: t_start + 1] = np.arange(N)
    if t_start == 0:
        X[0] = model.initial().sample(rng, size=(N,))
        if cond:
            X[0, -1] = ref.x[0]
    else:
        X[: t_start + 1] = np.asarray(prefix, dtype=float)[: t_start + 1, None]

    if marginal:
        hp0 = model.prior_hp if hp_start is None else hp_start
        chi = np.tile(hp0.chi, (N, 1))
        nu = np.tile(hp0.nu, (N, 1))
        lg = np.full(N, float(fam.log_g_arrays(hp0.chi, hp0.nu)))
        use_tails = cond and ancestor_sampling
        if use_tails:
            if ref.s is None:
                raise ValueError("marginal ancestor sampling needs reference statistics")
            tails = ref.running_tails(t_start, len(ref.x) - 1)
    logw = np.zeros(N)
    logz_inc = np.zeros(T)
    log_n = np.log(N)

    for t in range(t_start + 1, T + 1):
        y_t = y[t - 1]
        W = _normalized(logw)
        x_last = X[t - 1]
        if cond:
            a = np.empty(N, dtype=np.int64)
            a[:-1] = resample(W, N - 1, rng)
            if ancestor_sampling:
                with np.errstate(divide="ignore"):
                    log_wbar = np.log(W)
                if marginal:
                    _, tail = next(tails)
                    if check:
                        fresh = ref.tail(t)
                        if not np.allclose(tail.s, fresh.s, rtol=1e-8, atol=1e-8):
                            raise AssertionError(f"running tail drifted from its recomputation at t={t}")
                    lw_as = ancestor_weights_marginal(
                        model, HyperParams(chi, nu), log_wbar, x_last, ref.x[t], y_t, t, tail,
                        theta_u, lg_prev=lg, recompute_tail=lambda t=t: ref.tail(t),
                    )
                else:
                    lw_as = ancestor_weights_std(model, theta, x_last, log_wbar, ref.x[t], t)
                a[-1] = resample(np.exp(lw_as), 1, rng)[0]
            else:
                a[-1] = N - 1
        else:
            a = resample(W, N, rng)

        x_prev = x_last[a]
        if marginal:
            chi_prev, nu_prev, lg_prev = chi[a], nu[a], lg[a]
            hp_prev = HyperParams(chi_prev, nu_prev)
            q = _proposal_density(model, proposal, t, x_prev, None, hp_prev, theta_u)
        else:
            q = _proposal_density(model, proposal, t, x_prev, theta, None, None)
        x_new = np.asarray(q.sample(rng), dtype=float)
        if cond:
            x_new[-1] = ref.x[t]

        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            if marginal:
                s, r, lh = model.step_stats(t, x_new, x_prev, y_t, theta_u)
                chi = chi_prev + s
                nu = nu_prev + r
                lg = fam.log_g_arrays(chi, nu)
                lw = lh + lg_prev - lg
                if proposal.tag != "bootstrap":
                    lw = lw - q.log_pdf(x_new)
            elif proposal.tag == "bootstrap":
                lw = model.observation(t, x_new, theta).log_pdf(y_t)
            else:
                lw = model.log_joint(t, x_new, x_prev, y_t, theta) - q.log_pdf(x_new)
            if terminal_log_factor is not None and t == T:
                lw = lw + terminal_log_factor(x_new)
        lw = np.where(np.isnan(lw), _NEG_INF, lw)
        lse = logsumexp(lw)
        if not np.isfinite(lse):
            raise WeightCollapse(t)
        logz_inc[t - 1] = lse - log_n
        logw = lw
        X[t] = x_new
        A[t] = a
        LW[t] = lw

    return ParticleSystem(
        particles=X,
        ancestors=A,
        log_weights=logw,
        norm_weights=_normalized(logw),
        log_z_increments=logz_inc,
        hp=HyperParams(chi, nu) if marginal else None,
        t_start=t_start,
        step_log_weights=LW,
    )


def _fast_eligible(model, proposal, marginal, resampling, terminal_log_factor, check):
    if getattr(model, "kernels", None) is None or resampling != "multinomial":
        return False
    if terminal_log_factor is not None or check:
        return False
    return proposal.tag == ("marginalized-bootstrap" if marginal else "bootstrap")


def _pick_from_uniform(p, u):
    c = np.cumsum(p)
    return min(int(np.searchsorted(c, u * c[-1], side="right")), p.size - 1)


def _sweep_fast(model, y, N, rng, *, theta, marginal, ref, ancestor_sampling, t_start, prefix, hp_start, t_end):
    """Same algorithm as `_sweep`, with the per-particle loops compiled (see `_kernels`)."""
    from . import _kernels as K

    rng = as_rng(rng)
    gen = rng.gen
    f, h, fp = model.kernels
    sel_c, wt_c, sel_m, wt_m = K.kernels_for(f, h)
    y = np.asarray(y, dtype=float)
    T = len(y) if t_end is None else int(t_end)
    if N < 1:
        raise ValueError("need at least one particle")
    if T < 1 or T <= t_start:
        raise ValueError("need at least one time step to process")
    cond = ref is not None
    anc = cond and ancestor_sampling
    if cond and len(ref.x) < T + 1:
        raise ValueError("reference trajectory is shorter than the sweep")
    if not marginal:
        s2v, s2w = float(theta["sigma2_v"]), float(theta["sigma2_w"])
        Density.gaussian(0.0, s2v)
        Density.gaussian(0.0, s2w)
    LW = np.zeros((T + 1, N))

    X = np.empty((T + 1, N))
    A = np.empty((T + 1, N), dtype=np.int64)
    A[: t_start + 1] = np.arange(N)
    if t_start == 0:
        X[0] = model.initial().sample(rng, size=(N,))
        if cond:
            X[0, -1] = ref.x[0]
    else:
        X[: t_start + 1] = np.asarray(prefix, dtype=float)[: t_start + 1, None]

    fam = model.family
    if marginal:
        hp0 = model.prior_hp if hp_start is None else hp_start
        chi = np.tile(hp0.chi, (N, 1)).astype(float)
        nu = np.tile(hp0.nu, (N, 1)).astype(float)
        lgc = np.empty((N, 2))
        for k, blk in enumerate(fam.blocks):
            lgc[:, k] = float(blk.log_g_arrays(hp0.chi[k : k + 1], hp0.nu[k : k + 1]))
        zero = np.zeros(fam.chi_dim), np.zeros(fam.nu_dim)
        if anc:
            if ref.s is None:
                raise ValueError("marginal ancestor sampling needs reference statistics")
            tail_s, tail_r = ref.tail_table(t_start)
    logz_inc = np.zeros(T)
    n_res = N - 1 if cond else N
    if marginal:
        bufs = [(chi, nu, lgc), (np.empty_like(chi), np.empty_like(nu), np.empty_like(lgc))]

    for t in range(t_start + 1, T + 1):
        y_t = float(y[t - 1])
        x_last = X[t - 1]
        logw = LW[t - 1]
        a = A[t]
        u_res = gen.random(n_res)
        u_as = float(gen.random(1)[0]) if anc else 0.0
        xr = float(ref.x[t]) if cond else 0.0
        if marginal:
            if anc:
                ts, tr = tail_s[t], tail_r[t]
            else:
                ts, tr = zero
            ok, shared = sel_m(x_last, logw, chi, nu, lgc, u_res, u_as, xr, y_t, float(t), ts, tr, cond, anc, fp, a)
            if not ok:
                with np.errstate(divide="ignore"):
                    log_wbar = np.log(_normalized(logw))
                lw_as = ancestor_weights_marginal(
                    model, HyperParams(chi, nu), log_wbar, x_last, xr, y_t, t, SuffStat(ts, tr),
                    lg_prev=lgc.sum(axis=1), recompute_tail=lambda t=t: ref.tail(t),
                )
                a[-1] = _pick_from_uniform(np.exp(lw_as), u_as)
                shared = np.nan
            elif a[-1] < 0:
                raise WeightCollapse(t, "no candidate ancestor can reach the reference state")
            # a shared scalar dof consumes the stream exactly like the array form, only faster
            tdraw = gen.standard_t(2.0 * shared if shared == shared else 2.0 * nu[a, 0], size=(N,))
            chi_o, nu_o, lgc_o = bufs[(t - t_start) % 2]
            lz = wt_m(x_last, a, tdraw, chi, nu, lgc, xr, cond, anc, float(t), y_t, fp, X[t], chi_o, nu_o, lgc_o, LW[t])
            chi, nu, lgc = chi_o, nu_o, lgc_o
        else:
            sel_c(x_last, logw, u_res, u_as, xr, float(t), s2v, cond, anc, fp, a)
            if a[-1] < 0:
                raise WeightCollapse(t, "no candidate ancestor can reach the reference state")
            z = gen.standard_normal((N,))
            lz = wt_c(x_last, a, z, xr, cond, float(t), y_t, s2v, s2w, fp, X[t], LW[t])
        if not lz > -np.inf:
            raise WeightCollapse(t)
        logz_inc[t - 1] = lz

    logw = LW[T]
    return ParticleSystem(
        particles=X,
        ancestors=A,
        log_weights=logw,
        norm_weights=_normalized(logw),
        log_z_increments=logz_inc,
        hp=HyperParams(chi.copy(), nu.copy()) if marginal else None,
        t_start=t_start,
        step_log_weights=LW,
    )


def run_smc(model, y, N: int, rng, theta=None, *, marginal: bool = False, theta_u=None, proposal=None,
            resampling: str = "multinomial", backend: str = "auto") -> ParticleSystem:
    """Unconditional SMC, parameter-conditional (`theta`) or parameter-marginal (``marginal=True``)."""
    if not marginal and theta is None:
        raise ValueError("pass theta for a parameter-conditional sweep or marginal=True")
    if proposal is None:
        proposal = MARGINAL_BOOTSTRAP if marginal else BOOTSTRAP
    return _sweep(model, y, N, rng, theta=theta, theta_u=theta_u, marginal=marginal,
                  proposal=proposal, resampling=resampling, backend=backend)


def run_csmc(model, y, N: int, ref: ReferenceState, rng, theta=None, *, marginal: bool = False, theta_u=None,
             proposal=None, ancestor_sampling: bool = False, check: bool = False, backend: str = "auto"):
    """Conditional SMC; returns ``(ParticleSystem, new ReferenceState)``.

    The new reference is drawn from the final normalized weights and its
    statistics are recomputed from scratch.
    """
    if not marginal and theta is None:
        raise ValueError("pass theta for a parameter-conditional sweep or marginal=True")
    if proposal is None:
        proposal = MARGINAL_BOOTSTRAP if marginal else BOOTSTRAP
    if marginal and ancestor_sampling and ref.s is None:
        ref = ReferenceState.from_trajectory(model, ref.x, y, theta_u)
    rng = as_rng(rng)
    ps = _sweep(model, y, N, rng, theta=theta, theta_u=theta_u, marginal=marginal, proposal=proposal,
                ref=ref, ancestor_sampling=ancestor_sampling, check=check, backend=backend)
    x_new = ps.trajectory(ps.sample_index(rng))
    new_ref = ReferenceState.from_trajectory(model, x_new, y, theta_u) if marginal else ReferenceState(x_new)
    return ps, new_ref
