"""Reverse-time SDE samplers: Euler-Maruyama and a strong order-3/2 SRK.

The reverse process integrated on the clock t in [0, T] is

    dy = [f(tau) y + g(tau)^2 s(tau, y)] dt + g(tau) dW,   tau = T - t,

started from either N(0, phi_fg(T) I) or the exact terminal law of the
forward process. Euler-Maruyama consumes only the Brownian increments dW;
the stochastic Runge-Kutta scheme additionally consumes the scaled time
integrals beta = h^{-3/2} int (W_s - W_{t_k}) ds, drawn jointly with dW as

    dW = sqrt(h) z1,   beta = z1 / 2 + z2 / (2 sqrt(3)),

which reproduces Var(dW) = h, Var(beta) = 1/3, Cov(dW, sqrt(h) beta) = h/2.

All randomness is addressed by (seed, tag, step, sample, coordinate), so a
batch is bit-identical no matter how it is chunked across workers.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import (
    NegativeTimeError,
    NonFiniteStateError,
    NonPositiveStepError,
    NoSamplesError,
    UnsupportedDataError,
)
from .schedules import Schedule, marginal_params
from .score import GaussianMixture, ScoreMeter, ScoreModel

_SQRT3 = math.sqrt(3.0)


class SamplerKind(enum.Enum):
    EM = "em"
    SRK15 = "srk15"


class InitKind(enum.Enum):
    STANDARD_NORMAL_SIGMA_T = "sigma"
    EXACT_TERMINAL = "exact"


# context words separating the random streams of the two sampler families
_SAMPLER_CONTEXT = {SamplerKind.EM: 1, SamplerKind.SRK15: 2}


@dataclass(frozen=True)
class TimeGrid:
    """Uniform reverse-time grid with K steps on [0, T].

    tau(k) = T - k h is the forward time matched to reverse-clock node k;
    tau(0) = T and tau(K) = 0 exactly. K = 0 is the degenerate grid with no
    integration steps (initial draws only).
    """

    T: float
    K: int

    def __post_init__(self):
        if not self.T > 0:
            raise NegativeTimeError(f"terminal time must be positive, got {self.T}")
        if self.K < 0:
            raise NonPositiveStepError(f"step count must be nonnegative, got {self.K}")

    @property
    def h(self) -> float:
        return self.T / self.K if self.K > 0 else 0.0

    @property
    def tau(self) -> np.ndarray:
        """Forward times at the K+1 grid nodes, decreasing from T to 0."""
        if self.K == 0:
            return np.array([self.T])
        return np.linspace(self.T, 0.0, self.K + 1)


@dataclass(frozen=True)
class BrownianDraw:
    """Joint increment draw for one step: dW and beta, each (n, d)."""

    dw: np.ndarray
    beta: np.ndarray


@dataclass
class SampleBatch:
    """An (n, d) batch of samples plus provenance metadata.

    unstable batches keep the last finite value of each diverged row and
    record the first step index at which any row stopped being finite.
    """

    data: np.ndarray
    meta: dict = field(default_factory=dict)
    stable: bool = True
    first_bad_step: int | None = None


def draw_increments(stream: rng.CounterStream, h: float, step: int, sample_ids, dim: int) -> BrownianDraw:
    """Draw (dW, beta) jointly for one step at the given sample addresses."""
    if not h > 0:
        raise NonPositiveStepError(f"step size must be positive, got {h}")
    z1 = stream.normals(rng.TAG_ZETA1, step, sample_ids, dim)
    z2 = stream.normals(rng.TAG_ZETA2, step, sample_ids, dim)
    return BrownianDraw(dw=math.sqrt(h) * z1, beta=0.5 * z1 + z2 / (2.0 * _SQRT3))


def _em_update(y, tau, h, sched, score):
    f_v = sched.f(tau)
    g_v = sched.g(tau)
    return y + (f_v * y + g_v * g_v * score) * h


def em_step(y, k: int, grid: TimeGrid, sched: Schedule, model: ScoreModel, draw: BrownianDraw):
    """One Euler-Maruyama step from node k; raises on non-finite states."""
    tau = grid.tau[k]
    s = model.evaluate(tau, y)
    out = _em_update(y, tau, grid.h, sched, s) + sched.g(tau) * draw.dw
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(f"non-finite state after EM step {k}")
    return out


def srk_step(
    y,
    k: int,
    grid: TimeGrid,
    sched: Schedule,
    model: ScoreModel,
    draw: BrownianDraw,
    g_next: float | None = None,
):
    """One strong order-3/2 SRK step from node k.

    With a(t, x) = f(tau) x + g(tau)^2 s(tau, x) and b(t) = g(tau):

        Q  = y + (h/2) a(t_k, y)
        Q* = Q + (3/2) b(t_k) sqrt(h) beta
        P  = b(t_k) dW + (b(t_{k+1}) - b(t_k)) (dW - sqrt(h) beta)
        y' = y + (h/3) [a(t_k + h/2, Q) + 2 a(t_k + h/2, Q*)] + P

    g_next overrides b(t_{k+1}); by default it is read off the schedule.
    """
    taus = grid.tau
    tau0 = taus[k]
    tau1 = taus[k + 1]
    tau_mid = 0.5 * (tau0 + tau1)
    h = grid.h
    b0 = sched.g(tau0)
    b1 = sched.g(tau1) if g_next is None else float(g_next)
    sqh = math.sqrt(h)

    a0 = sched.f(tau0) * y + sched.g(tau0) ** 2 * model.evaluate(tau0, y)
    q = y + 0.5 * h * a0
    q_star = q + 1.5 * b0 * sqh * draw.beta
    f_mid = sched.f(tau_mid)
    g2_mid = sched.g(tau_mid) ** 2
    a_q = f_mid * q + g2_mid * model.evaluate(tau_mid, q)
    a_qs = f_mid * q_star + g2_mid * model.evaluate(tau_mid, q_star)
    p = b0 * draw.dw + (b1 - b0) * (draw.dw - sqh * draw.beta)
    out = y + (h / 3.0) * (a_q + 2.0 * a_qs) + p
    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(f"non-finite state after SRK step {k}")
    return out


def _init_chunk(stream, grid, sched, model, init, ids):
    d = model.mixture.dim
    phi_f, phi_fg = marginal_params(sched, grid.T)
    if init is InitKind.STANDARD_NORMAL_SIGMA_T:
        return math.sqrt(phi_fg) * stream.normals(rng.TAG_INIT, 0, ids, d)
    x0 = model.mixture.sample_at(stream, ids)
    z = stream.normals(rng.TAG_INIT, 0, ids, d)
    return phi_f * x0 + math.sqrt(phi_fg) * z


def _run_chunk(stream, grid, sched, model, sampler, init, ids):
    """Integrate one chunk of trajectories; returns (y, meter, first_bad)."""
    meter = ScoreMeter()
    y = _init_chunk(stream, grid, sched, model, init, ids)
    h = grid.h
    taus = grid.tau
    sqh = math.sqrt(h) if grid.K > 0 else 0.0
    alive = np.ones(y.shape[0], dtype=bool)
    first_bad = None
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(grid.K):
            draw = draw_increments(stream, h, k, ids, y.shape[1])
            tau0 = taus[k]
            if sampler is SamplerKind.EM:
                s = model.evaluate(tau0, y, meter=meter)
                y_new = _em_update(y, tau0, h, sched, s) + sched.g(tau0) * draw.dw
            else:
                tau1 = taus[k + 1]
                tau_mid = 0.5 * (tau0 + tau1)
                b0 = sched.g(tau0)
                b1 = sched.g(tau1)
                a0 = sched.f(tau0) * y + sched.g(tau0) ** 2 * model.evaluate(tau0, y, meter=meter)
                q = y + 0.5 * h * a0
                q_star = q + 1.5 * b0 * sqh * draw.beta
                f_mid = sched.f(tau_mid)
                g2_mid = sched.g(tau_mid) ** 2
                a_q = f_mid * q + g2_mid * model.evaluate(tau_mid, q, meter=meter)
                a_qs = f_mid * q_star + g2_mid * model.evaluate(tau_mid, q_star, meter=meter)
                p = b0 * draw.dw + (b1 - b0) * (draw.dw - sqh * draw.beta)
                y_new = y + (h / 3.0) * (a_q + 2.0 * a_qs) + p
            bad = ~np.all(np.isfinite(y_new), axis=1) & alive
            if np.any(bad):
                y_new[bad] = y[bad]  # freeze diverged rows at last finite state
                alive &= ~bad
                if first_bad is None:
                    first_bad = k
            y_new[~alive] = y[~alive]
            y = y_new
    return y, meter, first_bad


def sample_reverse(
    sched: Schedule,
    grid: TimeGrid,
    model: ScoreModel,
    n: int,
    seed: int,
    sampler: SamplerKind = SamplerKind.EM,
    init: InitKind = InitKind.STANDARD_NORMAL_SIGMA_T,
    workers: int = 1,
    chunk_size: int = 16384,
) -> SampleBatch:
    """Simulate n reverse trajectories and return their terminal states.

    Randomness is addressed per (sample, step, coordinate) under `seed` and
    a per-sampler context, so results are bit-identical for any `workers`
    or `chunk_size`. Diverged trajectories freeze at their last finite state
    and mark the batch unstable with the first failing step index.

    With K = 0 the initial draws themselves are returned.
    """
    if n < 1:
        raise NoSamplesError("need at least one trajectory")
    stream = rng.CounterStream(seed, context=_SAMPLER_CONTEXT[sampler])
    all_ids = np.arange(n, dtype=np.uint64)
    chunks = [all_ids[i : i + chunk_size] for i in range(0, n, chunk_size)]
    run = lambda ids: _run_chunk(stream, grid, sched, model, sampler, init, ids)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(ids) for ids in chunks]
    data = np.concatenate([r[0] for r in results], axis=0)
    for r in results:  # merge meters in chunk order: deterministic reduction
        model.meter.merge(r[1])
    bad_steps = [r[2] for r in results if r[2] is not None]
    first_bad = min(bad_steps) if bad_steps else None
    meta = {
        "seed": int(seed),
        "sampler": sampler.value,
        "schedule": sched.kind.value,
        "h": grid.h,
        "T": grid.T,
        "init": init.value,
        "score_model": model.describe(),
    }
    return SampleBatch(data=data, meta=meta, stable=first_bad is None, first_bad_step=first_bad)


def forward_marginal_sample(
    mix: GaussianMixture, sched: Schedule, t: float, n: int, seed: int, chunk_size: int = 65536
) -> SampleBatch:
    """Draw n exact samples of the forward marginal at time t."""
    if n < 1:
        raise NoSamplesError("need at least one sample")
    phi_f, phi_fg = marginal_params(sched, t)
    stream = rng.CounterStream(seed)
    out = np.empty((n, mix.dim))
    for lo in range(0, n, chunk_size):
        ids = np.arange(lo, min(lo + chunk_size, n), dtype=np.uint64)
        x0 = mix.sample_at(stream, ids)
        if phi_fg > 0.0:
            z = stream.normals(rng.TAG_INIT, 0, ids, mix.dim)
            out[lo : lo + len(ids)] = phi_f * x0 + math.sqrt(phi_fg) * z
        else:
            out[lo : lo + len(ids)] = phi_f * x0
    meta = {"seed": int(seed), "t": float(t), "schedule": sched.kind.value, "kind": "forward-marginal"}
    return SampleBatch(data=out, meta=meta)


def _affine_score_coeffs(sched, tau, mu0, var0):
    """Score of N(mu0, var0) data is affine: s(tau, y) = -(y - phi_f mu0)/v."""
    phi_f, phi_fg = marginal_params(sched, tau)
    v = phi_f * phi_f * var0 + phi_fg
    g2 = sched.g(tau) ** 2
    alpha = sched.f(tau) - g2 / v
    gamma = g2 * phi_f * mu0 / v
    return alpha, gamma


def moment_oracle_gaussian(
    sched: Schedule,
    grid: TimeGrid,
    data_mean: float,
    data_var: float,
    sampler: SamplerKind = SamplerKind.EM,
    init: InitKind = InitKind.STANDARD_NORMAL_SIGMA_T,
):
    """Exact per-node mean and variance of the discrete chain, 1-d Gaussian data.

    For Gaussian data the reverse drift is affine in the state, so each
    scheme's update maps a Gaussian law to a Gaussian law; this propagates
    (m_k, v_k) through the *discrete* update exactly. Returns arrays of
    length K + 1 aligned with the grid nodes.
    """
    if np.ndim(data_mean) != 0 or np.ndim(data_var) != 0:
        raise UnsupportedDataError("moment oracle supports scalar 1-d Gaussian data only")
    mu0 = float(data_mean)
    var0 = float(data_var)
    if not var0 > 0:
        raise UnsupportedDataError("data variance must be positive")
    if sampler not in (SamplerKind.EM, SamplerKind.SRK15):
        raise UnsupportedDataError(f"unknown sampler {sampler!r}")
    phi_f_T, phi_fg_T = marginal_params(sched, grid.T)
    if init is InitKind.STANDARD_NORMAL_SIGMA_T:
        m, v = 0.0, phi_fg_T
    else:
        m, v = phi_f_T * mu0, phi_f_T * phi_f_T * var0 + phi_fg_T
    means = [m]
    variances = [v]
    h = grid.h
    taus = grid.tau
    sqh = math.sqrt(h) if grid.K > 0 else 0.0
    for k in range(grid.K):
        tau0 = taus[k]
        if sampler is SamplerKind.EM:
            alpha, gamma = _affine_score_coeffs(sched, tau0, mu0, var0)
            c = 1.0 + h * alpha
            g_v = sched.g(tau0)
            m = c * m + h * gamma
            v = c * c * v + g_v * g_v * h
        else:
            tau1 = taus[k + 1]
            tau_mid = 0.5 * (tau0 + tau1)
            a0, g0 = _affine_score_coeffs(sched, tau0, mu0, var0)
            am, gm = _affine_score_coeffs(sched, tau_mid, mu0, var0)
            b0 = sched.g(tau0)
            b1 = sched.g(tau1)
            big_a = 1.0 + h * am * (1.0 + 0.5 * h * a0)
            big_b = h * (0.5 * h * am * g0 + gm)
            # noise = b1 dW + (h am b0 - (b1 - b0)) sqrt(h) beta, in (z1, z2):
            r = (h * am * b0 - (b1 - b0)) * sqh
            c1 = b1 * sqh + 0.5 * r
            c2 = r / (2.0 * _SQRT3)
            m = big_a * m + big_b
            v = big_a * big_a * v + c1 * c1 + c2 * c2
        means.append(m)
        variances.append(v)
    return np.array(means), np.array(variances)
