"""Forward-process noise schedules and their marginal statistics.

A schedule is the pair of coefficient functions (f, g) of the forward SDE

    dx = -f(t) x dt + g(t) dW.

Conditioned on x_0, the forward marginal at time t is Gaussian with mean
phi_f(t) x_0 and covariance phi_fg(t) I, where

    phi_f(t)  = exp(-int_0^t f(s) ds),
    phi_fg(t) = int_0^t exp(-2 int_s^t f(u) du) g(s)^2 ds.

The built-in variance-preserving schedule f(t) = t/2, g(t) = sqrt(t) has
closed forms phi_f = exp(-t^2/4) and phi_fg = 1 - exp(-t^2/2); generic
schedules are integrated with composite Simpson quadrature.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NegativeTimeError, NonPositiveStepError


class ScheduleKind(enum.Enum):
    VP_LINEAR = "vp-linear"
    GENERIC = "generic"


@dataclass(frozen=True)
class Schedule:
    """Noise schedule with memoized marginal statistics.

    Attributes
    ----------
    kind : ScheduleKind
        VP_LINEAR uses closed-form marginals; GENERIC integrates numerically.
    f, g : callable
        Drift and diffusion coefficient functions of forward time.
    quadrature_step : float
        Target Simpson panel width for GENERIC marginals (unused by VP_LINEAR).
    """

    kind: ScheduleKind
    f: Callable[[float], float]
    g: Callable[[float], float]
    quadrature_step: float = 1e-3
    _cache: dict = field(default_factory=dict, repr=False, compare=False)


def make_vp_schedule() -> Schedule:
    """Variance-preserving schedule f(t) = t/2, g(t) = sqrt(t)."""
    return Schedule(
        kind=ScheduleKind.VP_LINEAR,
        f=lambda t: 0.5 * t,
        g=lambda t: math.sqrt(t),
    )


def make_generic_schedule(f, g, quadrature_step: float = 1e-3) -> Schedule:
    """Schedule with arbitrary coefficients, marginals via quadrature.

    Parameters
    ----------
    f, g : callable
        Scalar coefficient functions of forward time t >= 0.
    quadrature_step : float
        Target panel width of the composite Simpson rule; must be positive.
    """
    if not quadrature_step > 0:
        raise NonPositiveStepError(
            f"quadrature_step must be positive, got {quadrature_step}"
        )
    return Schedule(kind=ScheduleKind.GENERIC, f=f, g=g, quadrature_step=quadrature_step)


def _generic_marginals(sched: Schedule, t: float):
    """Simpson quadrature for (phi_f, phi_fg) on a generic schedule.

    F(s) = int_0^s f is accumulated per panel with midpoint Simpson on a grid
    of half the panel width, so F is 4th-order accurate at every outer node;
    the outer integral int_0^t exp(2 F(s)) g(s)^2 ds then reuses those nodes
    in a composite Simpson pass of the same order.
    """
    n_panels = max(2, 2 * math.ceil(t / (2.0 * sched.quadrature_step)))
    s = np.linspace(0.0, t, 2 * n_panels + 1)  # fine grid, step t / (2 n)
    fs = np.array([sched.f(v) for v in s])
    dh = t / (2.0 * n_panels)
    # cumulative F at even fine nodes (= outer nodes), one Simpson per pair
    increments = (dh / 3.0) * (fs[0:-1:2] + 4.0 * fs[1::2] + fs[2::2])
    big_f = np.concatenate([[0.0], np.cumsum(increments)])
    phi_f = math.exp(-big_f[-1])
    nodes = s[0::2]
    gs = np.array([sched.g(v) for v in nodes])
    integrand = np.exp(2.0 * (big_f - big_f[-1])) * gs**2
    w = np.ones(n_panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    phi_fg = (t / n_panels / 3.0) * float(w @ integrand)
    return phi_f, phi_fg


def marginal_params(sched: Schedule, t: float):
    """Return (phi_f(t), phi_fg(t)) for the forward marginal at time t.

    Results are memoized on the schedule, keyed by the exact float t.
    """
    t = float(t)
    if t < 0:
        raise NegativeTimeError(f"marginal time must be nonnegative, got {t}")
    if t == 0.0:
        return 1.0, 0.0
    hit = sched._cache.get(t)
    if hit is not None:
        return hit
    if sched.kind is ScheduleKind.VP_LINEAR:
        out = (math.exp(-(t * t) / 4.0), -math.expm1(-(t * t) / 2.0))
    else:
        out = _generic_marginals(sched, t)
    sched._cache[t] = out
    return out
