"""Exact scores of Gaussian-mixture data under a forward noise schedule.

If the data distribution is a Gaussian mixture sum_k xi_k N(mu_k, Sigma_k),
the forward marginal at time t is again a mixture with component means
phi_f(t) mu_k and covariances Sigma_{k,t} = phi_f(t)^2 Sigma_k + phi_fg(t) I,
so the score grad_x log p_t(x) is available in closed form:

    s(t, x) = - sum_k w_k(x) Sigma_{k,t}^{-1} (x - phi_f(t) mu_k),

with w_k the posterior component responsibilities. All mixture computations
run in log space with max subtraction, so scores stay finite far into the
tails.

ScoreModel wraps the exact score with optional controlled perturbations and
meters the true deviation ||s - s_model|| along whatever trajectory calls it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import rng
from .errors import (
    DimensionMismatchError,
    NoSamplesError,
    RevsdeError,
    SingularCovarianceError,
)
from .schedules import Schedule, marginal_params

_LOG_2PI = math.log(2.0 * math.pi)


class CovarianceKind(enum.Enum):
    DIAGONAL = "diagonal"
    FULL = "full"


@dataclass(frozen=True)
class Covariance:
    """One mixture component covariance, diagonal vector or full matrix."""

    kind: CovarianceKind
    data: np.ndarray

    def validate(self, dim: int):
        if self.kind is CovarianceKind.DIAGONAL:
            if self.data.shape != (dim,):
                raise DimensionMismatchError(
                    f"diagonal covariance has shape {self.data.shape}, expected ({dim},)"
                )
            if not np.all(self.data > 0):
                raise SingularCovarianceError("diagonal covariance has entries <= 0")
        else:
            if self.data.shape != (dim, dim):
                raise DimensionMismatchError(
                    f"full covariance has shape {self.data.shape}, expected ({dim}, {dim})"
                )
            if not np.allclose(self.data, self.data.T, rtol=0, atol=1e-12 * _specnorm(self.data)):
                raise SingularCovarianceError("full covariance is not symmetric")
            try:
                np.linalg.cholesky(self.data)
            except np.linalg.LinAlgError as e:
                raise SingularCovarianceError("full covariance is not positive definite") from e


def _specnorm(a):
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def diagonal_covariance(variances) -> Covariance:
    return Covariance(CovarianceKind.DIAGONAL, np.asarray(variances, dtype=np.float64))

def full_covariance(matrix) -> Covariance:
    return Covariance(CovarianceKind.FULL, np.asarray(matrix, dtype=np.float64))


@dataclass(frozen=True)
class GaussianMixture:
    """Gaussian mixture with strictly positive weights summing to one.

    Parameters
    ----------
    weights : (m,) array
    means : (m, d) array
    covariances : tuple of m Covariance entries

    Set validate=False only to construct deliberately broken mixtures in
    tests; every public constructor path validates.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: tuple
    validate: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "covariances", tuple(self.covariances))
        if not self.validate:
            return
        if self.means.ndim != 2:
            raise DimensionMismatchError("means must be an (m, d) array")
        m, d = self.means.shape
        if m < 1:
            raise RevsdeError("mixture needs at least one component")
        if self.weights.shape != (m,) or len(self.covariances) != m:
            raise DimensionMismatchError("weights, means, covariances disagree on component count")
        if not np.all(self.weights > 0):
            raise RevsdeError("mixture weights must be strictly positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise RevsdeError("mixture weights must sum to 1 within 1e-12")
        for cov in self.covariances:
            cov.validate(d)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def moments(self):
        """Exact mean and full covariance of the mixture."""
        mu = self.weights @ self.means
        d = self.dim
        cov = np.zeros((d, d))
        for w, m, c in zip(self.weights, self.means, self.covariances):
            cm = np.diag(c.data) if c.kind is CovarianceKind.DIAGONAL else c.data
            dm = m - mu
            cov += w * (cm + np.outer(dm, dm))
        return mu, cov

    def sample_at(self, stream: "rng.CounterStream", sample_ids) -> np.ndarray:
        """Draw data samples at explicit counter addresses."""
        ids = np.asarray(sample_ids, dtype=np.uint64)
        n = ids.shape[0]
        z = stream.normals(rng.TAG_DATA, 0, ids, self.dim)
        if self.n_components == 1:
            comp = np.zeros(n, dtype=np.intp)
        else:
            u = stream.uniforms(rng.TAG_COMPONENT, 0, ids, 1)[:, 0]
            comp = np.searchsorted(np.cumsum(self.weights), u, side="right")
            comp = np.minimum(comp, self.n_components - 1)
        x = np.empty((n, self.dim))
        for k in range(self.n_components):
            rows = comp == k
            if not np.any(rows):
                continue
            c = self.covariances[k]
            if c.kind is CovarianceKind.DIAGONAL:
                x[rows] = self.means[k] + z[rows] * np.sqrt(c.data)
            else:
                chol = np.linalg.cholesky(c.data)
                x[rows] = self.means[k] + z[rows] @ chol.T
        return x

    def sample(self, n: int, seed: int, context: int = 0) -> np.ndarray:
        """Draw n data samples via the counter-based stream for `seed`."""
        if n < 1:
            raise NoSamplesError("need at least one sample")
        stream = rng.CounterStream(seed, context=context)
        return self.sample_at(stream, np.arange(n, dtype=np.uint64))


def single_gaussian(mean, cov: Covariance) -> GaussianMixture:
    """Convenience constructor for a one-component mixture."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return GaussianMixture(np.array([1.0]), mean[None, :], (cov,))


def _component_terms(mix: GaussianMixture, phi_f: float, phi_fg: float):
    """Per-component solve data at marginal parameters (phi_f, phi_fg).

    Memoized on the mixture; the cache key is the exact float pair, which the
    samplers hit repeatedly at the grid nodes.
    """
    key = (phi_f, phi_fg)
    hit = mix._cache.get(key)
    if hit is not None:
        return hit
    terms = []
    pf2 = phi_f * phi_f
    for cov in mix.covariances:
        if cov.kind is CovarianceKind.DIAGONAL:
            v = pf2 * cov.data + phi_fg
            if not np.all(v > 0):
                raise SingularCovarianceError("marginal component covariance is singular")
            terms.append((CovarianceKind.DIAGONAL, v, float(np.log(v).sum())))
        else:
            sigma_t = pf2 * cov.data + phi_fg * np.eye(cov.data.shape[0])
            try:
                chol = np.linalg.cholesky(sigma_t)
            except np.linalg.LinAlgError as e:
                raise SingularCovarianceError("marginal component covariance is singular") from e
            logdet = 2.0 * float(np.log(np.diagonal(chol)).sum())
            terms.append((CovarianceKind.FULL, chol, logdet))
    mix._cache[key] = terms
    return terms


def _mixture_parts(mix: GaussianMixture, sched: Schedule, t: float, x):
    """Shared core: responsibilities, per-component solves, log density."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n, d = x.shape
    if d != mix.dim:
        raise DimensionMismatchError(f"x has dimension {d}, mixture has {mix.dim}")
    if n < 1:
        raise NoSamplesError("x must contain at least one row")
    phi_f, phi_fg = marginal_params(sched, t)
    terms = _component_terms(mix, phi_f, phi_fg)
    m = mix.n_components
    logd = np.empty((m, n))
    sols = np.empty((m, n, d))
    for k in range(m):
        kind, fac, logdet = terms[k]
        delta = x - phi_f * mix.means[k]
        if kind is CovarianceKind.DIAGONAL:
            sol = delta / fac
        else:
            y = solve_triangular(fac, delta.T, lower=True)  # fac is lower Cholesky
            sol = solve_triangular(fac.T, y, lower=False).T
        quad = np.einsum("ij,ij->i", delta, sol)
        logd[k] = -0.5 * (quad + logdet + d * _LOG_2PI)
        sols[k] = sol
    a = logd + np.log(mix.weights)[:, None]
    amax = a.max(axis=0)
    r = np.exp(a - amax)
    total = r.sum(axis=0)
    logp = amax + np.log(total)
    resp = r / total
    return resp, sols, logp


def mixture_log_density(mix: GaussianMixture, sched: Schedule, t: float, x):
    """log p_t(x) of the forward marginal, shape (n,)."""
    _, _, logp = _mixture_parts(mix, sched, t, x)
    return logp


def mixture_score(mix: GaussianMixture, sched: Schedule, t: float, x):
    """Exact score grad_x log p_t(x), shape (n, d)."""
    resp, sols, _ = _mixture_parts(mix, sched, t, x)
    return -np.einsum("kn,knd->nd", resp, sols)


class Perturbation(enum.Enum):
    NONE = "none"
    ADDITIVE_BIAS = "bias"
    MULTIPLICATIVE = "mult"
    SMOOTH_FIELD = "field"


class ScoreMeter:
    """Accumulates squared score deviations grouped by evaluation time.

    Worker partials are merged with `merge` in worker-index order, which
    keeps the floating-point reduction deterministic for a fixed chunking.
    """

    def __init__(self):
        self.groups = {}

    def add(self, t: float, sum_sq: float, count: int):
        g = self.groups.get(t)
        if g is None:
            self.groups[t] = [float(sum_sq), int(count)]
        else:
            g[0] += float(sum_sq)
            g[1] += int(count)

    def merge(self, other: "ScoreMeter"):
        for t, (s, c) in other.groups.items():
            self.add(t, s, c)

    def epsilon(self) -> float:
        if not self.groups:
            raise NoSamplesError("score meter has no recorded evaluations")
        return max(math.sqrt(s / c) for s, c in self.groups.values())


@dataclass
class ScoreModel:
    """Exact mixture score with an optional controlled perturbation.

    magnitude is the perturbation size delta; frequency only matters for
    SMOOTH_FIELD; direction_seed fixes the unit direction u used by
    ADDITIVE_BIAS and SMOOTH_FIELD.
    """

    mixture: GaussianMixture
    schedule: Schedule
    perturbation: Perturbation = Perturbation.NONE
    magnitude: float = 0.0
    frequency: float = 1.0
    direction_seed: int = 0
    meter: ScoreMeter = field(default_factory=ScoreMeter)

    def __post_init__(self):
        if self.perturbation in (Perturbation.ADDITIVE_BIAS, Perturbation.SMOOTH_FIELD):
            u = rng.CounterStream(self.direction_seed).normals(
                rng.TAG_DIRECTION, 0, np.array([0], dtype=np.uint64), self.mixture.dim
            )[0]
            self._direction = u / np.linalg.norm(u)
        else:
            self._direction = None

    def describe(self) -> dict:
        return {
            "perturbation": self.perturbation.value,
            "magnitude": self.magnitude,
            "frequency": self.frequency,
            "direction_seed": self.direction_seed,
        }

    def evaluate(self, t: float, x, meter: ScoreMeter | None = None):
        """Perturbed score at time t; meters the true deviation per call."""
        meter = self.meter if meter is None else meter
        s = mixture_score(self.mixture, self.schedule, t, x)
        n = s.shape[0]
        if self.perturbation is Perturbation.NONE:
            meter.add(t, 0.0, n)
            return s
        if self.perturbation is Perturbation.ADDITIVE_BIAS:
            dev = self.magnitude * self._direction
            meter.add(t, n * float(dev @ dev), n)
            return s + dev
        if self.perturbation is Perturbation.MULTIPLICATIVE:
            # extreme magnitudes overflow to inf and get flagged downstream
            with np.errstate(over="ignore"):
                dev_sq = np.float64(self.magnitude) ** 2 * np.einsum("ij,ij->i", s, s)
            meter.add(t, float(dev_sq.sum()), n)
            return (1.0 + self.magnitude) * s
        # SMOOTH_FIELD: s + delta * sin(omega <x, u>) u
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        phase = np.sin(self.frequency * (x @ self._direction))
        bump = self.magnitude * phase[:, None] * self._direction
        meter.add(t, float(np.einsum("ij,ij->", bump, bump)), n)
        return s + bump


def metered_epsilon(model: ScoreModel) -> float:
    """Sup over evaluation times of the RMS metered score deviation."""
    return model.meter.epsilon()


@dataclass(frozen=True)
class FisherEstimate:
    value: float
    standard_error: float
    n: int


def fisher_information_estimate(
    mix: GaussianMixture, sched: Schedule, t: float, n: int, seed: int
) -> FisherEstimate:
    """Monte-Carlo estimate of E ||s(t, x_t)||^2 under the forward marginal."""
    from .samplers import forward_marginal_sample

    if n < 1:
        raise NoSamplesError("need at least one sample")
    batch = forward_marginal_sample(mix, sched, t, n, seed)
    s = mixture_score(mix, sched, t, batch.data)
    vals = np.einsum("ij,ij->i", s, s)
    value = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return FisherEstimate(value, se, n)
