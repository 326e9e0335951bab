"""Moment summaries and the Gaussian 2-Wasserstein distance.

Sample batches are reduced to (mean, second moment) summaries and compared
with the moment-matched Gaussian W2:

    DIAG:  W2^2 = ||mu_a - mu_b||^2 + sum_i (sqrt(v_a,i) - sqrt(v_b,i))^2
    FULL:  W2^2 = ||mu_a - mu_b||^2
                  + tr(A) + tr(B) - 2 tr((A^{1/2} B A^{1/2})^{1/2})

Accumulation is streaming and merge-based, so summaries can be built over
partitioned data and combined in a fixed order with deterministic floating
point results. Covariances are unbiased (n - 1 denominator).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateFitError,
    DimensionMismatchError,
    ModeMismatchError,
    NegativeEigenvalueError,
    NotSymmetricError,
    TooFewSamplesError,
)


class MomentMode(enum.Enum):
    DIAG = "diag"
    FULL = "full"


@dataclass(frozen=True)
class MomentSummary:
    """First and second moments of a sample batch.

    `second` holds per-coordinate variances in DIAG mode and the full
    covariance matrix in FULL mode, unbiased in both cases.
    """

    mean: np.ndarray
    second: np.ndarray
    n: int
    mode: MomentMode


class MomentAccumulator:
    """Streaming moment accumulation with order-independent-safe merging.

    update() consumes batches with the numerically stable shifted update of
    Chan, Golub and LeVeque; merge() combines two partial accumulators with
    the pairwise formula. Merging partials in a fixed (worker-index) order
    gives bit-deterministic results for a fixed partition.
    """

    def __init__(self, dim: int, mode: MomentMode = MomentMode.DIAG):
        self.dim = dim
        self.mode = mode
        self.n = 0
        self.mean = np.zeros(dim)
        if mode is MomentMode.DIAG:
            self.m2 = np.zeros(dim)
        else:
            self.m2 = np.zeros((dim, dim))

    def update(self, batch: np.ndarray):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 2 or batch.shape[1] != self.dim:
            raise DimensionMismatchError(
                f"batch shape {batch.shape} incompatible with dimension {self.dim}"
            )
        nb = batch.shape[0]
        if nb == 0:
            return
        bmean = batch.mean(axis=0)
        centered = batch - bmean
        if self.mode is MomentMode.DIAG:
            bm2 = np.einsum("ij,ij->j", centered, centered)
        else:
            bm2 = centered.T @ centered
        self._combine(nb, bmean, bm2)

    def merge(self, other: "MomentAccumulator"):
        if other.mode is not self.mode or other.dim != self.dim:
            raise ModeMismatchError("cannot merge accumulators with different mode/dim")
        if other.n:
            self._combine(other.n, other.mean, other.m2)

    def _combine(self, nb, bmean, bm2):
        if self.n == 0:
            self.n = nb
            self.mean = bmean.copy()
            self.m2 = bm2.copy()
            return
        n_total = self.n + nb
        delta = bmean - self.mean
        if self.mode is MomentMode.DIAG:
            corr = delta * delta * (self.n * nb / n_total)
        else:
            corr = np.outer(delta, delta) * (self.n * nb / n_total)
        self.m2 = self.m2 + bm2 + corr
        self.mean = self.mean + delta * (nb / n_total)
        self.n = n_total

    def finalize(self) -> MomentSummary:
        if self.n < 2:
            raise TooFewSamplesError("moment summary needs at least two samples")
        return MomentSummary(
            mean=self.mean.copy(), second=self.m2 / (self.n - 1), n=self.n, mode=self.mode
        )


def accumulate_moments(data: np.ndarray, mode: MomentMode = MomentMode.DIAG) -> MomentSummary:
    """Reduce an (n, d) batch to a MomentSummary (unbiased second moment)."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionMismatchError("data must be an (n, d) array")
    acc = MomentAccumulator(data.shape[1], mode)
    acc.update(data)
    return acc.finalize()


def summary_from_moments(mean, second, mode: MomentMode, n: int = 0) -> MomentSummary:
    """Wrap analytically known moments as a summary (n = 0 marks 'exact')."""
    mean = np.asarray(mean, dtype=np.float64)
    second = np.asarray(second, dtype=np.float64)
    return MomentSummary(mean=mean, second=second, n=n, mode=mode)


def sym_psd_sqrt(s: np.ndarray, clamp_rel: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-clamp_rel * specnorm, 0) are clamped to zero; anything
    more negative raises NEGATIVE_EIGENVALUE. The input must be symmetric.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionMismatchError("matrix square root needs a square matrix")
    scale = float(np.max(np.abs(s))) if s.size else 0.0
    if not np.allclose(s, s.T, rtol=0.0, atol=1e-10 * max(scale, 1e-300)):
        raise NotSymmetricError("matrix is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (s + s.T))
    spec = float(np.max(np.abs(lam))) if lam.size else 0.0
    if np.any(lam < -clamp_rel * spec):
        raise NegativeEigenvalueError(
            f"eigenvalue {lam.min():g} below -{clamp_rel:g} * {spec:g}"
        )
    root = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.T
    return 0.5 * (root + root.T)


def gaussian_w2(a: MomentSummary, b: MomentSummary) -> float:
    """Moment-matched Gaussian 2-Wasserstein distance between two summaries."""
    if a.mode is not b.mode:
        raise ModeMismatchError(f"summary modes differ: {a.mode} vs {b.mode}")
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatchError("summary dimensions differ")
    mean_sq = float(np.sum((a.mean - b.mean) ** 2))
    if a.mode is MomentMode.DIAG:
        cov_sq = float(np.sum((np.sqrt(a.second) - np.sqrt(b.second)) ** 2))
    else:
        root_a = sym_psd_sqrt(a.second)
        cross = sym_psd_sqrt(root_a @ b.second @ root_a)
        cov_sq = float(np.trace(a.second) + np.trace(b.second) - 2.0 * np.trace(cross))
    return math.sqrt(max(mean_sq + cov_sq, 0.0))


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit of log w = b + omega log h."""

    intercept: float
    exponent: float
    n_points: int
    residual_norm: float


def fit_log_slope(h_values, w_values) -> SlopeFit:
    """Fit the log-log convergence slope by ordinary least squares.

    Solves min over (b, omega) of ||log w - (b + omega log h)||_2 via the
    pseudo-inverse. Needs at least two distinct positive abscissae and
    positive ordinates; otherwise the fit is degenerate.
    """
    h = np.asarray(h_values, dtype=np.float64)
    w = np.asarray(w_values, dtype=np.float64)
    if h.shape != w.shape or h.ndim != 1:
        raise DimensionMismatchError("h and w must be one-dimensional with equal length")
    if h.size < 2 or np.unique(h).size < 2:
        raise DegenerateFitError("slope fit needs at least two distinct step sizes")
    if np.any(h <= 0) or np.any(w <= 0) or not (np.all(np.isfinite(h)) and np.all(np.isfinite(w))):
        raise DegenerateFitError("slope fit needs positive finite h and w")
    x = np.log(h)
    y = np.log(w)
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return SlopeFit(
        intercept=float(coef[0]),
        exponent=float(coef[1]),
        n_points=int(h.size),
        residual_norm=float(np.linalg.norm(resid)),
    )
