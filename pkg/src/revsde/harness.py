"""Convergence-study harness: h, T, and score-error sweeps.

Each sweep simulates a grid of cells, measures the moment-matched W2 against
the exact data moments, and reports rows (swept_value, w2, eps, stable, n,
seed). Cells run concurrently; every cell derives its seed from the base
seed and its value index, and all randomness inside a cell is counter-based,
so reports are byte-identical for any worker count.

Stability marking: a cell is unstable if any trajectory left the finite
range, or if its W2 exceeds 10x the nearest stable neighbor in the sweep
order. Slope fits additionally drop rows within `floor_factor` (default 2x)
of the Monte-Carlo floor, which is estimated by the same-seed self-distance
of two reference half-batches.
"""

from __future__ import annotations

import json
import math
import time
import warnings

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng
from .errors import DegenerateFitError, InvalidSweepValueError, RevsdeError
from .fileio import mixture_from_dict, load_mixture
from .metrics import (
    MomentMode,
    SlopeFit,
    accumulate_moments,
    fit_log_slope,
    gaussian_w2,
    summary_from_moments,
)
from .samplers import InitKind, SamplerKind, TimeGrid, sample_reverse
from .schedules import Schedule, make_generic_schedule, make_vp_schedule
from .score import (
    GaussianMixture,
    Perturbation,
    ScoreModel,
    diagonal_covariance,
    metered_epsilon,
)

NEIGHBOR_BLOWUP = 10.0


@dataclass
class SweepConfig:
    """Declarative description of one sweep.

    values carries the swept quantity: step sizes for h-sweeps, terminal
    times for T-sweeps, perturbation magnitudes for eps-sweeps. h and T are
    the quantities held fixed by the other sweep kinds. window restricts the
    slope fit to swept values inside [window[0], window[1]].
    """

    values: list
    sampler: str = "em"
    schedule: str | dict = "vp-linear"
    problem: str | dict = "std-normal:4"
    n: int = 10000
    seed: int = 0
    init: str = "sigma"
    mode: str = "diag"
    workers: int = 1
    chunk_size: int = 16384
    h: float = 0.04
    T: float = 4.0
    perturbation: str = "none"
    magnitude: float = 0.0
    frequency: float = 1.0
    perturb_seed: int = 0
    window: tuple | None = None
    floor_factor: float = 2.0


def load_sweep_config(path) -> SweepConfig:
    """Load a sweep config from TOML or JSON (by file extension)."""
    text = open(path, "rb").read()
    if str(path).endswith(".toml"):
        obj = tomllib.loads(text.decode("utf-8"))
    else:
        obj = json.loads(text.decode("utf-8"))
    if "window" in obj and obj["window"] is not None:
        obj["window"] = tuple(obj["window"])
    return SweepConfig(**obj)


def piecewise_poly(table: dict):
    """Piecewise-polynomial coefficient table -> scalar function of t.

    table = {"coeffs": [[c0, c1, ...], ...], "breakpoints": [b1, ...]}.
    Segment i applies on [b_{i-1}, b_i) with b_0 = 0; the last segment
    extends to infinity. Coefficients are ascending powers of absolute t.
    """
    coeffs = [np.asarray(c, dtype=np.float64) for c in table["coeffs"]]
    breaks = np.asarray(table.get("breakpoints", []), dtype=np.float64)
    if len(coeffs) != len(breaks) + 1:
        raise ValueError("need exactly one more coefficient row than breakpoints")

    def evaluate(t: float) -> float:
        i = int(np.searchsorted(breaks, t, side="right"))
        c = coeffs[i]
        out = 0.0
        for a in c[::-1]:
            out = out * t + a
        return out

    return evaluate


def build_schedule(spec) -> Schedule:
    if spec == "vp-linear":
        return make_vp_schedule()
    if isinstance(spec, dict) and spec.get("kind", "generic") == "generic":
        f = piecewise_poly(spec["f"])
        g = piecewise_poly(spec["g"])
        return make_generic_schedule(f, g, spec.get("quadrature_step", 1e-3))
    raise ValueError(f"unknown schedule spec {spec!r}")


def build_problem(spec) -> GaussianMixture:
    """Resolve a problem spec: builtin tag, inline mixture, or mixture file."""
    if isinstance(spec, dict):
        if "mixture_file" in spec:
            return load_mixture(spec["mixture_file"])
        return mixture_from_dict(spec)
    name, _, arg = str(spec).partition(":")
    d = int(arg) if arg else 4
    if name == "std-normal":
        return GaussianMixture(
            np.array([1.0]), np.zeros((1, d)), (diagonal_covariance(np.ones(d)),)
        )
    if name == "offset-gauss":
        return GaussianMixture(
            np.array([1.0]),
            np.full((1, d), 0.8),
            (diagonal_covariance(np.full(d, 0.5)),),
        )
    if name == "gmm2":
        off = 1.2 / math.sqrt(d)
        return GaussianMixture(
            np.array([0.5, 0.5]),
            np.stack([np.full(d, off), np.full(d, -off)]),
            (diagonal_covariance(np.full(d, 0.5)), diagonal_covariance(np.full(d, 0.5))),
        )
    raise ValueError(f"unknown problem tag {spec!r}")


def derive_seed(base: int, index: int) -> int:
    """Per-cell seed: one Philox word of (base, index), stable across runs."""
    w = rng.philox4x64((np.uint64(index), 0, 0, 0), (base, 0x5EEDC0DE))
    return int(w[0][()])


def reference_summary(mix: GaussianMixture, mode: MomentMode):
    mu, cov = mix.moments()
    second = np.diagonal(cov).copy() if mode is MomentMode.DIAG else cov
    return summary_from_moments(mu, second, mode)


def mc_floor_estimate(mix: GaussianMixture, n: int, seed: int, mode: MomentMode) -> float:
    """Self-W2 of two half-size reference batches: the sampling noise scale."""
    half = n // 2
    if half < 2:
        return 0.0
    a = mix.sample(half, derive_seed(seed, 1 << 32))
    b = mix.sample(half, derive_seed(seed, (1 << 32) + 1))
    return gaussian_w2(accumulate_moments(a, mode), accumulate_moments(b, mode))


@dataclass
class ConvergenceReport:
    """Sweep outcome: rows in input order plus fit/floor/argmin annotations."""

    kind: str
    rows: list
    fit: SlopeFit | None
    fit_error: str | None
    floor: float
    argmin: float | None
    config: dict
    wall_times: list
    total_wall: float

    def sidecar(self) -> dict:
        payload = {
            "kind": self.kind,
            "config": self.config,
            "floor": self.floor,
            "argmin": self.argmin,
            "fit": None if self.fit is None else asdict(self.fit),
            "fit_error": self.fit_error,
            "rows": self.rows,
            "wall_times_s": self.wall_times,
            "total_wall_s": self.total_wall,
        }
        return payload


def _simulate_cell(cfg: SweepConfig, kind: str, value: float, seed: int) -> dict:
    sched = build_schedule(cfg.schedule)
    mix = build_problem(cfg.problem)
    mode = MomentMode(cfg.mode)
    delta = cfg.magnitude
    T = cfg.T
    h = cfg.h
    if kind == "h":
        h = value
    elif kind == "T":
        T = value
    else:
        delta = value
    steps = max(1, round(T / h))
    grid = TimeGrid(T=T, K=steps)
    model = ScoreModel(
        mixture=mix,
        schedule=sched,
        perturbation=Perturbation(cfg.perturbation),
        magnitude=delta,
        frequency=cfg.frequency,
        direction_seed=cfg.perturb_seed,
    )
    batch = sample_reverse(
        sched,
        grid,
        model,
        n=cfg.n,
        seed=seed,
        sampler=SamplerKind(cfg.sampler),
        init=InitKind(cfg.init),
        workers=1,
        chunk_size=cfg.chunk_size,
    )
    eps = metered_epsilon(model)
    w2 = gaussian_w2(accumulate_moments(batch.data, mode), reference_summary(mix, mode))
    return {
        "swept_value": float(value),
        "w2": float(w2),
        "eps": float(eps),
        "stable": bool(batch.stable),
        "n": int(cfg.n),
        "seed": int(seed),
    }


def _mark_neighbor_instability(rows):
    """Flag rows whose W2 blows past 10x the nearest stable neighbor."""
    order = sorted(range(len(rows)), key=lambda i: rows[i]["swept_value"])
    changed = True
    while changed:
        changed = False
        for pos, i in enumerate(order):
            row = rows[i]
            if not row["stable"]:
                continue
            neighbor = None
            for step in (1, -1):
                q = pos + step
                while 0 <= q < len(order):
                    cand = rows[order[q]]
                    if cand["stable"]:
                        neighbor = cand if neighbor is None or cand["w2"] > neighbor["w2"] else neighbor
                        break
                    q += step
            if neighbor is not None and row["w2"] > NEIGHBOR_BLOWUP * neighbor["w2"]:
                row["stable"] = False
                changed = True
    return rows


def _run_sweep(cfg: SweepConfig, kind: str, cell_runner=None) -> ConvergenceReport:
    values = list(cfg.values)
    if not values:
        raise InvalidSweepValueError("sweep needs at least one value")
    finite = all(np.isfinite(v) for v in values)
    positive = all(v > 0 for v in values) if kind != "eps" else all(v >= 0 for v in values)
    if not (finite and positive) or len(set(values)) != len(values):
        raise InvalidSweepValueError(f"swept values must be distinct and positive, got {values}")
    runner = cell_runner if cell_runner is not None else _simulate_cell
    t_start = time.perf_counter()
    seeds = [derive_seed(cfg.seed, i) for i in range(len(values))]

    def one(i):
        t0 = time.perf_counter()
        try:
            row = runner(cfg, kind, values[i], seeds[i])
        except RevsdeError as e:
            row = {
                "swept_value": float(values[i]),
                "w2": float("nan"),
                "eps": float("nan"),
                "stable": False,
                "n": int(cfg.n),
                "seed": int(seeds[i]),
                "error": f"{type(e).__name__}: {e}",
            }
        return row, time.perf_counter() - t0

    if cfg.workers > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            out = list(pool.map(one, range(len(values))))
    else:
        out = [one(i) for i in range(len(values))]
    rows = [r for r, _ in out]
    walls = [w for _, w in out]
    _mark_neighbor_instability(rows)

    floor = 0.0
    if cell_runner is None:
        try:
            floor = mc_floor_estimate(build_problem(cfg.problem), cfg.n, cfg.seed, MomentMode(cfg.mode))
        except RevsdeError:
            floor = 0.0

    fit = None
    fit_error = None
    argmin = None
    stable_rows = [r for r in rows if r["stable"] and np.isfinite(r["w2"])]
    if stable_rows:
        argmin = min(stable_rows, key=lambda r: r["w2"])["swept_value"]
    if kind in ("h", "eps"):
        pts = []
        for r in stable_rows:
            x = r["swept_value"] if kind == "h" else r["eps"]
            if cfg.window is not None and not (cfg.window[0] <= r["swept_value"] <= cfg.window[1]):
                continue
            if r["w2"] <= cfg.floor_factor * floor or x <= 0:
                continue
            pts.append((x, r["w2"]))
        try:
            fit = fit_log_slope([p[0] for p in pts], [p[1] for p in pts])
        except DegenerateFitError as e:
            fit_error = f"DegenerateFitError: {e}"
    cfg_echo = asdict(cfg)
    cfg_echo["window"] = None if cfg.window is None else list(cfg.window)
    return ConvergenceReport(
        kind=kind,
        rows=rows,
        fit=fit,
        fit_error=fit_error,
        floor=float(floor),
        argmin=argmin,
        config=cfg_echo,
        wall_times=walls,
        total_wall=time.perf_counter() - t_start,
    )


def run_h_sweep(cfg: SweepConfig, cell_runner=None) -> ConvergenceReport:
    """Sweep the step size at fixed T; fits the log-log convergence slope."""
    return _run_sweep(cfg, "h", cell_runner)


def run_T_sweep(cfg: SweepConfig, cell_runner=None) -> ConvergenceReport:
    """Sweep the terminal time at fixed h; reports the argmin T."""
    return _run_sweep(cfg, "T", cell_runner)


def run_eps_sweep(cfg: SweepConfig, cell_runner=None) -> ConvergenceReport:
    """Sweep the perturbation magnitude; abscissa is the metered epsilon."""
    return _run_sweep(cfg, "eps", cell_runner)


@dataclass(frozen=True)
class ParamChoice:
    """Step-size-driven choices of score tolerance and terminal time."""

    contraction: float
    epsilon: float
    T: float
    exponent: float
    warning: str | None = None


def param_choice(h: float, m0: float, mg: float) -> ParamChoice:
    """Balance the error terms for step size h.

    contraction C = m0 mg^2 / (1 + m0); epsilon tracks sqrt(h); T solves
    exp(-(C+1) T) = sqrt(h); the predicted W2 rate is h^(C / (2 (C+1))).
    C = 0 (no contraction) degenerates the rate to h^0 and carries a warning.
    """
    if not (0.0 < h < 1.0):
        raise InvalidSweepValueError(f"h must lie in (0, 1), got {h}")
    if m0 < 0 or mg < 0:
        raise InvalidSweepValueError("m0 and mg must be nonnegative")
    contraction = m0 * mg * mg / (1.0 + m0)
    eps = math.sqrt(h)
    big_t = -math.log(eps) / (contraction + 1.0)
    exponent = contraction / (2.0 * (contraction + 1.0))
    warn = None
    if contraction == 0.0:
        warn = "ZERO_C: no contraction, predicted rate degenerates to h^0"
        warnings.warn(warn, stacklevel=2)
    return ParamChoice(contraction, eps, big_t, exponent, warn)
