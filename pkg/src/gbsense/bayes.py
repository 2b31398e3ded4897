"""Grid Bayesian estimation of the precession frequency from click counts.

The posterior lives on ``M + 1`` equally spaced nodes over ``[f_min, f_max]``
and every integral is a trapezoid sum over them. Likelihoods are combined in
log space; an update whose evidence underflows (``N' <= 1e-300``) is skipped
and leaves the posterior untouched.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from .errors import InvalidArgumentError
from .quantum import ReadoutCalibration

DEGENERATE_EVIDENCE = 1e-300
_LOG_DEGENERATE = math.log(DEGENERATE_EVIDENCE)
GAUSSIAN_MIN_COUNT = 25


class LikelihoodProvider(Protocol):
    def predict_grid(self, tau: float, phi: float, calib: ReadoutCalibration, chi, f_grid: np.ndarray) -> np.ndarray:
        ...


@dataclass(frozen=True)
class PosteriorGrid:
    f_min: float
    f_max: float
    m_subintervals: int
    density: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.f_min) and math.isfinite(self.f_max) and self.f_min < self.f_max):
            raise InvalidArgumentError("need finite f_min < f_max")
        if self.m_subintervals < 2:
            raise InvalidArgumentError("need at least 2 subintervals")
        if self.density.shape != (self.m_subintervals + 1,):
            raise InvalidArgumentError("density must have M + 1 entries")

    @property
    def spacing(self) -> float:
        return (self.f_max - self.f_min) / self.m_subintervals

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.m_subintervals + 1)

    def integrate(self, values: np.ndarray) -> float:
        return trapezoid(values, self.spacing)

    def total(self) -> float:
        return self.integrate(self.density)


def trapezoid(values: np.ndarray, h: float) -> float:
    return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))


@dataclass(frozen=True)
class MeasurementBatch:
    tau: float
    phi: float
    calib: ReadoutCalibration
    R: int
    r: int
    chi: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 <= self.r <= self.R:
            raise InvalidArgumentError(f"need 0 <= r <= R, got r={self.r}, R={self.R}")

    @classmethod
    def from_record(cls, rec) -> "MeasurementBatch":
        s = rec.settings
        return cls(s.tau, s.phi, rec.calib, rec.R, rec.r, s.chi)


def uniform_prior(f_min: float, f_max: float, m: int = 5000) -> PosteriorGrid:
    if not f_min < f_max:
        raise InvalidArgumentError("degenerate prior interval")
    return PosteriorGrid(f_min, f_max, m, np.full(m + 1, 1.0 / (f_max - f_min)))


def resolve_mode(r: int, R: int, mode: str) -> str:
    if mode == "auto":
        return "gaussian" if min(r, R - r) >= GAUSSIAN_MIN_COUNT else "binomial"
    if mode not in ("gaussian", "binomial"):
        raise InvalidArgumentError(f"unknown likelihood mode {mode!r}")
    return mode


def gaussian_variance(r: int, R: int) -> float:
    """``r (R - r) / R``, floored so it never collapses at ``r in {0, R}``."""
    p_hat = min(max(r / R, 1 / R), 1 - 1 / R)
    floor = max(1.0, R * p_hat * (1 - p_hat))
    return max(r * (R - r) / R, floor)


def log_count_likelihood(r: int, R: int, p_cl, mode: str = "auto") -> np.ndarray:
    """Log-probability of ``r`` clicks in ``R`` repetitions at click probability ``p_cl``."""
    if not 0 <= r <= R:
        raise InvalidArgumentError(f"need 0 <= r <= R, got r={r}, R={R}")
    p = np.asarray(p_cl, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise InvalidArgumentError("p_cl must lie in [0, 1]")
    mode = resolve_mode(r, R, mode)
    if mode == "binomial":
        log_comb = gammaln(R + 1) - gammaln(r + 1) - gammaln(R - r + 1)
        return log_comb + xlogy(r, p) + xlog1py(R - r, -p)
    var = gaussian_variance(r, R)
    return -0.5 * math.log(2 * math.pi * var) - (r - p * R) ** 2 / (2 * var)


def count_likelihood(r: int, R: int, p_cl, mode: str = "auto"):
    out = np.exp(log_count_likelihood(r, R, p_cl, mode))
    return float(out) if out.ndim == 0 else out


def update_log_likelihood(post: PosteriorGrid, loglik: np.ndarray) -> tuple[PosteriorGrid, bool]:
    """Multiply the posterior by ``exp(loglik)`` and renormalize; skip on vanishing evidence."""
    if loglik.shape != post.density.shape:
        raise InvalidArgumentError("likelihood length does not match the grid")
    with np.errstate(divide="ignore"):
        s = np.log(post.density) + loglik
    top = np.max(s)
    if not np.isfinite(top):
        return post, True
    w = np.exp(s - top)
    z = trapezoid(w, post.spacing)
    if not (z > 0 and math.isfinite(z)) or top + math.log(z) <= _LOG_DEGENERATE:
        return post, True
    return PosteriorGrid(post.f_min, post.f_max, post.m_subintervals, w / z), False


def batch_log_likelihood(post_or_nodes, batch: MeasurementBatch, provider: LikelihoodProvider, mode: str = "auto"):
    nodes = post_or_nodes.nodes if isinstance(post_or_nodes, PosteriorGrid) else np.asarray(post_or_nodes)
    p = np.asarray(provider.predict_grid(batch.tau, batch.phi, batch.calib, batch.chi, nodes), dtype=float)
    if p.shape != nodes.shape:
        raise InvalidArgumentError(f"provider returned {p.shape} values for {nodes.shape} nodes")
    return log_count_likelihood(batch.r, batch.R, p, mode)


def update(
    post: PosteriorGrid, batch: MeasurementBatch, provider: LikelihoodProvider, mode: str = "auto"
) -> tuple[PosteriorGrid, bool]:
    return update_log_likelihood(post, batch_log_likelihood(post, batch, provider, mode))


def mean_estimate(post: PosteriorGrid) -> float:
    return post.integrate(post.nodes * post.density)


def variance(post: PosteriorGrid, f_hat: float) -> float:
    return max(post.integrate((post.nodes - f_hat) ** 2 * post.density), 0.0)


def squared_error(f_hat: float, f_true: float) -> float:
    return (f_hat - f_true) ** 2


@dataclass
class EstimationTrace:
    """Per-iteration estimate, variance (MHz^2), squared error (MHz^2) and skip flag/rate."""

    fhat: np.ndarray
    variance: np.ndarray
    sq_error: np.ndarray
    skipped: np.ndarray

    def __len__(self):
        return len(self.fhat)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "mean_fhat_MHz", "mean_E_MHz2", "mean_V_MHz2", "skip_rate"])
            for i in range(len(self)):
                w.writerow(
                    [i + 1, repr(float(self.fhat[i])), repr(float(self.sq_error[i])),
                     repr(float(self.variance[i])), repr(float(self.skipped[i]))]
                )


@dataclass
class EstimationResult:
    mean_trace: EstimationTrace
    final_fhat: np.ndarray
    final_sq_error: np.ndarray
    final_variance: np.ndarray
    orderings: np.ndarray
    final_density: np.ndarray
    normalization_error: float
    traces: list[EstimationTrace] = field(default_factory=list, repr=False)

    @property
    def mean_final_sq_error(self) -> float:
        return float(self.mean_trace.sq_error[-1])

    @property
    def mean_final_variance(self) -> float:
        return float(self.mean_trace.variance[-1])

    @property
    def mean_final_fhat(self) -> float:
        return float(self.mean_trace.fhat[-1])


def run_estimation(
    batches: Sequence[MeasurementBatch],
    provider: LikelihoodProvider,
    f_min: float,
    f_max: float,
    m: int = 5000,
    orderings: int = 100,
    seed: int | Sequence[int] = 0,
    f_true: float | None = None,
    mode: str = "auto",
    keep_traces: bool = False,
) -> EstimationResult:
    """Sequential updates from a uniform prior, repeated over random batch orderings.

    Provider predictions are computed once per batch and reused across
    orderings. ``final_density`` has one row per ordering.
    """
    if len(batches) == 0:
        raise InvalidArgumentError("no batches to estimate from")
    if orderings < 1:
        raise InvalidArgumentError("orderings must be >= 1")
    prior = uniform_prior(f_min, f_max, m)
    logliks = np.stack([batch_log_likelihood(prior, b, provider, mode) for b in batches])
    n = len(batches)
    truth = math.nan if f_true is None else float(f_true)
    fhat = np.empty((orderings, n))
    var = np.empty((orderings, n))
    skipped = np.zeros((orderings, n), dtype=bool)
    perms = np.empty((orderings, n), dtype=int)
    finals = np.empty((orderings, m + 1))
    worst_norm = 0.0
    for o, child in enumerate(np.random.SeedSequence(seed).spawn(orderings)):
        perm = np.random.default_rng(child).permutation(n)
        perms[o] = perm
        post = prior
        for i, k in enumerate(perm):
            post, skipped[o, i] = update_log_likelihood(post, logliks[k])
            if not skipped[o, i]:
                worst_norm = max(worst_norm, abs(post.total() - 1))
            fhat[o, i] = mean_estimate(post)
            var[o, i] = variance(post, fhat[o, i])
        finals[o] = post.density
    sq = (fhat - truth) ** 2
    traces = []
    if keep_traces:
        traces = [EstimationTrace(fhat[o], var[o], sq[o], skipped[o].astype(float)) for o in range(orderings)]
    mean = EstimationTrace(fhat.mean(axis=0), var.mean(axis=0), sq.mean(axis=0), skipped.mean(axis=0))
    return EstimationResult(mean, fhat[:, -1], sq[:, -1], var[:, -1], perms, finals, worst_norm, traces)


def distribution_summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {"n": int(len(v)), "min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}
