"""Metric tabulation and geodesic schedules.

For a single parameter the geodesic equation has the first integral
``dlambda/dt = C / sqrt(g(lambda))``, so the schedule follows from the
arc length alone:

    t(lambda) = T * F(lambda) / F(1),     F(lambda) = int_0^lambda sqrt(g) ds,

and ``C = F(1) / T``.  ``F`` is integrated with the trapezoidal rule on the
metric grid; ``lambda(t)`` is evaluated by monotone piecewise-cubic (PCHIP)
interpolation through the knots ``(t_j, lambda_j)``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import agp
from .errors import DegenerateMetricWarning, NumericalError, ValidationError
from .io_utils import read_csv, write_csv
from .models import AnnealingModel, interpolated_hamiltonian, lambda_derivative

DEFAULT_GRID = 201
REFINE_LOG_JUMP = 0.5


@dataclass(frozen=True)
class MetricTable:
    lambdas: np.ndarray
    g_values: np.ndarray
    d_A: int | None
    model_tag: str = ""
    depths: tuple[int, ...] = field(default=(), compare=False)
    terminations: tuple[int | None, ...] = field(default=(), compare=False)

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        g = np.asarray(self.g_values, dtype=float)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "g_values", g)
        if lam.ndim != 1 or lam.shape != g.shape:
            raise ValidationError("lambdas and g_values must be 1-D and of equal length")
        if len(lam) < 2 or lam[0] != 0.0 or lam[-1] != 1.0:
            raise ValidationError("metric grid must cover [0, 1] including both endpoints")
        if np.any(np.diff(lam) <= 0):
            raise ValidationError("metric grid must be strictly increasing")
        if np.any(g < 0):
            raise ValidationError("metric values must be nonnegative")

    @property
    def d_label(self) -> str:
        return "full" if self.d_A is None else str(self.d_A)

    def scaled(self, factor: float) -> "MetricTable":
        return MetricTable(
            self.lambdas, self.g_values * factor, self.d_A, self.model_tag, self.depths, self.terminations
        )

    def to_csv(self, path) -> None:
        write_csv(path, "lambda,g_star", zip(self.lambdas, self.g_values))

    @classmethod
    def from_csv(cls, path, d_A=None, model_tag="") -> "MetricTable":
        rows = read_csv(path, "lambda,g_star")
        lam, g = (np.array(c) for c in zip(*rows))
        return cls(lam, g, d_A, model_tag)


def _metric_point(args):
    H, dH, d_A, lam, zero_tol = args
    sol = agp.metric_at(H, dH, d_A, zero_tol=zero_tol, lam=lam)
    term = sol.basis.termination_index if sol.basis is not None else None
    return sol.g_star, sol.d_effective, term


def _evaluate(model, lams, d_A, zero_tol, workers):
    dH = lambda_derivative(model)
    jobs = [(interpolated_hamiltonian(model, float(l)), dH, d_A, float(l), zero_tol) for l in lams]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_metric_point, j) for j in jobs]
            results = []
            for lam, fut in zip(lams, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    raise NumericalError(f"metric evaluation failed at lambda={lam:.17g}: {exc}") from exc
            return results
    results = []
    for lam, job in zip(lams, jobs):
        try:
            results.append(_metric_point(job))
        except Exception as exc:
            raise NumericalError(f"metric evaluation failed at lambda={lam:.17g}: {exc}") from exc
    return results


def tabulate_metric(
    model: AnnealingModel,
    grid_size: int = DEFAULT_GRID,
    d_A: int | None = None,
    *,
    workers: int = 1,
    refine: bool = False,
    max_refinements: int = 4,
    zero_tol: float = agp.ZERO_TOL,
) -> MetricTable:
    """Sample ``g*(lambda)`` on a uniform grid (``d_A=None`` is the full basis).

    With ``refine`` the grid is bisected wherever ``|log g|`` jumps by more
    than 0.5 between neighbours, up to ``max_refinements`` rounds.
    """
    if grid_size < 3:
        raise ValidationError(f"grid_size must be >= 3, got {grid_size}")
    if d_A is not None and d_A < 1:
        raise ValidationError(f"d_A must be >= 1, got {d_A}")
    lams = np.linspace(0.0, 1.0, grid_size)
    res = _evaluate(model, lams, d_A, zero_tol, workers)
    g = np.array([r[0] for r in res])
    depths = [r[1] for r in res]
    terms = [r[2] for r in res]

    for _ in range(max_refinements if refine else 0):
        with np.errstate(divide="ignore"):
            logg = np.log(np.where(g > 0, g, np.nan))
        jump = np.abs(np.diff(logg)) > REFINE_LOG_JUMP
        if not np.any(jump):
            break
        mids = 0.5 * (lams[:-1] + lams[1:])[jump]
        new = _evaluate(model, mids, d_A, zero_tol, workers)
        lams = np.concatenate([lams, mids])
        g = np.concatenate([g, [r[0] for r in new]])
        depths += [r[1] for r in new]
        terms += [r[2] for r in new]
        order = np.argsort(lams)
        lams, g = lams[order], g[order]
        depths = [depths[i] for i in order]
        terms = [terms[i] for i in order]

    bad = ~np.isfinite(g)
    if np.any(bad):
        good = np.flatnonzero(~bad)
        if len(good) == 0:
            raise NumericalError("metric is non-finite at every grid point")
        for j in np.flatnonzero(bad):
            nearest = good[np.argmin(np.abs(good - j))]
            warnings.warn(
                f"non-finite g* at lambda={lams[j]:.6g}; clamped to value at lambda={lams[nearest]:.6g}",
                DegenerateMetricWarning,
                stacklevel=2,
            )
            g[j] = g[nearest]
    return MetricTable(lams, g, d_A, model.tag, tuple(depths), tuple(terms))


@dataclass(frozen=True)
class Schedule:
    """Monotone map ``t in [0, T] -> lambda in [0, 1]`` through knots.

    ``kind`` is ``"linear"``, ``"geodesic"`` or ``"external"``.
    """

    knots_t: np.ndarray
    knots_lambda: np.ndarray
    T: float
    kind: str = "external"
    d_A: int | None = None

    def __post_init__(self):
        t = np.asarray(self.knots_t, dtype=float)
        lam = np.asarray(self.knots_lambda, dtype=float)
        object.__setattr__(self, "knots_t", t)
        object.__setattr__(self, "knots_lambda", lam)
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T}")
        if t.ndim != 1 or t.shape != lam.shape or len(t) < 2:
            raise ValidationError("a schedule needs at least two (t, lambda) knots")
        if t[0] != 0.0 or t[-1] != self.T:
            raise ValidationError("knots must start at t=0 and end at t=T")
        if lam[0] != 0.0 or lam[-1] != 1.0:
            raise ValidationError("schedule must satisfy lambda(0)=0 and lambda(T)=1")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(lam) < 0):
            raise ValidationError("knots must be strictly increasing in t and nondecreasing in lambda")

    @cached_property
    def _interp(self):
        return PchipInterpolator(self.knots_t, self.knots_lambda, extrapolate=False)

    @cached_property
    def _inverse(self):
        keep = np.concatenate([[True], np.diff(self.knots_lambda) > 0])
        return PchipInterpolator(self.knots_lambda[keep], self.knots_t[keep], extrapolate=False)

    def __call__(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        out = np.clip(self._interp(t), 0.0, 1.0)
        out = np.where(t >= self.T, 1.0, np.where(t <= 0.0, 0.0, out))
        return float(out) if out.ndim == 0 else out

    def velocity(self, t):
        """``dlambda/dt`` of the interpolant."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.T)
        return self._interp.derivative()(t)

    def time_at(self, lam):
        """Inverse map ``lambda -> t``."""
        lam = np.clip(np.asarray(lam, dtype=float), 0.0, 1.0)
        out = self._inverse(lam)
        return float(out) if np.ndim(out) == 0 else out

    def sampled(self, n_points: int) -> "Schedule":
        """The same curve re-knotted at ``n_points`` uniform times."""
        t = np.linspace(0.0, self.T, n_points)
        t[-1] = self.T
        return Schedule(t, self(t), self.T, self.kind, self.d_A)

    def to_csv(self, path) -> None:
        write_csv(path, "t,lambda", zip(self.knots_t, self.knots_lambda))

    @classmethod
    def from_csv(cls, path) -> "Schedule":
        rows = read_csv(path, "t,lambda")
        if len(rows) < 2:
            raise ValidationError(f"{path}: a schedule needs at least two rows")
        t, lam = (np.array(c) for c in zip(*rows))
        return cls(t, lam, float(t[-1]), "external")


def linear_schedule(T: float) -> Schedule:
    return Schedule(np.array([0.0, float(T)]), np.array([0.0, 1.0]), float(T), "linear")


def geodesic_schedule(table: MetricTable, T: float) -> Schedule:
    """Constant-speed schedule in the metric ``g``: ``dlambda/dt = C / sqrt(g)``."""
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}")
    root = np.sqrt(table.g_values)
    if not np.any(root > 0):
        warnings.warn("metric vanishes on the whole grid; using the linear schedule", DegenerateMetricWarning, stacklevel=2)
        return linear_schedule(T)
    lam = table.lambdas
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (root[1:] + root[:-1]) * np.diff(lam))])
    t = T * arc / arc[-1]
    t[0], t[-1] = 0.0, float(T)
    # zero-metric stretches give repeated times; keep the first of each run
    keep = np.concatenate([[True], np.diff(t) > 0])
    t, lam = t[keep], lam[keep]
    lam[-1] = 1.0
    return Schedule(t, lam, float(T), "geodesic", table.d_A)


def geodesic_constant(table: MetricTable, T: float) -> float:
    """``C = (1/T) int_0^1 sqrt(g) dlambda`` (trapezoidal)."""
    root = np.sqrt(table.g_values)
    return float(np.sum(0.5 * (root[1:] + root[:-1]) * np.diff(table.lambdas)) / T)
