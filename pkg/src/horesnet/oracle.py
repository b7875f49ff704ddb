"""Classical explicit RK integration driven by the block tableaux.

This is the reference side of the block/solver correspondence: a single
right-hand side ``f`` is shared by all stages, and states are plain numpy
arrays (no tape).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .schemes import DivergenceError, Tableau

RHS = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class IVProblem:
    name: str
    f: RHS
    y0: np.ndarray
    t_span: tuple[float, float]
    analytic: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        self.y0 = np.atleast_1d(np.asarray(self.y0, dtype=np.float64))
        if self.analytic is not None:
            y_at_t0 = np.atleast_1d(self.analytic(self.t_span[0]))
            if not np.allclose(y_at_t0, self.y0, rtol=0, atol=1e-14):
                raise ValueError(f"{self.name}: analytic(t0)={y_at_t0} disagrees with y0={self.y0}")


@dataclass
class OrderEstimate:
    scheme: str
    problem: str
    h: list[float]
    errors: list[float]
    order: float
    residual: float
    used: list[int] = field(default_factory=list)
    note: str = ""


def step(tab: Tableau, f: RHS, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One explicit RK step of size ``h``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    y = np.asarray(y, dtype=np.float64)
    ks: list[np.ndarray] = []
    c = tab.c()
    for i, row in enumerate(tab.stages):
        yi = y
        if row:
            acc = np.zeros_like(y)
            for j, coef in row:
                acc = acc + coef.value * ks[j - 1]
            yi = y + h * acc
        k = np.asarray(f(t + c[i] * h, yi), dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise DivergenceError(f"non-finite stage value k{i + 1} at t={t}", stage=i + 1)
        ks.append(k)
    acc = np.zeros_like(y)
    for i, coef in tab.weights:
        acc = acc + coef.value * ks[i - 1]
    return y + h * acc


def integrate(tab: Tableau, problem: IVProblem, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-step trajectory; returns ``(times, states)`` with n_steps+1 rows."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t0, t1 = problem.t_span
    h = (t1 - t0) / n_steps
    ts = t0 + h * np.arange(n_steps + 1)
    ys = np.empty((n_steps + 1,) + problem.y0.shape)
    ys[0] = problem.y0
    y = problem.y0
    for n in range(n_steps):
        try:
            y = step(tab, problem.f, ts[n], y, h)
        except DivergenceError as exc:
            raise DivergenceError(f"step {n}: {exc}", stage=exc.stage) from exc
        ys[n + 1] = y
    ts[-1] = t1
    return ts, ys


def _fit(h: np.ndarray, err: np.ndarray) -> tuple[float, float]:
    x, y = np.log(h), np.log(err)
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return float(slope), resid


def _errors(tab: Tableau, problem: IVProblem, h_arr: np.ndarray) -> np.ndarray:
    t0, t1 = problem.t_span
    exact = np.atleast_1d(problem.analytic(t1))
    out = []
    for h in h_arr:
        _, ys = integrate(tab, problem, int(round((t1 - t0) / h)))
        out.append(float(np.max(np.abs(ys[-1] - exact))))
    return np.asarray(out)


def measure_order(tab: Tableau, problem: IVProblem, h_list, floor: float = 1e-13,
                  max_residual: float = 0.05) -> OrderEstimate:
    """Least-squares slope of log global error at t1 against log h.

    Step sizes whose error falls below ``floor`` are dropped (round-off
    regime); if that leaves fewer than four, the usable part of the range is
    resampled on integer step counts and the fit notes it.  If the fit residual exceeds ``max_residual`` the largest and
    smallest step sizes are discarded once, keeping at least four.
    """
    if problem.analytic is None:
        raise ValueError("order measurement needs an analytic solution")
    h_arr = np.asarray(sorted(h_list, reverse=True), dtype=np.float64)
    if len(h_arr) < 4:
        raise ValueError("need at least 4 step sizes")
    ratios = h_arr[:-1] / h_arr[1:]
    if not np.allclose(ratios, ratios[0], rtol=1e-9):
        raise ValueError("step sizes must be geometrically spaced")
    t0, t1 = problem.t_span
    err = _errors(tab, problem, h_arr)
    note = ""
    keep = np.nonzero(err >= floor)[0]
    if len(keep) < 4:
        # round-off floor reached: resample the usable part of the range densely
        lo = h_arr[keep[-1]] if len(keep) >= 2 else h_arr[0] / 2.0
        n = np.unique(np.round((t1 - t0) / np.geomspace(h_arr[0], lo, 6)).astype(int))
        h_arr = (t1 - t0) / n.astype(np.float64)
        err = _errors(tab, problem, h_arr)
        keep = np.nonzero(err >= floor)[0]
        note = f"errors below {floor:g}; shrank h range to [{h_arr[-1]:.4g}, {h_arr[0]:.4g}]"
    elif len(keep) < len(h_arr):
        note = f"dropped {len(h_arr) - len(keep)} step sizes with error below {floor:g}"
    errors = err.tolist()
    if len(keep) < 2:
        return OrderEstimate(tab.name, problem.name, h_arr.tolist(), errors, float("nan"), float("nan"),
                             keep.tolist(), note or "too few usable step sizes")
    slope, resid = _fit(h_arr[keep], err[keep])
    if resid > max_residual and len(keep) >= 6:
        keep = keep[1:-1]
        slope, resid = _fit(h_arr[keep], err[keep])
        note = (note + "; " if note else "") + "trimmed extreme step sizes"
    return OrderEstimate(tab.name, problem.name, h_arr.tolist(), errors, slope, resid, keep.tolist(), note)


# -- the fixed test-problem suite --------------------------------------------

def growth_problem() -> IVProblem:
    return IVProblem("growth", lambda t, y: y, [1.0], (0.0, 1.0), lambda t: np.array([np.exp(t)]))


def gaussian_problem(t1: float = 1.0) -> IVProblem:
    # on [0, 2] the coarse steps sit outside the asymptotic regime for midpoint
    return IVProblem("gaussian", lambda t, y: -2.0 * t * y, [1.0], (0.0, t1),
                     lambda t: np.array([np.exp(-t * t)]))


def rotation_problem() -> IVProblem:
    return IVProblem("rotation", lambda t, y: np.array([-y[1], y[0]]), [1.0, 0.0], (0.0, 2.0),
                     lambda t: np.array([np.cos(t), np.sin(t)]))


def linear_problem(lam: float) -> IVProblem:
    return IVProblem(f"linear({lam:g})", lambda t, y: lam * y, [1.0], (0.0, 1.0),
                     lambda t: np.array([np.exp(lam * t)]))


def problem_suite() -> list[IVProblem]:
    return [growth_problem(), gaussian_problem(), rotation_problem()]


DEFAULT_H = [2.0 ** -e for e in range(2, 8)]

# declared acceptance band (lo, hi) of the fitted order per tableau
ORDER_TOLERANCE = {
    "euler": (0.9, 1.1),
    "midpoint": (1.9, 2.1),
    "rk4": (3.8, 4.2),
    "rk4-lite": (0.9, 1.1),
    "verner": (4.0, float("inf")),
    "verner-adaptive": (4.0, float("inf")),
    "verner-canonical": (7.0, float("inf")),
    "verner-canonical-adaptive": (7.0, float("inf")),
}


def within_tolerance(est: OrderEstimate) -> bool:
    lo, hi = ORDER_TOLERANCE[est.scheme]
    return bool(np.isfinite(est.order) and lo <= est.order <= hi)
