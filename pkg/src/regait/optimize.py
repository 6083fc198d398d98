"""Derivative-free Nelder-Mead search and the constraint-violation cost.

The cost builder turns a constraint stack plus a params->trajectory provider
into the scalar objective: lambda * integral of the squared Designed/Learned
residuals along the produced trajectory (input-effort term optional, default
zero). Both recovery paths that lack a model of the damage minimize it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .constraints import ConstraintStack, Priority, residual
from .signals import windowed_mean

log = logging.getLogger(__name__)

_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class NMConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    initial_step: float | np.ndarray = 0.1
    max_iters: int = 200
    f_tol: float = 1e-10
    x_tol: float = 1e-10
    bounds: Sequence[tuple[float, float]] | None = None

    def __post_init__(self):
        ok = (self.reflection > 0 and self.expansion > 1
              and 0 < self.contraction < 1 and 0 < self.shrink < 1)
        if not ok:
            raise ValueError("coefficients outside standard Nelder-Mead ranges")


@dataclass
class CostTrace:
    """Every cost evaluation in order, plus the running best."""

    candidates: list[np.ndarray] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    best_so_far: list[float] = field(default_factory=list)
    iterations: int = 0

    def record(self, x: np.ndarray, fx: float) -> None:
        self.candidates.append(np.array(x))
        self.costs.append(float(fx))
        prev = self.best_so_far[-1] if self.best_so_far else np.inf
        self.best_so_far.append(min(prev, float(fx)))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,cost,best\n")
            for i, (c, b) in enumerate(zip(self.costs, self.best_so_far)):
                fh.write(f"{i},{c:.17g},{b:.17g}\n")


def _clip(x: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return x
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(x, lo, hi)


def nelder_mead(f: Callable[[np.ndarray], float], x0,
                cfg: NMConfig = NMConfig()) -> tuple[np.ndarray, CostTrace]:
    """Standard simplex minimization with bounds enforced by clipping.

    Returns the best point found and the full evaluation trace. Terminates on
    simplex cost spread < f_tol, simplex diameter < x_tol, or max_iters.
    """
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    trace = CostTrace()

    def eval_at(x):
        x = _clip(np.asarray(x, dtype=float), cfg.bounds)
        fx = float(f(x))
        trace.record(x, fx)
        return x, fx

    x0c, f0 = eval_at(x0)
    if not np.isfinite(f0):
        raise ValueError(f"cost is not finite at the start point: {f0}")

    steps = np.broadcast_to(np.asarray(cfg.initial_step, dtype=float), (n,))
    simplex = [x0c]
    fvals = [f0]
    for i in range(n):
        xi = x0c.copy()
        xi[i] += steps[i]
        xi, fi = eval_at(xi)
        simplex.append(xi)
        fvals.append(fi)
    simplex = np.array(simplex)
    fvals = np.array(fvals)

    for it in range(cfg.max_iters):
        trace.iterations = it + 1
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if (fvals[-1] - fvals[0] < cfg.f_tol
                and np.max(np.abs(simplex[1:] - simplex[0])) < cfg.x_tol):
            break
        centroid = simplex[:-1].mean(axis=0)
        xr, fr = eval_at(centroid + cfg.reflection * (centroid - simplex[-1]))
        if fr < fvals[0]:
            xe, fe = eval_at(centroid + cfg.expansion * (xr - centroid))
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc, fc = eval_at(centroid + cfg.contraction * (xr - centroid))
                better = fc <= fr
            else:
                xc, fc = eval_at(
                    centroid + cfg.contraction * (simplex[-1] - centroid))
                better = fc < fvals[-1]
            if better:
                simplex[-1], fvals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    xi, fi = eval_at(
                        simplex[0] + cfg.shrink * (simplex[i] - simplex[0]))
                    simplex[i], fvals[i] = xi, fi

    best = int(np.argmin(fvals))
    return simplex[best], trace


def constraint_violation_cost(stack: ConstraintStack,
                              trajectory_provider: Callable,
                              lambda_weight: float = 1.0,
                              input_cost: Callable | None = None,
                              classes=(Priority.DESIGNED, Priority.LEARNED),
                              stride_marks: Callable | None = None,
                              window: int | None = None,
                              failure_penalty: float = 1e6,
                              ) -> Callable[[np.ndarray], float]:
    """Objective: R(params) + lambda * integral ||residual_{D,L}||^2 dt.

    The residual of the requested classes is evaluated at every sample of the
    provider's trajectory (velocities by central differences) and integrated
    with the trapezoid rule. ``stride_marks(traj) -> index boundaries`` plus
    ``window`` switch to a windowed mean of per-stride integrals. Provider
    failures return ``failure_penalty`` so derivative-free search stays total.
    """

    def cost(params) -> float:
        try:
            traj = trajectory_provider(params)
        except Exception as exc:  # provider failure is data, not a crash
            log.warning("trajectory provider failed at %s: %s", params, exc)
            return failure_penalty
        vel = traj.velocities()
        sq = np.empty(len(traj))
        for k in range(len(traj)):
            r = residual(stack, traj.t[k], traj.x[k], vel[k], classes=classes)
            sq[k] = float(r @ r)
        base = float(input_cost(params)) if input_cost is not None else 0.0
        if stride_marks is not None and window is not None:
            bounds = list(stride_marks(traj))
            per_stride = [_trapz(sq[a:b + 1], traj.t[a:b + 1])
                          for a, b in zip(bounds[:-1], bounds[1:])]
            return base + lambda_weight * windowed_mean(per_stride, window)
        return base + lambda_weight * float(_trapz(sq, traj.t))

    return cost
