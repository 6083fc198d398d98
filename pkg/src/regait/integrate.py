"""Fixed-step integration with Newton projection onto holonomic manifolds.

The integration loop alternates one explicit step with a Newton projection
that restores the holonomic constraints before the sample is stored, so
constraint error cannot compound with integration time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .trajectory import Trajectory


class Method(enum.Enum):
    RK4 = "rk4"
    EULER = "euler"


@dataclass(frozen=True)
class ProjectedIntegratorConfig:
    dt: float = 1e-3
    projection_tol: float = 1e-10
    max_newton_iters: int = 50
    method: Method = Method.RK4

    def __post_init__(self):
        if self.dt <= 0 or self.projection_tol <= 0 or self.max_newton_iters < 1:
            raise ValueError("dt > 0, projection_tol > 0, max_newton_iters >= 1")


class IntegrationError(RuntimeError):
    """Non-finite state or failed projection; message carries t and state."""


def step(f: Callable[[float, np.ndarray], np.ndarray], t: float, x,
         cfg: ProjectedIntegratorConfig) -> np.ndarray:
    """One explicit step of cfg.method from (t, x)."""
    x = np.asarray(x, dtype=float)
    h = cfg.dt
    if cfg.method is Method.EULER:
        out = x + h * np.asarray(f(t, x), dtype=float)
    else:
        k1 = np.asarray(f(t, x), dtype=float)
        k2 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(f(t + h, x + h * k3), dtype=float)
        out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step at t={t}: {out}")
    return out


def project(c: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]], x,
            cfg: ProjectedIntegratorConfig) -> np.ndarray:
    """Newton iteration x <- x - J+(x) c(x) until ||c|| < projection_tol.

    ``c`` returns (residual, jacobian). The pseudoinverse update is the
    minimum-norm correction; a Jacobian without full row rank is an error.
    """
    x = np.asarray(x, dtype=float).copy()
    for _ in range(cfg.max_newton_iters):
        res, jac = c(x)
        res = np.asarray(res, dtype=float)
        if np.linalg.norm(res, ord=np.inf) < cfg.projection_tol:
            return x
        jac = np.atleast_2d(np.asarray(jac, dtype=float))
        svals = np.linalg.svd(jac, compute_uv=False)
        if svals[-1] <= 1e-12 * svals[0] or svals[0] == 0.0:
            raise IntegrationError(
                f"rank-deficient constraint Jacobian during projection at x={x}")
        x = x - np.linalg.pinv(jac, rcond=1e-12) @ res
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"projection diverged: x={x}")
    res, _ = c(x)
    raise IntegrationError(
        f"projection did not converge in {cfg.max_newton_iters} iterations; "
        f"residual {np.linalg.norm(res, ord=np.inf):.3e} at x={x}")


def integrate_projected(f, c, t0: float, x0, t1: float,
                        cfg: ProjectedIntegratorConfig) -> Trajectory:
    """Alternate step/project from a feasible x0; every sample is feasible.

    ``c`` may be None for plain unconstrained integration.
    """
    x = np.asarray(x0, dtype=float)
    if c is not None:
        res0, _ = c(x)
        if np.linalg.norm(np.asarray(res0), ord=np.inf) >= cfg.projection_tol:
            raise IntegrationError(
                f"initial state violates constraints: {res0}")
    nsteps = int(round((t1 - t0) / cfg.dt))
    if abs(t0 + nsteps * cfg.dt - t1) > 1e-9 * max(1.0, abs(t1)):
        raise ValueError("span must be an integer number of steps")
    ts = [t0]
    xs = [x.copy()]
    t = t0
    for k in range(nsteps):
        try:
            x = step(f, t, x, cfg)
            if c is not None:
                x = project(c, x, cfg)
        except IntegrationError as exc:
            raise IntegrationError(f"t={t + cfg.dt}: {exc}") from exc
        t = t0 + (k + 1) * cfg.dt
        ts.append(t)
        xs.append(x.copy())
    return Trajectory(t=np.array(ts), x=np.array(xs))
