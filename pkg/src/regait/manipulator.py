"""Force-signal matching on a constrained mechanical system.

The plant is M(q) qdd + C(q, qd) = B u + A(q)^T lam with Pfaffian constraint
A(q) qd = 0. Along a desired motion the total applied force
eta(u, lam) = B u + A^T lam is recorded; after a rank-preserving change of the
constraint rows, the input is redesigned so the perturbed plant reproduces the
same force signal, and therefore (by uniqueness of solutions) the same motion.
Includes a 2-DOF point-mass toy small enough for hand-checked oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .integrate import Method, ProjectedIntegratorConfig, integrate_projected
from .trajectory import Trajectory


@dataclass(frozen=True)
class ManipulatorModel:
    """Plant description; all pieces are functions of configuration.

    ``constraint_rate`` returns dA/dt given (q, qd); omit it to use a central
    finite difference of A along the direction qd.
    """

    inertia: Callable[[np.ndarray], np.ndarray]
    bias: Callable[[np.ndarray, np.ndarray], np.ndarray]
    input_map: np.ndarray
    constraint: Callable[[np.ndarray], np.ndarray]
    constraint_rate: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    @property
    def dof(self) -> int:
        return self.input_map.shape[0]

    def constraint_at(self, q) -> np.ndarray:
        A = np.asarray(self.constraint(np.asarray(q, dtype=float)), dtype=float)
        return A.reshape(0, self.dof) if A.size == 0 else np.atleast_2d(A)

    def constraint_rate_at(self, q, qd) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        if self.constraint_rate is not None:
            out = np.asarray(self.constraint_rate(q, qd), dtype=float)
            return out.reshape(0, self.dof) if out.size == 0 else np.atleast_2d(out)
        speed = float(np.linalg.norm(qd))
        if speed == 0.0:
            return np.zeros_like(self.constraint_at(q))
        h = 1e-6 * max(1.0, float(np.linalg.norm(q))) / speed
        return (self.constraint_at(q + h * qd)
                - self.constraint_at(q - h * qd)) / (2.0 * h)


@dataclass(frozen=True)
class ForceSignal:
    """Recorded total force eta(t) = B u + A^T lam along a trajectory."""

    t: np.ndarray
    eta: np.ndarray  # (N, n)

    def __post_init__(self):
        if self.eta.shape[0] != len(self.t):
            raise ValueError("one eta per sample required")


def constrained_accel(model: ManipulatorModel, q, qd, u,
                      constraint: Callable | None = None,
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Solve the saddle system for (qdd, lam) at one state.

    [M  -A^T] [qdd]   [B u - C  ]
    [A    0 ] [lam] = [-Adot qd ]

    ``constraint`` optionally overrides the model's A (used for perturbed
    plants without rebuilding the model).
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    u = np.asarray(u, dtype=float)
    M = np.asarray(model.inertia(q), dtype=float)
    C = np.asarray(model.bias(q, qd), dtype=float)
    B = model.input_map
    if constraint is None:
        A = model.constraint_at(q)
        Adot = model.constraint_rate_at(q, qd)
    else:
        A, Adot = _constraint_pair(constraint, model, q, qd)
    m, n = A.shape
    if m == 0:
        return np.linalg.solve(M, B @ u - C), np.zeros(0)
    saddle = np.block([[M, -A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([B @ u - C, -Adot @ qd])
    try:
        sol = np.linalg.solve(saddle, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular saddle matrix at q={q}") from exc
    return sol[:n], sol[n:]


def _constraint_pair(constraint, model, q, qd):
    A = np.atleast_2d(np.asarray(constraint(q), dtype=float))
    speed = float(np.linalg.norm(qd))
    if speed == 0.0:
        return A, np.zeros_like(A)
    h = 1e-6 * max(1.0, float(np.linalg.norm(q))) / speed
    Adot = (np.atleast_2d(np.asarray(constraint(q + h * qd), dtype=float))
            - np.atleast_2d(np.asarray(constraint(q - h * qd), dtype=float))
            ) / (2.0 * h)
    return A, Adot


def record_force_signal(model: ManipulatorModel, traj: Trajectory) -> ForceSignal:
    """eta at every sample of a trajectory that carries its inputs."""
    if traj.u is None:
        raise ValueError("trajectory must store inputs")
    n = model.dof
    eta = np.empty((len(traj), n))
    for k in range(len(traj)):
        q, qd = traj.x[k, :n], traj.x[k, n:]
        A = model.constraint_at(q)
        _, lam = constrained_accel(model, q, qd, traj.u[k])
        eta[k] = model.input_map @ traj.u[k] + A.T @ lam
    return ForceSignal(t=traj.t.copy(), eta=eta)


@dataclass
class RedesignResult:
    u: np.ndarray
    residual: float
    feasible: bool


def redesign_input(model: ManipulatorModel, perturbed_A: Callable, eta_d,
                   q, qd, gauge: np.ndarray | None = None,
                   tol: float = 1e-9) -> RedesignResult:
    """Input u* whose total force on the perturbed plant matches eta_d.

    The multipliers the perturbed plant produces are affine in u,
    lam(u) = lam0 + S u, so the matching condition
    B u + A~^T lam(u) = eta_d is linear in u and solved by least squares.
    An invertible ``gauge`` matrix Q reweights the match to Q eta = Q eta_d;
    for solvable matches the minimizer is unchanged.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    eta_d = np.asarray(eta_d, dtype=float)
    M = np.asarray(model.inertia(q), dtype=float)
    C = np.asarray(model.bias(q, qd), dtype=float)
    B = model.input_map
    A, Adot = _constraint_pair(perturbed_A, model, q, qd)
    Minv = np.linalg.inv(M)
    W = A @ Minv @ A.T
    Winv = np.linalg.inv(W)
    lam0 = Winv @ (-Adot @ qd + A @ Minv @ C)
    S = -Winv @ A @ Minv @ B
    T = B + A.T @ S
    rhs = eta_d - A.T @ lam0
    lhs, target = (T, rhs) if gauge is None else (gauge @ T, gauge @ rhs)
    u, *_ = np.linalg.lstsq(lhs, target, rcond=None)
    res = float(np.linalg.norm(T @ u - rhs))
    scale = max(1.0, float(np.linalg.norm(eta_d)))
    return RedesignResult(u=u, residual=res, feasible=res < tol * scale)


def gauge_invariance_check(model: ManipulatorModel, Q: np.ndarray,
                           traj: Trajectory, perturbed_A: Callable | None = None,
                           tol: float = 1e-9) -> bool:
    """True when redesigning against Q.eta equals plain redesign everywhere.

    Records eta along ``traj`` (which must carry inputs) and compares the
    redesigned input with and without the gauge transformation Q at every
    sample. Defaults to the model's own constraint rows.
    """
    Q = np.asarray(Q, dtype=float)
    if abs(np.linalg.det(Q)) < 1e-12:
        raise ValueError("gauge matrix must be invertible")
    if perturbed_A is None:
        perturbed_A = model.constraint_at
    signal = record_force_signal(model, traj)
    n = model.dof
    for k in range(len(traj)):
        q, qd = traj.x[k, :n], traj.x[k, n:]
        plain = redesign_input(model, perturbed_A, signal.eta[k], q, qd)
        gauged = redesign_input(model, perturbed_A, signal.eta[k], q, qd,
                                gauge=Q)
        if np.linalg.norm(plain.u - gauged.u) > tol:
            return False
    return True


def point_mass_toy(mass=(1.0, 1.0)) -> ManipulatorModel:
    """2-DOF planar point mass with one configuration-dependent Pfaffian row.

    Constraint sin(q0) qd0 + qd1 = 0; multipliers are generically nonzero and
    dA/dt is nontrivial, which is all the structure the demos need.
    """
    M = np.diag(mass)
    return ManipulatorModel(
        inertia=lambda q: M,
        bias=lambda q, qd: np.zeros(2),
        input_map=np.eye(2),
        constraint=lambda q: np.array([[np.sin(q[0]), 1.0]]),
        constraint_rate=lambda q, qd: np.array(
            [[np.cos(q[0]) * qd[0], 0.0]]),
    )


def rescaled_constraint(model: ManipulatorModel,
                        factor: Callable[[np.ndarray], float]) -> Callable:
    """Row-rescaled constraint A~(q) = c(q) A(q); rank- and kernel-preserving
    for positive c, so the original motion stays feasible."""

    def perturbed(q):
        return float(factor(np.asarray(q, dtype=float))) * model.constraint_at(q)

    return perturbed


def _constrained_field(model: ManipulatorModel, u_of_t: Callable):
    n = model.dof

    def field(t, state):
        q, qd = state[:n], state[n:]
        qdd, _ = constrained_accel(model, q, qd, u_of_t(t, state))
        return np.concatenate([qd, qdd])

    return field


def _velocity_constraint(model: ManipulatorModel):
    """Pfaffian residual A(q) qd as a projectable constraint on (q, qd)."""
    n = model.dof

    def c(state):
        q, qd = state[:n], state[n:]
        A = model.constraint_at(q)
        res = A @ qd
        jac_q = np.empty((A.shape[0], n))
        h = 1e-6 * max(1.0, float(np.linalg.norm(q)))
        for i in range(n):
            dq = np.zeros(n)
            dq[i] = h
            jac_q[:, i] = ((model.constraint_at(q + dq)
                            - model.constraint_at(q - dq)) @ qd) / (2.0 * h)
        return res, np.hstack([jac_q, A])

    return c


def simulate_with_input(model: ManipulatorModel, u_of_t: Callable,
                        q0, qd0, t1: float, dt: float = 1e-3,
                        project_velocity: bool = True) -> Trajectory:
    """Integrate the constrained plant under u(t, state); records inputs.

    The Pfaffian constraint is enforced at acceleration level by the saddle
    solve and corrected at velocity level by Newton projection each step.
    """
    x0 = np.concatenate([np.asarray(q0, dtype=float),
                         np.asarray(qd0, dtype=float)])
    cfg = ProjectedIntegratorConfig(dt=dt, method=Method.RK4)
    c = _velocity_constraint(model) if project_velocity else None
    traj = integrate_projected(_constrained_field(model, u_of_t),
                               c, 0.0, x0, t1, cfg)
    u = np.array([np.asarray(u_of_t(traj.t[k], traj.x[k]), dtype=float)
                  for k in range(len(traj))])
    return Trajectory(t=traj.t, x=traj.x, u=u)


@dataclass
class ForceMatchingOutcome:
    """End-to-end results for one perturbation scenario."""

    desired: Trajectory
    signal: ForceSignal
    redesigned: Trajectory
    tracking_error: float
    worst_match_residual: float
    gauge_ok: bool


def run_force_matching(model: ManipulatorModel, perturbed_A: Callable,
                       u_desired: Callable, q0, qd0, T: float = 2.0,
                       dt: float = 1e-3, gauge: np.ndarray | None = None,
                       ) -> ForceMatchingOutcome:
    """Record eta on the nominal plant, redesign on the perturbed one, close
    the loop, and compare trajectories.

    The desired motion is generated at half resolution so the recorded force
    signal covers the Runge-Kutta stage times of the closed-loop integration
    exactly (no interpolation enters the comparison).
    """
    fine = simulate_with_input(model, lambda t, s: u_desired(t), q0, qd0,
                               T, dt=0.5 * dt)
    signal = record_force_signal(model, fine)

    def eta_at(t):
        idx = int(round(t / (0.5 * dt)))
        if abs(t - signal.t[idx]) > 1e-9:
            raise ValueError(f"force signal not sampled at t={t}")
        return signal.eta[idx]

    def u_star(t, state):
        n = model.dof
        out = redesign_input(model, perturbed_A, eta_at(t),
                             state[:n], state[n:], gauge=gauge)
        return out.u

    redone = simulate_with_input(model, u_star, q0, qd0, T, dt=dt)
    n = model.dof
    desired_q = fine.x[::2, :n]
    err = float(np.max(np.linalg.norm(redone.x[:, :n] - desired_q, axis=1)))

    worst = 0.0
    for k in range(0, len(fine), 20):
        q, qd = fine.x[k, :n], fine.x[k, n:]
        worst = max(worst, redesign_input(model, perturbed_A, signal.eta[k],
                                          q, qd).residual)
    gauge_ok = True
    if gauge is not None:
        coarse = Trajectory(t=fine.t[::20], x=fine.x[::20], u=fine.u[::20])
        gauge_ok = gauge_invariance_check(model, gauge, coarse,
                                          perturbed_A=perturbed_A)
    return ForceMatchingOutcome(desired=fine, signal=signal, redesigned=redone,
                                tracking_error=err,
                                worst_match_residual=worst, gauge_ok=gauge_ok)
