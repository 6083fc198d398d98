"""Planar two-armed crawler: kinematics, constraint stack, reference gait,
jam damage, playback baseline, and closed-form recovery.

State layout is x = (x, y, theta0, theta1..theta6): an SE(2) pose followed by
six joint angles, three per arm. Each arm is a chain of unit links hanging off
a hip offset h1/h2 in the body frame; both feet are pinned to ground anchors
l1/l2, giving four real Pfaffian rows (real and imaginary parts of the two
complex foot velocities).

The encoding template is the polar form (r, alpha) of the body-frame midpoint
of the two feet. Designed rows keep that midpoint stationary in the world
(rows 1-2, implied by the pinned feet), drive (r, alpha) along recorded gait
rates (rows 3-4), and lock x to theta0 (row 5). Jamming a joint adds one
physical row (that joint's velocity is zero); recovery re-solves the joint
rates so the template still tracks the recorded gait.

Sign conventions: with beta = theta0 + alpha, the world midpoint of the feet
is x + iy + r e^{i beta}, so pinned feet give
    d/dt [x + r cos beta] = 0  and  d/dt [y + r sin beta] = 0,
which are rows 1-2 below. The recovery pose rate is the unique solution of
those rows plus row 5 given (rdot_d, alphadot_d); all other signs follow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constraints import (ConstraintBlock, ConstraintRow, ConstraintStack,
                          Priority)
from .encoding import EncodingMap
from .integrate import (IntegrationError, ProjectedIntegratorConfig,
                        integrate_projected)
from .trajectory import Trajectory

G_DIM = 3
N_JOINTS = 6
STATE_DIM = 9

# dr and dalpha as template 1-forms, used by the learning pipeline
TEMPLATE_FORMS = (np.array([1.0, 0.0]), np.array([0.0, 1.0]))


@dataclass(frozen=True)
class CrawlerParams:
    l1: complex = 2.5 + 2.0j
    l2: complex = -2.5 + 2.0j
    h1: complex = 1.0 + 0.0j
    h2: complex = -1.0 + 0.0j

    def __post_init__(self):
        if self.l1 == self.l2:
            raise ValueError("foot anchors must be distinct")


@dataclass(frozen=True)
class TemplateOutput:
    r: float
    alpha: float


def _arm(h: complex, angles: np.ndarray) -> tuple[complex, np.ndarray]:
    """Endpoint of a three-link unit chain and the tail sums s_j.

    d endpoint / d angle_j = i * s_j where s_j sums the links from j outward.
    """
    links = np.exp(1j * np.cumsum(angles))
    tails = np.cumsum(links[::-1])[::-1]
    return h + links.sum(), tails


def limb_endpoints(params: CrawlerParams, state) -> tuple[complex, complex]:
    state = np.asarray(state, dtype=float)
    z = state[0] + 1j * state[1]
    rot = np.exp(1j * state[2])
    p1, _ = _arm(params.h1, state[3:6])
    p2, _ = _arm(params.h2, state[6:9])
    return z + rot * p1, z + rot * p2


def _limb_rows(params: CrawlerParams, state) -> tuple[np.ndarray, np.ndarray]:
    """Complex gradient rows of (f1, f2) w.r.t. the nine state coordinates."""
    state = np.asarray(state, dtype=float)
    rot = np.exp(1j * state[2])
    p1, s1 = _arm(params.h1, state[3:6])
    p2, s2 = _arm(params.h2, state[6:9])
    J1 = np.zeros(STATE_DIM, dtype=complex)
    J2 = np.zeros(STATE_DIM, dtype=complex)
    J1[0] = J2[0] = 1.0
    J1[1] = J2[1] = 1j
    J1[2] = 1j * rot * p1
    J2[2] = 1j * rot * p2
    J1[3:6] = 1j * rot * s1
    J2[6:9] = 1j * rot * s2
    return J1, J2


def foot_matrix(params: CrawlerParams, state) -> np.ndarray:
    """(4, 9) velocity rows of (Re f1, Im f1, Re f2, Im f2)."""
    J1, J2 = _limb_rows(params, state)
    return np.array([J1.real, J1.imag, J2.real, J2.imag])


def foot_residual(params: CrawlerParams, state) -> np.ndarray:
    f1, f2 = limb_endpoints(params, state)
    d1, d2 = f1 - params.l1, f2 - params.l2
    return np.array([d1.real, d1.imag, d2.real, d2.imag])


def physical_constraints(params: CrawlerParams, state,
                         ) -> tuple[list[ConstraintRow], np.ndarray]:
    """Four pinned-foot rows (gamma = 0) plus the holonomic residual."""
    rows = [ConstraintRow(coefficients=row)
            for row in foot_matrix(params, state)]
    return rows, foot_residual(params, state)


def _midpoint(params: CrawlerParams, state) -> tuple[complex, np.ndarray]:
    p1, s1 = _arm(params.h1, state[3:6])
    p2, s2 = _arm(params.h2, state[6:9])
    return 0.5 * (p1 + p2), 0.5j * np.concatenate([s1, s2])


def template_map(params: CrawlerParams, state, tol: float = 1e-12,
                 ) -> TemplateOutput:
    state = np.asarray(state, dtype=float)
    w, _ = _midpoint(params, state)
    r = abs(w)
    if r < tol:
        raise ValueError("template undefined: limb midpoint at the body origin")
    return TemplateOutput(r=float(r), alpha=float(np.angle(w)))


def shape_jacobian(params: CrawlerParams, state) -> np.ndarray:
    """(2, 6) Jacobian of (r, alpha) w.r.t. the joint angles."""
    w, dw = _midpoint(params, np.asarray(state, dtype=float))
    r = abs(w)
    if r < 1e-12:
        raise ValueError("template undefined: limb midpoint at the body origin")
    prod = np.conj(w) * dw
    return np.vstack([prod.real / r, prod.imag / r**2])


def template_jacobian(params: CrawlerParams, state) -> np.ndarray:
    """(5, 9) Jacobian of (x, y, theta0, r, alpha) w.r.t. the state."""
    out = np.zeros((5, STATE_DIM))
    out[:3, :3] = np.eye(3)
    out[3:, 3:] = shape_jacobian(params, state)
    return out


def template_encoding_map(params: CrawlerParams) -> EncodingMap:
    def outputs(state):
        out = template_map(params, state)
        return np.array([out.r, out.alpha])

    def jacobian(state):
        J = np.zeros((2, STATE_DIM))
        J[:, 3:] = shape_jacobian(params, state)
        return J

    return EncodingMap(outputs=outputs, jacobian=jacobian)


def shape_features(x) -> np.ndarray:
    """Joint-angle part of states; the phase estimator's feature space."""
    return np.asarray(x, dtype=float)[..., 3:]


@dataclass(frozen=True)
class DesignedRows:
    """The five gait rows in template coordinates (xd, yd, theta0d, rd,
    alphad) together with their pullbacks to the nine-dimensional state."""

    template_rows: np.ndarray  # (5, 5)
    gamma: np.ndarray          # (5,)
    rows: np.ndarray           # (5, 9)
    omega_g: np.ndarray        # (3, 3) pose block of rows 1, 2, 5
    omega_ra: np.ndarray       # (3, 2) (rd, alphad) block of rows 1, 2, 5


def design_constraints(params: CrawlerParams, state,
                       rates: Sequence[float] = (0.0, 0.0)) -> DesignedRows:
    state = np.asarray(state, dtype=float)
    out = template_map(params, state)
    r = out.r
    beta = state[2] + out.alpha
    cb, sb = np.cos(beta), np.sin(beta)
    tmpl = np.array([
        [1.0, 0.0, -r * sb, cb, -r * sb],
        [0.0, 1.0, r * cb, sb, r * cb],
        [0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 1.0, 0.0],
        [1.0, 0.0, -1.0, 0.0, 0.0],
    ])
    gamma = np.array([0.0, 0.0, float(rates[1]), float(rates[0]), 0.0])
    rows = tmpl @ template_jacobian(params, state)
    keep = [0, 1, 4]
    return DesignedRows(template_rows=tmpl, gamma=gamma, rows=rows,
                        omega_g=tmpl[keep, :3], omega_ra=tmpl[keep, 3:])


_IK_GUESSES = (
    (np.pi / 2,) * 6,
    (0.9, 0.6, 0.3, 2.2, -0.6, -0.3),
    (1.2, 0.4, 0.2, 1.9, -0.4, -0.2),
    (0.7, 0.8, 0.5, 2.4, -0.8, -0.5),
    (1.1, -0.5, 0.4, 2.0, 0.5, -0.4),
)


def initial_configuration(params: CrawlerParams,
                          guesses: Sequence[Sequence[float]] | None = None,
                          tol: float = 1e-12, max_iters: int = 200,
                          ) -> np.ndarray:
    """Feasible zero-pose state via damped Newton on the foot residual.

    The 4-equation, 6-unknown system is solved with pseudoinverse steps; the
    first guess that converges wins (the elbow branch is a free choice).
    """
    for guess in guesses if guesses is not None else _IK_GUESSES:
        theta = np.array(guess, dtype=float)
        for _ in range(max_iters):
            state = np.concatenate([np.zeros(G_DIM), theta])
            res = foot_residual(params, state)
            err = np.linalg.norm(res, ord=np.inf)
            if err < tol:
                return state
            J = foot_matrix(params, state)[:, G_DIM:]
            full = np.linalg.pinv(J, rcond=1e-10) @ res
            scale, base = 1.0, np.linalg.norm(res)
            while scale > 1e-4:
                cand = theta - scale * full
                cres = foot_residual(params,
                                     np.concatenate([np.zeros(G_DIM), cand]))
                if np.linalg.norm(cres) < base:
                    theta = cand
                    break
                scale *= 0.5
            else:
                break  # no descent step found; try the next guess
    raise ValueError("inverse kinematics failed for every initial guess")


@dataclass(frozen=True)
class GaitProfile:
    """Sinusoidal weights over the feet-pinned null-space directions.

    The null space of [foot rows; x-theta0 row] is four-dimensional; its SVD
    basis at each state is aligned to the basis at the start (orthogonal
    Procrustes) so the field is a continuous pure function of (t, state).
    """

    amplitudes: tuple[float, ...] = (0.55, 0.45, 0.40, 0.35)
    phases: tuple[float, ...] = (0.0, 1.7, 3.4, 5.1)
    min_alignment: float = 0.2

    def weights(self, t: float, period: float) -> np.ndarray:
        ph = 2.0 * np.pi * t / period
        return np.asarray(self.amplitudes) * np.sin(ph + np.asarray(self.phases))


def _null_basis(params: CrawlerParams, state) -> np.ndarray:
    M = np.vstack([foot_matrix(params, state),
                   design_constraints(params, state).rows[4]])
    _, svals, vt = np.linalg.svd(M)
    if svals[-1] < 1e-10 * svals[0]:
        raise IntegrationError("gait constraint rows lost rank")
    return vt[M.shape[0]:].T


def _gait_field(params: CrawlerParams, profile: GaitProfile, period: float,
                basis0: np.ndarray) -> Callable:
    def field(t, state):
        N = _null_basis(params, state)
        U, sv, Vt = np.linalg.svd(N.T @ basis0)
        if sv.min() < profile.min_alignment:
            raise IntegrationError(
                f"null-space frame drifted too far from the start (cos {sv.min():.3f})")
        return N @ ((U @ Vt) @ profile.weights(t, period))

    return field


@dataclass(frozen=True)
class ReferenceGait:
    """Recorded gait on a half-resolution grid.

    ``t``/``x``/``v`` are sampled at dt/2 so that Runge-Kutta stage times of
    any dt-grid integration over the same span land exactly on stored samples;
    ``rates_at`` then never interpolates. ``v`` holds the exact field velocity
    at each stored state; (r, alpha) and their rates are evaluated from it.
    """

    params: CrawlerParams
    period: float
    dt: float
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    r: np.ndarray
    alpha: np.ndarray
    rdot: np.ndarray
    alphadot: np.ndarray

    def _index(self, t: float) -> int:
        half = 0.5 * self.dt
        idx = int(round(float(t) / half))
        if idx < 0 or idx >= len(self.t) or abs(t - idx * half) > 1e-9:
            raise ValueError(f"time {t} is not on the recorded gait grid")
        return idx

    def rates_at(self, t: float) -> tuple[float, float]:
        idx = self._index(t)
        return float(self.rdot[idx]), float(self.alphadot[idx])

    def full_grid(self) -> Trajectory:
        return Trajectory(t=self.t[::2].copy(), x=self.x[::2].copy())

    @property
    def initial_state(self) -> np.ndarray:
        return self.x[0].copy()


def _foot_projection(params: CrawlerParams) -> Callable:
    def c(state):
        return foot_residual(params, state), foot_matrix(params, state)

    return c


def reference_gait(params: CrawlerParams, period: float = 1.0,
                   dt: float = 1e-3, profile: GaitProfile | None = None,
                   x0: np.ndarray | None = None) -> ReferenceGait:
    """Generate and record the nominal gait by projected integration."""
    profile = profile if profile is not None else GaitProfile()
    if x0 is None:
        x0 = initial_configuration(params)
    else:
        x0 = np.asarray(x0, dtype=float)
    field = _gait_field(params, profile, period, _null_basis(params, x0))
    cfg = ProjectedIntegratorConfig(dt=0.5 * dt, projection_tol=1e-11)
    traj = integrate_projected(field, _foot_projection(params), 0.0, x0,
                               period, cfg)
    n = len(traj)
    v = np.empty((n, STATE_DIM))
    r = np.empty(n)
    alpha = np.empty(n)
    rdot = np.empty(n)
    alphadot = np.empty(n)
    for k in range(n):
        v[k] = field(traj.t[k], traj.x[k])
        out = template_map(params, traj.x[k])
        r[k], alpha[k] = out.r, out.alpha
        rdot[k], alphadot[k] = shape_jacobian(params, traj.x[k]) @ v[k, G_DIM:]
    return ReferenceGait(params=params, period=period, dt=dt, t=traj.t,
                         x=traj.x, v=v, r=r, alpha=alpha, rdot=rdot,
                         alphadot=alphadot)


def apply_jam(joint_index: int) -> ConstraintRow:
    """Physical row freezing one joint: e_j on the joint column, gamma 0."""
    joint_index = int(joint_index)
    if not 1 <= joint_index <= N_JOINTS:
        raise ValueError(f"jam joint index must be in 1..{N_JOINTS}")
    coeffs = np.zeros(STATE_DIM)
    coeffs[G_DIM - 1 + joint_index] = 1.0
    return ConstraintRow(coefficients=coeffs)


def physical_block(params: CrawlerParams, jam: int | None = None,
                   ) -> ConstraintBlock:
    jam_row = apply_jam(jam) if jam else None

    def rows(t, state):
        out, _ = physical_constraints(params, state)
        if jam_row is not None:
            out.append(jam_row)
        return out

    label = "pinned feet" + (f" + jammed joint {jam}" if jam else "")
    return ConstraintBlock(priority=Priority.PHYSICAL, rows=rows, label=label)


def designed_block(params: CrawlerParams, reference: ReferenceGait,
                   ) -> ConstraintBlock:
    def rows(t, state):
        des = design_constraints(params, state,
                                 rates=reference.rates_at(t))
        return [ConstraintRow(coefficients=row, value=g)
                for row, g in zip(des.rows, des.gamma)]

    return ConstraintBlock(priority=Priority.DESIGNED, rows=rows,
                           label="template gait")


def crawler_stack(params: CrawlerParams, reference: ReferenceGait,
                  jam: int | None = None) -> ConstraintStack:
    return ConstraintStack(ambient_dim=STATE_DIM,
                           blocks=[physical_block(params, jam),
                                   designed_block(params, reference)])


def recovery_field(params: CrawlerParams, reference: ReferenceGait,
                   jam: int) -> Callable:
    """Joint-rate law that tracks the recorded template under the jam.

    Pose rate comes from the invertible 3x3 pose block of template rows 1, 2,
    5; joint rates are the minimum-norm solution of the stacked foot rows,
    template-rate rows, and the jam row.
    """
    e_jam = np.zeros(N_JOINTS)
    e_jam[jam - 1] = 1.0

    def field(t, state):
        rates = np.asarray(reference.rates_at(t))
        des = design_constraints(params, state, rates=rates)
        svals = np.linalg.svd(des.omega_g, compute_uv=False)
        if svals[-1] < 1e-10 * svals[0]:
            raise IntegrationError(
                f"pose block of the template rows lost rank at t={t}")
        gd = np.linalg.solve(des.omega_g, -des.omega_ra @ rates)
        A = foot_matrix(params, state)
        stacked = np.vstack([A[:, G_DIM:], shape_jacobian(params, state),
                             e_jam])
        rhs = np.concatenate([-A[:, :G_DIM] @ gd, rates, [0.0]])
        theta_dot = np.linalg.pinv(stacked, rcond=1e-10) @ rhs
        return np.concatenate([gd, theta_dot])

    return field


@dataclass(frozen=True)
class RecoveryResult:
    trajectory: Trajectory
    r: np.ndarray
    alpha: np.ndarray
    jam: int
    designed_residual: np.ndarray  # per-sample designed-row violation norm


def _designed_residuals(params, reference, t, x, v) -> np.ndarray:
    out = np.empty(len(t))
    for k in range(len(t)):
        des = design_constraints(params, x[k], rates=reference.rates_at(t[k]))
        out[k] = np.linalg.norm(des.rows @ v[k] - des.gamma)
    return out


def recover(params: CrawlerParams, reference: ReferenceGait, jam: int,
            cfg: ProjectedIntegratorConfig | None = None) -> RecoveryResult:
    """Integrate the recovery law from the reference initial condition.

    With jam=0 there is nothing to recover: the reference itself realizes the
    behavior, and it is returned unchanged.
    """
    if not jam:
        full = reference.full_grid()
        return RecoveryResult(trajectory=full, r=reference.r[::2].copy(),
                              alpha=reference.alpha[::2].copy(), jam=0,
                              designed_residual=_designed_residuals(
                                  params, reference, full.t, full.x,
                                  reference.v[::2]))
    jam = int(jam)
    if not 1 <= jam <= N_JOINTS:
        raise ValueError(f"jam joint index must be in 1..{N_JOINTS}")
    if cfg is None:
        cfg = ProjectedIntegratorConfig(dt=reference.dt, projection_tol=1e-11)
    x0 = reference.initial_state
    locked = x0[G_DIM - 1 + jam]
    jam_grad = np.zeros((1, STATE_DIM))
    jam_grad[0, G_DIM - 1 + jam] = 1.0

    def c(state):
        res = np.concatenate([foot_residual(params, state),
                              [state[G_DIM - 1 + jam] - locked]])
        return res, np.vstack([foot_matrix(params, state), jam_grad])

    field = recovery_field(params, reference, jam)
    traj = integrate_projected(field, c, 0.0, x0, reference.period, cfg)
    v = np.array([field(traj.t[k], traj.x[k]) for k in range(len(traj))])
    rr, aa = template_traces(params, traj.x)
    return RecoveryResult(trajectory=traj, r=rr, alpha=aa, jam=jam,
                          designed_residual=_designed_residuals(
                              params, reference, traj.t, traj.x, v))


def _pose_refit_rollout(params: CrawlerParams, thetas: np.ndarray,
                        g0: np.ndarray, max_iters: int = 60,
                        tol: float = 1e-12) -> np.ndarray:
    """Least-squares pose fit per sample: Gauss-Newton on the foot residual
    over (x, y, theta0) with the previous pose as the initial guess."""
    out = np.empty((len(thetas), STATE_DIM))
    g = np.array(g0, dtype=float)
    for k in range(len(thetas)):
        state = np.concatenate([g, thetas[k]])
        for _ in range(max_iters):
            res = foot_residual(params, state)
            J = foot_matrix(params, state)[:, :G_DIM]
            delta = np.linalg.lstsq(J, res, rcond=None)[0]
            state[:G_DIM] -= delta
            if not np.all(np.isfinite(state[:G_DIM])) or \
                    np.linalg.norm(state[:G_DIM]) > 1e6:
                raise ValueError(f"pose fit diverged at sample {k}")
            if np.linalg.norm(delta, ord=np.inf) < tol:
                break
        else:
            raise ValueError(f"pose fit did not converge at sample {k}")
        out[k] = state
        g = state[:G_DIM].copy()
    return out


def playback_baseline(params: CrawlerParams, reference: ReferenceGait,
                      jam: int) -> Trajectory:
    """Replay the recorded joint curves with the jammed joint stuck.

    The pose is re-fit per sample from the (generally infeasible) foot
    equations; the result is the no-recovery trajectory.
    """
    t = reference.t[::2]
    thetas = reference.x[::2, G_DIM:].copy()
    if jam:
        jam = int(jam)
        if not 1 <= jam <= N_JOINTS:
            raise ValueError(f"jam joint index must be in 1..{N_JOINTS}")
        thetas[:, jam - 1] = thetas[0, jam - 1]
    X = _pose_refit_rollout(params, thetas, reference.x[0, :G_DIM])
    return Trajectory(t=t.copy(), x=X)


def gait_perturbation_provider(params: CrawlerParams,
                               reference: ReferenceGait, jam: int,
                               stride: int = 4) -> Callable:
    """params -> Trajectory factory for the damage-unaware recovery search.

    Each free joint gets one sine lobe of adjustable amplitude added to its
    recorded curve (zero at t = 0, so the start state is unchanged); the
    jammed joint ignores its command. The pose is re-fit per sample exactly as
    in the playback baseline.
    """
    t = reference.t[::2][::stride]
    base = reference.x[::2, G_DIM:][::stride].copy()
    g0 = reference.x[0, :G_DIM]
    free = [j for j in range(N_JOINTS) if j != jam - 1]
    lobe = np.sin(2.0 * np.pi * t / reference.period)

    def provider(mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        thetas = base.copy()
        for i, j in enumerate(free[:len(mu)]):
            thetas[:, j] += mu[i] * lobe
        thetas[:, jam - 1] = base[0, jam - 1]
        return Trajectory(t=t.copy(),
                          x=_pose_refit_rollout(params, thetas, g0))

    return provider


def template_traces(params: CrawlerParams, X) -> tuple[np.ndarray, np.ndarray]:
    """Batched (r, alpha) over an (N, 9) block of states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p1 = params.h1 + np.exp(1j * np.cumsum(X[:, 3:6], axis=1)).sum(axis=1)
    p2 = params.h2 + np.exp(1j * np.cumsum(X[:, 6:9], axis=1)).sum(axis=1)
    w = 0.5 * (p1 + p2)
    return np.abs(w), np.angle(w)


def foot_residual_series(params: CrawlerParams, X) -> np.ndarray:
    """Per-sample max foot distance from its anchor over (N, 9) states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = X[:, 0] + 1j * X[:, 1]
    rot = np.exp(1j * X[:, 2])
    p1 = params.h1 + np.exp(1j * np.cumsum(X[:, 3:6], axis=1)).sum(axis=1)
    p2 = params.h2 + np.exp(1j * np.cumsum(X[:, 6:9], axis=1)).sum(axis=1)
    return np.maximum(np.abs(z + rot * p1 - params.l1),
                      np.abs(z + rot * p2 - params.l2))


def angle_difference(a, b) -> np.ndarray:
    """Wrapped difference a - b in (-pi, pi]."""
    return (np.asarray(a) - np.asarray(b) + np.pi) % (2.0 * np.pi) - np.pi


def group_velocity(traj: Trajectory) -> np.ndarray:
    """(N, 3) pose velocity by central differences."""
    return traj.velocities()[:, :G_DIM]
