"""Priority-ranked differential constraint stacks.

A behavior is specified as blocks of rows ``omega_i(x) . xdot = gamma_i(t, x)``
in three priority classes: Physical (the plant, including damage), Designed
(the behavior's defining relations), and Learned (rows fitted from an example
trajectory). Solving for a feasible velocity keeps the first ``n`` linearly
independent rows scanned in class order, so lower-priority rows can never
displace higher-priority ones.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_RANK_TOL = 1e-10


class Priority(enum.IntEnum):
    PHYSICAL = 0
    DESIGNED = 1
    LEARNED = 2

    @property
    def json_name(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class ConstraintRow:
    """One row: coefficients applied to a velocity must equal ``value``."""

    coefficients: np.ndarray
    value: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.ndim != 1 or not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be a finite 1-d vector")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class ConstraintBlock:
    """A priority class plus a function yielding its rows at (t, x).

    ``payload`` optionally carries a serializable description of the block
    (constant matrices, learned models) used by the stack JSON round-trip.
    """

    priority: Priority
    rows: Callable[[float, np.ndarray], list[ConstraintRow]]
    label: str = ""
    payload: object | None = None


def constant_block(priority: Priority, matrix, values=None,
                   label: str = "") -> ConstraintBlock:
    """Block whose rows do not depend on (t, x)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if values is None:
        values = np.zeros(matrix.shape[0])
    values = np.asarray(values, dtype=float)
    if values.shape != (matrix.shape[0],):
        raise ValueError("one value per row required")
    rows = [ConstraintRow(matrix[i], values[i]) for i in range(matrix.shape[0])]

    payload = _ConstantPayload(matrix=matrix, values=values)
    return ConstraintBlock(priority=priority, rows=lambda t, x: rows,
                           label=label, payload=payload)


@dataclass(frozen=True)
class _ConstantPayload:
    matrix: np.ndarray
    values: np.ndarray

    kind = "constant"

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "matrix": self.matrix.tolist(),
                "values": self.values.tolist()}


@dataclass(frozen=True)
class ConstraintStack:
    """Ordered constraint blocks over an ambient space of dimension n."""

    ambient_dim: int
    blocks: tuple[ConstraintBlock, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        order = [b.priority for b in self.blocks]
        if order != sorted(order):
            raise ValueError("blocks must be ordered Physical, Designed, Learned")


@dataclass(frozen=True)
class RankReport:
    rank_physical: int
    rank_designed: int
    rank_learned: int
    condition_number: float
    damage_condition_holds: bool


class RankDeficiencyError(RuntimeError):
    """A velocity solve failed; carries the rank analysis of the stack."""

    def __init__(self, message: str, report: RankReport):
        super().__init__(message)
        self.report = report


@dataclass
class SolveResult:
    """Velocity solve outcome with diagnostics.

    ``underdetermined`` is set when fewer than n independent rows were
    available and the returned velocity is the minimum-norm solution.
    """

    velocity: np.ndarray
    active_rows: list[int]
    condition_number: float
    underdetermined: bool = False
    warnings: list[str] = field(default_factory=list)


def evaluate(stack: ConstraintStack, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    """All rows concatenated in priority order: (omega m x n, gamma m)."""
    omega, gamma, _ = evaluate_with_classes(stack, t, x)
    return omega, gamma


def evaluate_with_classes(stack: ConstraintStack, t: float, x):
    """As evaluate(), plus the priority class of every row."""
    x = np.asarray(x, dtype=float)
    if x.shape != (stack.ambient_dim,):
        raise ValueError(
            f"state has shape {x.shape}, expected ({stack.ambient_dim},)")
    coeffs, values, classes = [], [], []
    for block in stack.blocks:
        for row in block.rows(t, x):
            if row.coefficients.shape != (stack.ambient_dim,):
                name = block.label or block.priority.name
                raise ValueError(
                    f"block {name!r} produced a row of length "
                    f"{row.coefficients.shape[0]}, expected {stack.ambient_dim}")
            coeffs.append(row.coefficients)
            values.append(row.value)
            classes.append(block.priority)
    if not coeffs:
        return (np.zeros((0, stack.ambient_dim)), np.zeros(0), [])
    return np.vstack(coeffs), np.asarray(values), classes


def residual(stack: ConstraintStack, t: float, x, v,
             classes: Sequence[Priority] = (Priority.DESIGNED, Priority.LEARNED),
             ) -> np.ndarray:
    """omega_sel . v - gamma_sel over the requested priority classes."""
    v = np.asarray(v, dtype=float)
    omega, gamma, row_classes = evaluate_with_classes(stack, t, x)
    keep = [i for i, c in enumerate(row_classes) if c in classes]
    if not keep:
        return np.zeros(0)
    return omega[keep] @ v - gamma[keep]


def _raises_rank(kept: list[np.ndarray], candidate: np.ndarray,
                 tol: float) -> bool:
    svals = np.linalg.svd(np.vstack(kept + [candidate]), compute_uv=False)
    return svals[-1] > tol * svals[0]


def select_active_rows(stack: ConstraintStack, t: float, x,
                       tol: float = DEFAULT_RANK_TOL) -> list[int]:
    """Greedy scan in priority order keeping rows that raise numerical rank.

    Stops once n rows are kept. May return fewer than n indices when the
    stack does not determine the velocity (under-determined; not an error).
    """
    omega, _, _ = evaluate_with_classes(stack, t, x)
    n = stack.ambient_dim
    kept_rows: list[np.ndarray] = []
    kept_idx: list[int] = []
    for i in range(omega.shape[0]):
        if len(kept_idx) == n:
            break
        if _raises_rank(kept_rows, omega[i], tol):
            kept_rows.append(omega[i])
            kept_idx.append(i)
    return kept_idx


def solve_velocity(stack: ConstraintStack, t: float, x,
                   tol: float = DEFAULT_RANK_TOL) -> SolveResult:
    """Velocity satisfying the first n independent rows of the stack.

    Fully determined stacks yield the unique solution of the active square
    system. With fewer than n active rows the minimum-norm solution is
    returned and flagged. If the solution leaves Physical rows outside the
    active set violated, the stack is over-constrained and a
    RankDeficiencyError carrying the RankReport is raised.
    """
    omega, gamma, classes = evaluate_with_classes(stack, t, x)
    n = stack.ambient_dim
    active = select_active_rows(stack, t, x, tol)
    if not active:
        return SolveResult(velocity=np.zeros(n), active_rows=[],
                           condition_number=0.0, underdetermined=True,
                           warnings=["no active rows"])
    sub = omega[active]
    rhs = gamma[active]
    svals = np.linalg.svd(sub, compute_uv=False)
    cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    v, *_ = np.linalg.lstsq(sub, rhs, rcond=tol)
    warnings = []
    if cond > 1.0 / tol:
        warnings.append(f"ill-conditioned active system: cond={cond:.3e}")

    # Physical rows must hold whether or not they made the active cut; a
    # violated inactive Physical row means the physics itself is inconsistent.
    phys = [i for i, c in enumerate(classes) if c == Priority.PHYSICAL]
    if phys:
        scale = max(1.0, float(np.abs(gamma[phys]).max()))
        err = np.abs(omega[phys] @ v - gamma[phys]).max()
        if err > 1e3 * tol * scale * max(1.0, cond):
            raise RankDeficiencyError(
                f"over-constrained Physical rows: residual {err:.3e}",
                rank_report(stack, t, x, tol))

    return SolveResult(velocity=v, active_rows=active, condition_number=cond,
                       underdetermined=len(active) < n, warnings=warnings)


def rank_report(stack: ConstraintStack, t: float, x,
                tol: float = DEFAULT_RANK_TOL) -> RankReport:
    """Per-class numerical ranks plus the damage-rank condition."""
    omega, _, classes = evaluate_with_classes(stack, t, x)
    ranks = {}
    for cls in Priority:
        rows = [i for i, c in enumerate(classes) if c == cls]
        ranks[cls] = (int(np.linalg.matrix_rank(omega[rows], tol * _scale(omega[rows])))
                      if rows else 0)
    active = select_active_rows(stack, t, x, tol)
    if active:
        svals = np.linalg.svd(omega[active], compute_uv=False)
        cond = float(svals[0] / svals[-1]) if svals[-1] > 0 else np.inf
    else:
        cond = 0.0
    return RankReport(
        rank_physical=ranks[Priority.PHYSICAL],
        rank_designed=ranks[Priority.DESIGNED],
        rank_learned=ranks[Priority.LEARNED],
        condition_number=cond,
        damage_condition_holds=completion_check(
            stack.ambient_dim, ranks[Priority.PHYSICAL],
            ranks[Priority.DESIGNED], ranks[Priority.LEARNED]))


def _scale(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 1.0
    top = float(np.linalg.norm(matrix, 2))
    return top if top > 0 else 1.0


def completion_check(n: int, rank_physical_damaged: int, rank_designed: int,
                     rank_learned: int) -> bool:
    """n - r_L <= r_P + r_D <= n: learned rows can absorb the damage."""
    args = (n, rank_physical_damaged, rank_designed, rank_learned)
    if any((not isinstance(a, (int, np.integer))) or a < 0 for a in args):
        raise ValueError(f"arguments must be non-negative integers, got {args}")
    return n - rank_learned <= rank_physical_damaged + rank_designed <= n


def control_affine_to_spec(f, G, tol: float = DEFAULT_RANK_TOL,
                           ) -> tuple[np.ndarray, np.ndarray]:
    """Constraint rows equivalent to xdot = f + G u for unconstrained u.

    Directions outside the input column space cannot be commanded, so they
    must agree with the drift: Omega = I - G G+, gamma = Omega f.
    """
    f = np.asarray(f, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n = G.shape[0]
    if f.shape != (n,):
        raise ValueError("drift length must match rows of G")
    omega = np.eye(n) - G @ np.linalg.pinv(G, rcond=tol)
    return omega, omega @ f


def _fourier_feature_rows(rng: np.random.Generator, sample: np.ndarray,
                          n: int, count: int, n_features: int = 16) -> np.ndarray:
    """Gradients of ``count`` random smooth functions R^n -> R at ``sample``.

    Each function is a finite random Fourier feature sum
    f(s) = sum_m c_m sin(w_m . s + b_m) with standard-normal weights, so its
    gradient rows are sum_m c_m cos(w_m . s + b_m) w_m.
    """
    w = rng.standard_normal((n_features, n))
    bias = rng.uniform(0.0, 2.0 * np.pi, n_features)
    c = rng.standard_normal((count, n_features)) / np.sqrt(n_features)
    return (c * np.cos(w @ sample + bias)) @ w


def augment_random_rank(A: Callable[[np.ndarray], np.ndarray], samples,
                        N: int, seed: int, trials: int = 1,
                        row_sampler=None,
                        tol: float = DEFAULT_RANK_TOL) -> float:
    """Empirical rate at which N random rows raise the rank of A past k.

    For each trial a fresh bundle of N random smooth functions is drawn; at
    every sample the gradients are appended to A(sample) and success is
    recorded when the stacked matrix reaches rank >= k+1. Returns the success
    fraction over trials x samples. ``row_sampler(rng, sample, n, N)``
    overrides the row draw (used to exercise adversarial cases).
    """
    samples = [np.atleast_1d(np.asarray(s, dtype=float)) for s in samples]
    if not samples:
        raise ValueError("need at least one sample")
    if N < 1:
        raise ValueError("N must be >= 1")
    draw = row_sampler if row_sampler is not None else _fourier_feature_rows
    rng = np.random.default_rng(seed)
    hits = 0
    total = 0
    for _ in range(trials):
        for s in samples:
            base = np.atleast_2d(np.asarray(A(s), dtype=float))
            if base.size == 0:
                base = base.reshape(0, len(s))
            k, n = base.shape
            if k >= n:
                raise ValueError(f"no room to augment: k={k} >= n={n}")
            extra = draw(rng, s, n, N)
            stacked = np.vstack([base, extra]) if k else extra
            rank = np.linalg.matrix_rank(stacked, tol * _scale(stacked))
            hits += int(rank >= k + 1)
            total += 1
    return hits / total


def stack_to_json(stack: ConstraintStack) -> str:
    """Serialize a stack whose blocks all carry JSON payloads."""
    blocks = []
    for block in stack.blocks:
        if block.payload is None or not hasattr(block.payload, "to_json_dict"):
            raise ValueError(
                f"block {block.label or block.priority.name!r} is not serializable")
        entry = {"class": block.priority.json_name, "label": block.label}
        entry.update(block.payload.to_json_dict())
        blocks.append(entry)
    return json.dumps({"ambient_dim": stack.ambient_dim, "blocks": blocks},
                      indent=2)


def stack_from_json(text: str) -> ConstraintStack:
    data = json.loads(text)
    blocks = []
    for entry in data["blocks"]:
        priority = Priority[entry["class"].upper()]
        kind = entry.get("kind", "constant")
        if kind == "constant":
            blocks.append(constant_block(priority, np.asarray(entry["matrix"]),
                                         np.asarray(entry["values"]),
                                         label=entry.get("label", "")))
        elif kind == "learned":
            from . import encoding
            blocks.append(encoding.learned_block_from_json_dict(entry))
        else:
            raise ValueError(f"unknown block kind {kind!r}")
    return ConstraintStack(ambient_dim=int(data["ambient_dim"]),
                           blocks=tuple(blocks))
