"""Damped Newton iteration, nested iteration with refinement, work units."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .amr import flag_top_fraction
from .estimator import estimate
from .fem import FeSpace, build_constraints, transfer
from .mesh import refine
from .physics import DirectorState, assemble, deviation_report, energy

__all__ = [
    "SolverError",
    "LinearSolveError",
    "NonConvergenceError",
    "LevelRecord",
    "SolveStats",
    "linear_solve",
    "newton_solve",
    "initial_guess",
    "nested_iteration",
    "work_units",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for failures inside a solve; ``level`` is filled in by the driver."""

    level = None
    stats = None


class LinearSolveError(SolverError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message, last_residual):
        super().__init__(message)
        self.last_residual = last_residual


@dataclass
class LevelRecord:
    level: int
    n_cells: int
    n_dofs: int
    newton_iters: int = 0
    residuals: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    step_nnz: list = field(default_factory=list)
    matrix_nnz: int = 0
    energy: object = None
    deviation: object = None
    global_estimate: float = float("nan")
    max_estimate: float = float("nan")
    wall_time: float = 0.0
    residual_increases: int = 0

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else float("nan")


@dataclass
class SolveStats:
    levels: list = field(default_factory=list)
    refinement: str = "adaptive"
    wall_time: float = 0.0
    work_units: float = float("nan")

    @property
    def finest_nnz(self):
        return self.levels[-1].matrix_nnz if self.levels else None

    @property
    def fine_dof(self):
        return self.levels[-1].n_dofs if self.levels else 0


def work_units(stats, finest_nnz=None):
    """Sum of per-step Hessian nonzeros divided by the finest Hessian's nonzeros.

    ``finest_nnz`` overrides the divisor, e.g. with the finest adaptive
    count when a uniform run is compared against an adaptive one.
    """
    divisor = finest_nnz if finest_nnz is not None else stats.finest_nnz
    if not divisor:
        raise ValueError("finest nonzero count is missing")
    total = sum(n for rec in stats.levels for n in rec.step_nnz)
    return total / float(divisor)


def linear_solve(A, b, refine_steps=2):
    """Sparse LU solve with a couple of iterative-refinement sweeps.

    Raises
    ------
    LinearSolveError
        For an empty row or a singular factorization.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch {A.shape} vs {b.shape}")
    row_nnz = np.diff(sp.csr_matrix(A).indptr)
    empty = np.nonzero(row_nnz == 0)[0]
    if len(empty):
        raise LinearSolveError(f"structurally singular matrix: row {empty[0]} is empty")
    # Minimum degree on A + A^T is very effective for the penalty systems
    # but fills badly on saddle-point matrices with a zero diagonal block,
    # where column approximate minimum degree is far cheaper.
    if np.all(A.diagonal() != 0):
        kwargs = dict(permc_spec="MMD_AT_PLUS_A", options=dict(SymmetricMode=True))
    else:
        kwargs = dict(permc_spec="COLAMD")
    try:
        lu = spla.splu(A, **kwargs)
    except RuntimeError as exc:
        raise LinearSolveError(f"factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("factorization produced non-finite values (numerically singular)")
    bnorm = np.linalg.norm(b)
    for _ in range(refine_steps):
        r = b - A @ x
        if np.linalg.norm(r) <= 1e-13 * bnorm:
            break
        x = x + lu.solve(r)
    return x


def newton_solve(state, cfg, constraints, alpha=1.0, level=0):
    """Damped Newton iteration ``u <- u + alpha * du`` on the free dofs.

    Stops when the Euclidean norm of the condensed residual is at most
    ``cfg.newton_tol``.  Returns the new state and a :class:`LevelRecord`.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"damping must lie in (0, 1], got {alpha}")
    space = state.space
    rec = LevelRecord(level=level, n_cells=space.mesh.n_cells, n_dofs=space.n_dofs)
    u = constraints.apply(state.u)
    P = constraints.P
    previous = np.inf
    for k in range(cfg.max_newton + 1):
        R, _ = assemble(DirectorState(space, u), cfg, jacobian=False)
        r = P.T @ R
        norm = float(np.linalg.norm(r))
        rec.residuals.append(norm)
        if alpha == 1.0 and norm > previous:
            rec.residual_increases += 1
        previous = norm
        if norm <= cfg.newton_tol:
            break
        if k == cfg.max_newton:
            raise NonConvergenceError(
                f"Newton did not converge in {cfg.max_newton} iterations (residual {norm:.3e})", norm)
        _, J = assemble(DirectorState(space, u), cfg)
        Jc = constraints.condense_matrix(J)
        rec.step_nnz.append(int(Jc.nnz))
        rec.matrix_nnz = int(Jc.nnz)
        du = linear_solve(Jc, -r)
        u = u + alpha * (P @ du)
        rec.alphas.append(alpha)
    rec.newton_iters = len(rec.step_nnz)
    if rec.residual_increases:
        log.warning("level %d: %d undamped Newton steps increased the residual",
                    level, rec.residual_increases)
    if rec.matrix_nnz == 0:
        _, J = assemble(DirectorState(space, u), cfg)
        rec.matrix_nnz = int(constraints.condense_matrix(J).nnz)
    return DirectorState(space, u), rec


def _blend(points, descriptor, bc):
    """Boundary data carried into the interior.

    Rectangles use the transfinite bilinear (Coons) blend of the four sides;
    other domains use the value at the radial boundary projection.
    """
    if descriptor is not None and descriptor.kind == "polygon" and _is_rectangle(descriptor):
        (x0, y0), (x1, y1) = _rect_corners(descriptor)
        s = (points[:, 0] - x0) / (x1 - x0)
        t = (points[:, 1] - y0) / (y1 - y0)
        x, y = points[:, 0], points[:, 1]
        col = lambda a: np.column_stack(a)
        left, right = bc(col([np.full_like(y, x0), y])), bc(col([np.full_like(y, x1), y]))
        bottom, top = bc(col([x, np.full_like(x, y0)])), bc(col([x, np.full_like(x, y1)]))
        corners = bc(np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]]))
        s_, t_ = s[:, None], t[:, None]
        return ((1 - s_) * left + s_ * right + (1 - t_) * bottom + t_ * top
                - (1 - s_) * (1 - t_) * corners[0] - s_ * (1 - t_) * corners[1]
                - (1 - s_) * t_ * corners[2] - s_ * t_ * corners[3])
    if descriptor is None:
        return bc(points)
    pts = points.copy()
    tiny = np.linalg.norm(pts, axis=1) < 1e-12
    pts[tiny] = [1.0, 0.0]
    return bc(descriptor.project(pts))


def _is_rectangle(desc):
    pts = np.asarray(desc.params, dtype=float)
    if pts.shape != (4, 2):
        return False
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    # every corner of an axis-aligned box sits on a min/max in both coordinates
    return bool(np.all((np.isclose(pts, lo) | np.isclose(pts, hi)).all(axis=1)))


def _rect_corners(desc):
    pts = np.asarray(desc.params, dtype=float)
    return pts.min(axis=0), pts.max(axis=0)


def initial_guess(space, bc, constraints=None):
    """Normalised boundary blend for the director, zero multiplier."""
    vals = np.asarray(_blend(space.q2_points, space.mesh.descriptor, bc), dtype=float)
    norm = np.linalg.norm(vals, axis=1)
    small = norm < 1e-8
    vals[~small] /= norm[~small, None]
    vals[small] = [0.0, 0.0, 1.0]
    u = np.zeros(space.n_dofs)
    u[:space.n_director] = vals.T.ravel()
    if constraints is not None:
        u = constraints.apply(u)
    return DirectorState(space, u)


def nested_iteration(cfg, mesh, bc, levels=1, refinement="adaptive", on_level=None, initial=None):
    """Solve on a hierarchy of meshes, each level starting from the previous one.

    Parameters
    ----------
    cfg : ProblemConfig
    mesh : Mesh
        Coarsest mesh.
    bc : callable
        Dirichlet data ``(npts, 2) -> (npts, 3)``.
    levels : int
        Number of meshes solved on.
    refinement : {"adaptive", "uniform"}
    on_level : callable, optional
        Called as ``on_level(record, state, estimates, flags)`` after each
        level; ``flags`` marks the cells the next refinement starts from.

    Returns
    -------
    state : DirectorState
        Solution on the finest mesh.
    stats : SolveStats
    """
    if levels < 1:
        raise ValueError("need at least one level")
    if refinement not in ("adaptive", "uniform"):
        raise ValueError(f"unknown refinement mode {refinement!r}")
    stats = SolveStats(refinement=refinement)
    t_start = time.perf_counter()
    state = None
    for level in range(levels):
        t0 = time.perf_counter()
        space = FeSpace(mesh, multiplier=cfg.lagrangian)
        constraints = build_constraints(space, bc)
        if state is None:
            state = (initial or (lambda s, c: initial_guess(s, bc, c)))(space, constraints)
        else:
            state = transfer(state, space, constraints)
        alpha = min(cfg.alpha0 + level * cfg.dalpha, cfg.alpha_max)
        try:
            state, rec = newton_solve(state, cfg, constraints, alpha, level)
        except SolverError as exc:
            exc.level = level
            exc.stats = stats
            exc.args = (f"level {level}: {exc.args[0]}",)
            stats.wall_time = time.perf_counter() - t_start
            raise
        rec.energy = energy(state, cfg)
        rec.deviation = deviation_report(state)
        est = estimate(state, cfg)
        rec.global_estimate = est.global_estimate
        rec.max_estimate = float(est.theta.max())
        if refinement == "uniform":
            flags = np.ones(mesh.n_cells, dtype=bool)
        else:
            flags = flag_top_fraction(est, cfg.flag_fraction).flags
        rec.wall_time = time.perf_counter() - t0
        stats.levels.append(rec)
        if on_level is not None:
            on_level(rec, state, est, flags)
        if level < levels - 1:
            mesh = refine(mesh, flags)
    stats.wall_time = time.perf_counter() - t_start
    stats.work_units = work_units(stats)
    return state, stats
