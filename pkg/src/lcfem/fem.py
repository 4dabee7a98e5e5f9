"""Tensor-product Lagrange elements, quadrature, dof handling and transfer.

The reference cell is the unit square ``[0, 1]^2``.  Q2 nodes are numbered
lexicographically, ``node = 3 * j + i`` for the point ``(i / 2, j / 2)``;
Q1 nodes follow the counter-clockwise vertex order of the cell.

Global Q2 nodes are identified with mesh entities: every mesh vertex is a
node, the middle of an unsplit side is an edge node, and the middle of a
split side *is* the midpoint vertex.  That identification means only the
edge nodes on the fine side of a hanging edge need constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import CHILD_OFFSETS

__all__ = [
    "shape_eval",
    "shape_hessians",
    "quadrature",
    "line_quadrature",
    "FeSpace",
    "ConstraintSet",
    "Geometry",
    "build_constraints",
    "interpolate",
    "transfer",
    "transfer_values",
    "NonNestedMeshError",
    "h1_error",
]

Q2_REF = np.array([[i / 2, j / 2] for j in range(3) for i in range(3)])
Q1_REF = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
# (i, j) lattice position of the Q1 nodes
_Q1_IJ = [(0, 0), (1, 0), (1, 1), (0, 1)]
# lattice position of Q2 side midpoints, side s joins vertex s and s + 1
Q2_SIDE_NODE = [1, 5, 7, 3]
Q2_VERTEX_NODE = [0, 2, 8, 6]
Q2_CENTER_NODE = 4


class NonNestedMeshError(ValueError):
    pass


def _lagrange_1d(degree, t):
    t = np.asarray(t, dtype=float)
    if degree == 1:
        v = np.stack([1 - t, t])
        d = np.stack([-np.ones_like(t), np.ones_like(t)])
        dd = np.zeros((2,) + t.shape)
    else:
        v = np.stack([2 * t * t - 3 * t + 1, 4 * t - 4 * t * t, 2 * t * t - t])
        d = np.stack([4 * t - 3, 4 - 8 * t, 4 * t - 1])
        dd = np.stack([np.full_like(t, 4.0), np.full_like(t, -8.0), np.full_like(t, 4.0)])
    return v, d, dd


def _pairs(kind):
    if kind == "Q2":
        return [(i, j) for j in range(3) for i in range(3)], 2
    if kind == "Q1":
        return _Q1_IJ, 1
    raise ValueError(f"unknown element kind {kind!r}")


def shape_eval(kind, points):
    """Basis values and reference gradients at reference points.

    Returns ``values`` with shape ``(npts, nloc)`` and ``grads`` with shape
    ``(npts, nloc, 2)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(pts < -1e-12) or np.any(pts > 1 + 1e-12):
        raise ValueError("reference point outside [0, 1]^2")
    pairs, degree = _pairs(kind)
    vx, dx, _ = _lagrange_1d(degree, pts[:, 0])
    vy, dy, _ = _lagrange_1d(degree, pts[:, 1])
    values = np.stack([vx[i] * vy[j] for i, j in pairs], axis=1)
    grads = np.stack(
        [np.stack([dx[i] * vy[j], vx[i] * dy[j]], axis=-1) for i, j in pairs], axis=1
    )
    return values, grads


def shape_hessians(kind, points):
    """Reference second derivatives, shape ``(npts, nloc, 2, 2)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pairs, degree = _pairs(kind)
    vx, dx, ddx = _lagrange_1d(degree, pts[:, 0])
    vy, dy, ddy = _lagrange_1d(degree, pts[:, 1])
    out = np.empty((len(pts), len(pairs), 2, 2))
    for k, (i, j) in enumerate(pairs):
        out[:, k, 0, 0] = ddx[i] * vy[j]
        out[:, k, 1, 1] = vx[i] * ddy[j]
        out[:, k, 0, 1] = out[:, k, 1, 0] = dx[i] * dy[j]
    return out


def line_quadrature(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1), 0.5 * w


def quadrature(order):
    """Tensor Gauss rule with ``order`` points per direction on ``[0, 1]^2``."""
    if order not in range(1, 7):
        raise ValueError(f"unsupported quadrature order {order}")
    x, w = line_quadrature(order)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    return np.column_stack([X.ravel(), Y.ravel()]), W.ravel()


def map_points(corners, ref):
    """Bilinear map of reference points; ``corners`` is (nc, 4, 2)."""
    v, _ = shape_eval("Q1", ref)
    return np.einsum("qa,cad->cqd", v, corners)


def map_jacobian(corners, ref):
    """(nc, nq, 2, 2) Jacobian ``J[i, j] = dx_i / dxi_j``."""
    _, g = shape_eval("Q1", ref)
    return np.einsum("qaj,cai->cqij", g, corners)


class Geometry:
    """Per-cell quadrature data for a mesh: physical points, weights, basis derivatives."""

    def __init__(self, mesh, order=3):
        self.mesh = mesh
        self.order = order
        ref, w = quadrature(order)
        self.ref = ref
        corners = mesh.vertices[mesh.cells]
        self.points = map_points(corners, ref)
        J = map_jacobian(corners, ref)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        self.JxW = det * w
        self.inv = np.linalg.inv(J)  # dxi_j / dx_i  stored as inv[..., j, i]
        self.phi, g = shape_eval("Q2", ref)
        # physical gradient: dphi/dx_i = sum_j dphi/dxi_j * inv[j, i]
        self.dphi = np.einsum("qaj,cqji->cqai", g, self.inv)
        self.phi1, g1 = shape_eval("Q1", ref)
        self._corners = corners

    @cached_property
    def d2phi(self):
        """Physical Hessians of Q2 basis, including the bilinear-map correction."""
        h_ref = shape_hessians("Q2", self.ref)
        corners = self._corners
        # second derivative of the map: only the mixed term is non-zero
        x_mixed = corners[:, 0] - corners[:, 1] + corners[:, 2] - corners[:, 3]  # (nc, 2)
        corr = np.zeros((len(corners), 2, 2, 2))
        corr[:, :, 0, 1] = x_mixed
        corr[:, :, 1, 0] = x_mixed
        # H_xi - sum_k dphi/dx_k * d2x_k/dxi^2
        tmp = h_ref[None] - np.einsum("cqak,ckij->cqaij", self.dphi, corr)
        return np.einsum("cqamn,cqmi,cqnj->cqaij", tmp, self.inv, self.inv)


@dataclass(eq=False)
class FeSpace:
    """Q2 director space (three components) with an optional Q1 multiplier.

    Dofs are component-major: director component ``c`` at Q2 node ``i`` is
    ``c * n_q2 + i``; multiplier node ``j`` follows at ``3 * n_q2 + j``.
    """

    mesh: object
    multiplier: bool = False

    def __post_init__(self):
        mesh = self.mesh
        nv = mesh.n_vertices
        side_mid = mesh.side_mid
        edge_ids = {}
        q2 = np.empty((mesh.n_cells, 9), dtype=np.int64)
        cells = mesh.cells.tolist()
        sm = side_mid.tolist()
        # edge nodes first need a sorted enumeration
        keys = set()
        for e, cell in enumerate(cells):
            for s in range(4):
                if sm[e][s] < 0:
                    a, b = cell[s], cell[(s + 1) % 4]
                    keys.add((a, b) if a < b else (b, a))
        for k, key in enumerate(sorted(keys)):
            edge_ids[key] = nv + k
        ne = len(edge_ids)
        for e, cell in enumerate(cells):
            for s in range(4):
                q2[e, Q2_VERTEX_NODE[s]] = cell[s]
                if sm[e][s] >= 0:
                    q2[e, Q2_SIDE_NODE[s]] = sm[e][s]
                else:
                    a, b = cell[s], cell[(s + 1) % 4]
                    q2[e, Q2_SIDE_NODE[s]] = edge_ids[(a, b) if a < b else (b, a)]
            q2[e, Q2_CENTER_NODE] = nv + ne + e
        self.q2_cells = q2
        self.edge_nodes = edge_ids
        self.n_q2 = nv + ne + mesh.n_cells
        pts = np.empty((self.n_q2, 2))
        pts[:nv] = mesh.vertices
        if ne:
            pairs = np.array(sorted(edge_ids))
            pts[nv:nv + ne] = 0.5 * (mesh.vertices[pairs[:, 0]] + mesh.vertices[pairs[:, 1]])
        pts[nv + ne:] = mesh.vertices[mesh.cells].mean(axis=1)
        self.q2_points = pts
        self.q1_cells = mesh.cells.copy()
        self.n_q1 = nv
        self.q1_points = mesh.vertices

    @property
    def n_director(self):
        return 3 * self.n_q2

    @property
    def n_dofs(self):
        return self.n_director + (self.n_q1 if self.multiplier else 0)

    @cached_property
    def cell_dofs(self):
        """(nc, 27 [+4]) global dofs per cell, component-major local order."""
        parts = [self.q2_cells + c * self.n_q2 for c in range(3)]
        if self.multiplier:
            parts.append(self.q1_cells + self.n_director)
        return np.concatenate(parts, axis=1)

    def boundary_q2_nodes(self):
        mesh = self.mesh
        nodes = set()
        for e, s in zip(*np.nonzero(mesh.boundary)):
            for loc in (Q2_VERTEX_NODE[s], Q2_SIDE_NODE[s], Q2_VERTEX_NODE[(s + 1) % 4]):
                nodes.add(int(self.q2_cells[e, loc]))
        return np.array(sorted(nodes), dtype=np.int64)

    @cached_property
    def geometry(self):
        return Geometry(self.mesh)


class ConstraintSet:
    """Affine constraints ``u = P @ u_free + offset``.

    ``P`` has one column per free dof.  Dirichlet dofs contribute only to
    ``offset``; hanging dofs are weighted sums of (resolved) masters.
    """

    def __init__(self, n, dirichlet, hanging):
        self.n = n
        self.dirichlet = dict(dirichlet)
        self.hanging = dict(hanging)
        constrained = set(self.dirichlet) | set(self.hanging)
        self.free = np.array(sorted(set(range(n)) - constrained), dtype=np.int64)
        col = {int(d): k for k, d in enumerate(self.free)}
        resolved = {}

        def resolve(d):
            if d in resolved:
                return resolved[d]
            if d in col:
                out = ({col[d]: 1.0}, 0.0)
            elif d in self.dirichlet:
                out = ({}, self.dirichlet[d])
            else:
                terms, const = {}, 0.0
                for m, w in self.hanging[d]:
                    t, c = resolve(m)
                    const += w * c
                    for k, v in t.items():
                        terms[k] = terms.get(k, 0.0) + w * v
                out = (terms, const)
            resolved[d] = out
            return out

        rows, cols, vals = list(range(len(self.free))), [], []
        rows = [int(d) for d in self.free]
        cols = list(range(len(self.free)))
        vals = [1.0] * len(self.free)
        offset = np.zeros(n)
        for d in sorted(constrained):
            terms, const = resolve(d)
            offset[d] = const
            for k, v in terms.items():
                rows.append(d)
                cols.append(k)
                vals.append(v)
        self.P = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(self.free)))
        self.offset = offset

    @property
    def n_free(self):
        return len(self.free)

    def apply(self, u):
        """Overwrite constrained entries of ``u`` from its free entries."""
        return self.P @ np.asarray(u)[self.free] + self.offset

    def expand(self, u_free):
        return self.P @ u_free + self.offset

    def condense_vector(self, r):
        return self.P.T @ r

    def condense_matrix(self, A):
        return (self.P.T @ A @ self.P).tocsc()


def build_constraints(space, bc):
    """Dirichlet values from ``bc`` (callable ``(npts, 2) -> (npts, 3)``) plus hanging constraints.

    ``bc`` may be ``None`` to impose homogeneous conditions.
    """
    mesh = space.mesh
    nq2 = space.n_q2
    bnodes = space.boundary_q2_nodes()
    if bc is None:
        gvals = np.zeros((len(bnodes), 3))
    else:
        gvals = np.asarray(bc(space.q2_points[bnodes]), dtype=float).reshape(len(bnodes), 3)
    dirichlet = {}
    for c in range(3):
        for node, val in zip(bnodes.tolist(), gvals[:, c].tolist()):
            dirichlet[c * nq2 + node] = val
    hanging = {}
    for m, a, b in mesh.hanging.tolist():
        ka = space.edge_nodes[(a, m) if a < m else (m, a)]
        kb = space.edge_nodes[(m, b) if m < b else (b, m)]
        for c in range(3):
            off = c * nq2
            hanging[off + ka] = [(off + a, 0.375), (off + m, 0.75), (off + b, -0.125)]
            hanging[off + kb] = [(off + a, -0.125), (off + m, 0.75), (off + b, 0.375)]
        if space.multiplier:
            hanging[space.n_director + m] = [(space.n_director + a, 0.5), (space.n_director + b, 0.5)]
    return ConstraintSet(space.n_dofs, dirichlet, hanging)


def interpolate(space, func, lam=None):
    """Nodal interpolant of ``func`` (``(npts, 2) -> (npts, 3)``) into a coefficient vector."""
    u = np.zeros(space.n_dofs)
    vals = np.asarray(func(space.q2_points), dtype=float).reshape(space.n_q2, 3)
    u[:space.n_director] = vals.T.ravel()
    if space.multiplier and lam is not None:
        u[space.n_director:] = np.broadcast_to(lam(space.q1_points) if callable(lam) else lam, space.n_q1)
    return u


def transfer_values(coarse_space, u_coarse, fine_space):
    """Evaluate the coarse finite-element function at the fine nodes.

    Uses the reference-space parent/child relation, so it also works when
    boundary vertices of the fine mesh were snapped off the coarse domain.
    """
    cmesh, fmesh = coarse_space.mesh, fine_space.mesh
    if fmesh.parent_uid != cmesh.uid and fmesh.uid != cmesh.uid:
        raise NonNestedMeshError("fine mesh is not a refinement of the coarse mesh")
    same = fmesh.uid == cmesh.uid
    origin = np.arange(fmesh.n_cells) if same else fmesh.origin
    child = np.full(fmesh.n_cells, -1) if same else fmesh.child
    u_fine = np.zeros(fine_space.n_dofs)
    refined = child >= 0
    scale = np.where(refined, 0.5, 1.0)
    offs = np.where(refined[:, None], CHILD_OFFSETS[np.maximum(child, 0)] * 0.5, 0.0)

    def push(ref_nodes, kind, ccells, fcells, n_coarse_nodes, n_fine_nodes, comps, coff, foff):
        pts = ref_nodes[None] * scale[:, None, None] + offs[:, None, :]  # (nf, nloc, 2)
        vals, _ = shape_eval(kind, pts.reshape(-1, 2))
        vals = vals.reshape(len(fcells), ref_nodes.shape[0], -1)
        cc = ccells[origin]
        for c in range(comps):
            coef = u_coarse[coff + c * n_coarse_nodes + cc]  # (nf, nloc_coarse)
            fv = np.einsum("fpa,fa->fp", vals, coef)
            u_fine[foff + c * n_fine_nodes + fcells] = fv

    push(Q2_REF, "Q2", coarse_space.q2_cells, fine_space.q2_cells,
         coarse_space.n_q2, fine_space.n_q2, 3, 0, 0)
    if fine_space.multiplier and coarse_space.multiplier:
        push(Q1_REF, "Q1", coarse_space.q1_cells, fine_space.q1_cells,
             coarse_space.n_q1, fine_space.n_q1, 1, coarse_space.n_director, fine_space.n_director)
    return u_fine


def transfer(coarse_state, fine_space, constraints=None):
    """Transfer a :class:`~lcfem.physics.DirectorState` to a refined space."""
    from .physics import DirectorState

    u = transfer_values(coarse_state.space, coarse_state.u, fine_space)
    if constraints is not None:
        u = constraints.apply(u)
    return DirectorState(fine_space, u)


def h1_error(space, u, exact, order=5):
    """``H^1`` distance between the discrete director and an exact field.

    ``exact(points)`` returns ``(n, G)`` (extra outputs are ignored) with
    ``G[:, k, i] = d_i n_k``.  A fresh quadrature of ``order`` points per
    direction is used so the result does not share the assembly rule.
    """
    geo = Geometry(space.mesh, order)
    U = np.asarray(u)[:space.n_director].reshape(3, -1)[:, space.q2_cells]
    n = np.einsum("qa,kca->cqk", geo.phi, U)
    G = np.einsum("cqad,kca->cqkd", geo.dphi, U)
    out = exact(geo.points.reshape(-1, 2))
    n_ex = np.asarray(out[0]).reshape(n.shape)
    G_ex = np.asarray(out[1]).reshape(G.shape)
    err = np.sum((n - n_ex) ** 2, axis=-1) + np.sum((G - G_ex) ** 2, axis=(-1, -2))
    return float(np.sqrt(np.sum(err * geo.JxW)))
