"""Element-wise residual error estimators.

For every cell ``T``

    Theta_T^2 = h_T^2 ||r||_T^2 + sum_E h_E ||[flux]_E||_E^2  (+ ||n.n - 1||_T^2)

where ``r`` is the strong (cell-wise integrated by parts) residual of the
optimality system and ``flux = K1 div(n) eta + K3 (Z(n) curl n) x eta``.
The sum runs over the interior edges of ``T``; an interior edge
contributes to both of its cells.  The last term is only present for the
multiplier formulation.

Hanging edges are split into the two fine sub-edges; the coarse cell is
evaluated through its own mapping on each half and every sub-edge uses its
own length as ``h_E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import line_quadrature, shape_eval, map_jacobian
from .physics import curl, divergence

__all__ = [
    "ElementEstimates",
    "strong_residual_values",
    "strong_residual",
    "flux_values",
    "edge_jump",
    "estimate",
    "estimate_analytic",
]

EDGE_POINTS = 4


@dataclass
class ElementEstimates:
    theta: np.ndarray
    interior: np.ndarray
    jump: np.ndarray
    constraint: np.ndarray

    @property
    def global_estimate(self):
        return float(np.sqrt(np.sum(self.theta ** 2)))

    def __len__(self):
        return len(self.theta)


def strong_residual_values(n, G, Hs, cfg, lam=None):
    """Strong residual from pointwise values.

    ``n`` (..., 3), ``G[..., k, i] = d_i n_k``, ``Hs[..., k, i, j] = d_i d_j n_k``.
    ``lam`` selects the multiplier term, otherwise the penalty term is used.
    """
    kappa = cfg.kappa
    c = curl(G)
    nc = np.sum(n * c, axis=-1)
    grad_div = np.zeros_like(n)
    grad_div[..., 0] = Hs[..., 0, 0, 0] + Hs[..., 1, 1, 0]
    grad_div[..., 1] = Hs[..., 0, 0, 1] + Hs[..., 1, 1, 1]
    dA = []
    for j in range(2):
        dc = np.stack([Hs[..., 2, 1, j], -Hs[..., 2, 0, j], Hs[..., 1, 0, j] - Hs[..., 0, 1, j]], axis=-1)
        dn = G[..., :, j]
        dnc = np.sum(dn * c, axis=-1) + np.sum(n * dc, axis=-1)
        dA.append(cfg.K3 * (dc - (1 - kappa) * (dnc[..., None] * n + nc[..., None] * dn)))
    Ax, Ay = dA
    curl_A = np.stack([Ay[..., 2], -Ax[..., 2], Ax[..., 1] - Ay[..., 0]], axis=-1)
    r = -cfg.K1 * grad_div + curl_A + (cfg.K2 - cfg.K3) * nc[..., None] * c + 2 * cfg.K2 * cfg.t0 * c
    if lam is None:
        r = r + 2 * cfg.zeta * (np.sum(n * n, axis=-1) - 1)[..., None] * n
    else:
        r = r + np.asarray(lam)[..., None] * n
    return r


def flux_values(n, G, eta, cfg):
    """``K1 div(n) eta + K3 (Z(n) curl n) x eta`` with a planar normal ``eta`` (..., 2)."""
    d = divergence(G)
    c = curl(G)
    zc = c - (1 - cfg.kappa) * np.sum(n * c, axis=-1, keepdims=True) * n
    eta3 = np.concatenate([eta, np.zeros(eta.shape[:-1] + (1,))], axis=-1)
    return cfg.K1 * d[..., None] * eta3 + cfg.K3 * np.cross(zc, eta3)


def _side_ref(side, tau):
    tau = np.asarray(tau, dtype=float)
    zero, one = np.zeros_like(tau), np.ones_like(tau)
    table = {
        0: (tau, zero),
        1: (one, tau),
        2: (1 - tau, one),
        3: (zero, 1 - tau),
    }
    x, y = table[int(side)]
    return np.stack([x, y], axis=-1)


def _segment_ref_points(edges, i, slot, t):
    side, half = edges["side"][i, slot], edges["half"][i, slot]
    tx = t if slot == 0 else 1.0 - t
    tau = tx if half < 0 else 0.5 * (half + tx)
    return _side_ref(side, tau)


class _FeField:
    """Evaluates a discrete state (and its derivatives) for the estimator."""

    def __init__(self, state):
        self.state = state
        self.space = state.space
        self.U = state.u[:self.space.n_director].reshape(3, -1)

    def volume(self, cfg):
        geo = self.space.geometry
        U = self.U[:, self.space.q2_cells]  # (3, nc, 9)
        n = np.einsum("qa,kca->cqk", geo.phi, U)
        G = np.einsum("cqad,kca->cqkd", geo.dphi, U)
        Hs = np.einsum("cqaij,kca->cqkij", geo.d2phi, U)
        lam = None
        if cfg.lagrangian:
            lam = np.einsum("qa,ca->cq", geo.phi1, self.state.multiplier[self.space.q1_cells])
        return n, G, lam, Hs

    def at(self, cells, ref):
        """Values and gradients at per-cell reference points ``ref`` (ncell, npts, 2)."""
        mesh = self.space.mesh
        corners = mesh.vertices[mesh.cells[cells]]
        npts = ref.shape[1]
        vals, grads = shape_eval("Q2", ref.reshape(-1, 2))
        vals = vals.reshape(len(cells), npts, 9)
        grads = grads.reshape(len(cells), npts, 9, 2)
        _, g1 = shape_eval("Q1", ref.reshape(-1, 2))
        g1 = g1.reshape(len(cells), npts, 4, 2)
        J = np.einsum("cpaj,cai->cpij", g1, corners)
        inv = np.linalg.inv(J)
        dphi = np.einsum("cpaj,cpji->cpai", grads, inv)
        U = self.U[:, self.space.q2_cells[cells]]
        n = np.einsum("cpa,kca->cpk", vals, U)
        G = np.einsum("cpad,kca->cpkd", dphi, U)
        return n, G


class _AnalyticField:
    """Exact field ``func(points) -> (n, G, Hs[, lam])`` evaluated through the cell maps."""

    def __init__(self, mesh, func, order=3):
        from .fem import Geometry

        self.mesh = mesh
        self.func = func
        self.geo = Geometry(mesh, order)

    def volume(self, cfg):
        pts = self.geo.points
        out = self.func(pts.reshape(-1, 2))
        n, G, Hs = (np.asarray(a).reshape(pts.shape[:2] + np.shape(a)[1:]) for a in out[:3])
        lam = None
        if cfg.lagrangian:
            lam = np.asarray(out[3]).reshape(pts.shape[:2])
        return n, G, lam, Hs

    def at(self, cells, ref):
        corners = self.mesh.vertices[self.mesh.cells[cells]]
        v, _ = shape_eval("Q1", ref.reshape(-1, 2))
        v = v.reshape(len(cells), ref.shape[1], 4)
        pts = np.einsum("cpa,cad->cpd", v, corners)
        out = self.func(pts.reshape(-1, 2))
        n = np.asarray(out[0]).reshape(pts.shape[:2] + (3,))
        G = np.asarray(out[1]).reshape(pts.shape[:2] + (3, 2))
        return n, G


def _segment_geometry(mesh, idx):
    verts = mesh.edges["vertices"][idx]
    p = mesh.vertices[verts[:, 0]]
    q = mesh.vertices[verts[:, 1]]
    tvec = q - p
    length = np.linalg.norm(tvec, axis=1)
    eta = np.column_stack([tvec[:, 1], -tvec[:, 0]]) / length[:, None]
    return p, q, length, eta


def _jumps(field, mesh, cfg, idx):
    """Jump values (nseg, npts, 3) on interior segments ``idx``; also lengths and weights."""
    edges = mesh.edges
    t, w = line_quadrature(EDGE_POINTS)
    _, _, length, eta = _segment_geometry(mesh, idx)
    fluxes = []
    for slot in (0, 1):
        cells = edges["cells"][idx, slot]
        ref = np.stack([_segment_ref_points(edges, i, slot, t) for i in idx]) if len(idx) else np.zeros((0, len(t), 2))
        n, G = field.at(cells, ref)
        fluxes.append(flux_values(n, G, np.broadcast_to(eta[:, None, :], n.shape[:-1] + (2,)), cfg))
    return fluxes[1] - fluxes[0], length, w


def _estimate(field, mesh, cfg, volume_geo):
    n, G, lam, Hs = field.volume(cfg)
    r = strong_residual_values(n, G, Hs, cfg, lam)
    JxW = volume_geo.JxW
    res2 = np.sum(np.sum(r * r, axis=-1) * JxW, axis=1)
    interior = mesh.h_cell ** 2 * res2
    if cfg.lagrangian:
        constraint = np.sum((np.sum(n * n, axis=-1) - 1) ** 2 * JxW, axis=1)
    else:
        constraint = np.zeros(mesh.n_cells)
    jump = np.zeros(mesh.n_cells)
    edges = mesh.edges
    idx = np.nonzero(edges["cells"][:, 1] >= 0)[0]
    if len(idx):
        jv, length, w = _jumps(field, mesh, cfg, idx)
        contrib = length * (length * np.sum(np.sum(jv * jv, axis=-1) * w, axis=1))
        np.add.at(jump, edges["cells"][idx, 0], contrib)
        np.add.at(jump, edges["cells"][idx, 1], contrib)
    theta = np.sqrt(interior + jump + constraint)
    return ElementEstimates(theta=theta, interior=interior, jump=jump, constraint=constraint)


def estimate(state, cfg):
    """Per-cell estimator for a discrete state."""
    if cfg.lagrangian and not state.space.multiplier:
        raise ValueError("multiplier formulation needs a multiplier field")
    return _estimate(_FeField(state), state.space.mesh, cfg, state.space.geometry)


def estimate_analytic(mesh, cfg, func, order=3):
    """Estimator evaluated on an exact field.

    ``func(points)`` returns ``(n, G, Hs)`` (plus ``lam`` for the multiplier
    formulation) at an ``(npts, 2)`` array of physical points.
    """
    field = _AnalyticField(mesh, func, order)
    return _estimate(field, mesh, cfg, field.geo)


def strong_residual(state, cfg, cell, ref_point):
    """Strong residual of a discrete state at one reference point of one cell."""
    from .fem import shape_hessians

    space = state.space
    mesh = space.mesh
    ref = np.atleast_2d(np.asarray(ref_point, dtype=float))
    corners = mesh.vertices[mesh.cells[cell]][None]
    vals, grads = shape_eval("Q2", ref)
    J = map_jacobian(corners, ref)[0]  # (1, 2, 2)
    inv = np.linalg.inv(J)
    dphi = np.einsum("qaj,qji->qai", grads, inv)
    h_ref = shape_hessians("Q2", ref)
    x_mixed = corners[0, 0] - corners[0, 1] + corners[0, 2] - corners[0, 3]
    corr = np.zeros((2, 2, 2))
    corr[:, 0, 1] = corr[:, 1, 0] = x_mixed
    tmp = h_ref - np.einsum("qak,kij->qaij", dphi, corr)
    d2 = np.einsum("qamn,qmi,qnj->qaij", tmp, inv, inv)
    U = state.u[:space.n_director].reshape(3, -1)[:, space.q2_cells[cell]]
    n = vals @ U.T
    G = np.einsum("qad,ka->qkd", dphi, U)
    Hs = np.einsum("qaij,ka->qkij", d2, U)
    lam = None
    if cfg.lagrangian:
        v1, _ = shape_eval("Q1", ref)
        lam = v1 @ state.multiplier[space.q1_cells[cell]]
    return strong_residual_values(n, G, Hs, cfg, lam)[0]


def edge_jump(state, cfg, edge):
    """Flux jump at the quadrature points of interior edge segment ``edge`` (npts, 3)."""
    mesh = state.space.mesh
    if mesh.edges["cells"][edge, 1] < 0:
        raise ValueError(f"edge {edge} lies on the boundary")
    jv, _, _ = _jumps(_FeField(state), mesh, cfg, np.array([edge]))
    return jv[0]
