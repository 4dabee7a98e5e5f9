"""Frank-Oseen energy, first-order optimality residuals and their Jacobians.

Fields have three components and depend on ``(x, y)`` only, so every
derivative in ``z`` vanishes.  With ``d = div n`` and ``c = curl n`` the
(halved) integrand of the penalty functional is

    psi = K1/2 d^2 + K3/2 |c|^2 - beta/2 (n.c)^2 + tau n.c + zeta/2 (n.n - 1)^2

where ``beta = K3 - K2`` and ``tau = K2 t0``.  Residuals are the gradient of
``integral(psi)``; Jacobians are its Hessian.  For the multiplier
formulation the penalty term is replaced by ``lambda/2 (n.n - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ProblemConfig",
    "DirectorState",
    "EnergyRecord",
    "DeviationReport",
    "z_apply",
    "energy",
    "energy_density_field",
    "assemble",
    "residual_penalty",
    "jacobian_penalty",
    "residual_lagrangian",
    "jacobian_lagrangian",
    "deviation_report",
    "field_at_quadrature",
    "divergence",
    "curl",
]

_CHUNK = 1024

# d = sum_kd D[k, d] G[k, d]
_D = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
# c_j = sum_kd C[j, k, d] G[k, d]
_C = np.zeros((3, 3, 2))
_C[0, 2, 1] = 1.0
_C[1, 2, 0] = -1.0
_C[2, 1, 0] = 1.0
_C[2, 0, 1] = -1.0


@dataclass
class ProblemConfig:
    """Dimensionless model parameters and solver schedule."""

    K1: float = 1.0
    K2: float = 1.0
    K3: float = 1.0
    t0: float = 0.0
    zeta: float = 1e5
    formulation: str = "penalty"
    mu: float = 1e-6
    K_char: float = 6.2e-12
    bc_id: str = ""
    alpha0: float = 1.0
    dalpha: float = 0.0
    alpha_max: float = 1.0
    newton_tol: float = 1e-4
    max_newton: int = 100
    flag_fraction: float = 0.4
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if min(self.K1, self.K2, self.K3) <= 0:
            raise ValueError("Frank constants must be positive")
        if self.formulation not in ("penalty", "lagrangian"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.formulation == "penalty" and self.zeta <= 0:
            raise ValueError("penalty weight must be positive")
        if not 0 < self.alpha0 <= self.alpha_max <= 1:
            raise ValueError("need 0 < alpha0 <= alpha_max <= 1")

    @property
    def kappa(self):
        return self.K2 / self.K3

    @property
    def lagrangian(self):
        return self.formulation == "lagrangian"

    def as_dict(self):
        return asdict(self)


@dataclass
class DirectorState:
    """Coefficient vector on a :class:`~lcfem.fem.FeSpace`."""

    space: object
    u: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != (self.space.n_dofs,):
            raise ValueError(f"expected {self.space.n_dofs} coefficients, got {self.u.shape}")

    @property
    def director(self):
        """(n_q2, 3) nodal director values."""
        return self.u[:self.space.n_director].reshape(3, -1).T

    @property
    def multiplier(self):
        return self.u[self.space.n_director:] if self.space.multiplier else None

    def copy(self):
        return DirectorState(self.space, self.u.copy())


@dataclass
class EnergyRecord:
    G: float
    G_half: float
    constant_term: float
    penalty_term: float = 0.0

    @property
    def wF(self):
        """Integral of the Frank-Oseen density including the chiral constant."""
        return self.G_half + self.constant_term


@dataclass
class DeviationReport:
    max_dev: float
    min_dev: float


def z_apply(n, kappa, w):
    """``Z(n) w = w - (1 - kappa) (n.w) n``."""
    n = np.asarray(n, dtype=float)
    w = np.asarray(w, dtype=float)
    return w - (1 - kappa) * np.sum(n * w, axis=-1, keepdims=True) * n


def divergence(G):
    return G[..., 0, 0] + G[..., 1, 1]


def curl(G):
    return np.stack([G[..., 2, 1], -G[..., 2, 0], G[..., 1, 0] - G[..., 0, 1]], axis=-1)


def field_at_quadrature(state, cells=slice(None), geometry=None):
    """Director values ``(nc, nq, 3)`` and gradients ``(nc, nq, 3, 2)`` at quadrature points."""
    space = state.space
    geo = geometry or space.geometry
    U = state.u[:space.n_director].reshape(3, -1)[:, space.q2_cells[cells]]  # (3, nc, 9)
    n = np.einsum("qa,kca->cqk", geo.phi, U)
    G = np.einsum("cqad,kca->cqkd", geo.dphi[cells], U)
    return n, G


def _multiplier_at_quadrature(state, cells=slice(None)):
    space = state.space
    L = state.multiplier[space.q1_cells[cells]]
    return np.einsum("qa,ca->cq", space.geometry.phi1, L)


def _energy_integrand(n, G, cfg):
    d = divergence(G)
    c = curl(G)
    nc = np.sum(n * c, axis=-1)
    beta = cfg.K3 - cfg.K2
    return cfg.K1 * d * d + cfg.K3 * np.sum(c * c, axis=-1) - beta * nc * nc + 2 * cfg.K2 * cfg.t0 * nc


def energy(state, cfg):
    """Discrete values of the rescaled functional ``G`` and related terms."""
    geo = state.space.geometry
    n, G = field_at_quadrature(state)
    dens = _energy_integrand(n, G, cfg)
    Gval = float(np.sum(dens * geo.JxW))
    area = float(np.sum(geo.JxW))
    pen = float(np.sum((np.sum(n * n, axis=-1) - 1) ** 2 * geo.JxW))
    return EnergyRecord(
        G=Gval,
        G_half=0.5 * Gval,
        constant_term=0.5 * cfg.K2 * cfg.t0 ** 2 * area,
        penalty_term=cfg.zeta * pen if not cfg.lagrangian else 0.0,
    )


def energy_density_field(state, cfg):
    """Cell means of the Frank-Oseen energy density ``w_F``."""
    geo = state.space.geometry
    n, G = field_at_quadrature(state)
    w = 0.5 * _energy_integrand(n, G, cfg) + 0.5 * cfg.K2 * cfg.t0 ** 2
    return np.sum(w * geo.JxW, axis=1) / np.sum(geo.JxW, axis=1)


def deviation_report(state):
    n, _ = field_at_quadrature(state)
    dev = np.linalg.norm(n, axis=-1) - 1.0
    return DeviationReport(float(dev.max()), float(dev.min()))


def _pointwise(n, G, lam, cfg, hessian):
    """Gradient ``g[..., k, s]`` and Hessian ``H[..., k, s, l, t]`` of psi in the extended basis.

    Slot ``s = 0`` is the value, ``s = 1, 2`` the x and y derivatives.
    """
    d = divergence(G)
    c = curl(G)
    nc = np.sum(n * c, axis=-1)[..., None]
    beta = cfg.K3 - cfg.K2
    tau = cfg.K2 * cfg.t0
    psi_n = -beta * nc * c + tau * c
    if lam is None:
        nn1 = (np.sum(n * n, axis=-1) - 1.0)[..., None]
        psi_n = psi_n + 2 * cfg.zeta * nn1 * n
    else:
        psi_n = psi_n + lam[..., None] * n
    psi_c = cfg.K3 * c - beta * nc * n + tau * n
    g = np.empty(n.shape[:-1] + (3, 3))
    g[..., 0] = psi_n
    g[..., 1:] = cfg.K1 * d[..., None, None] * _D + np.einsum("...j,jkd->...kd", psi_c, _C)
    if not hessian:
        return g, None
    eye = np.eye(3)
    psi_nn = -beta * c[..., :, None] * c[..., None, :]
    if lam is None:
        psi_nn = psi_nn + 2 * cfg.zeta * (nn1[..., None] * eye + 2 * n[..., :, None] * n[..., None, :])
    else:
        psi_nn = psi_nn + lam[..., None, None] * eye
    psi_nc = (tau - beta * nc)[..., None] * eye - beta * c[..., :, None] * n[..., None, :]
    psi_cc = cfg.K3 * eye - beta * n[..., :, None] * n[..., None, :]
    H = np.empty(n.shape[:-1] + (3, 3, 3, 3))
    H[..., :, 0, :, 0] = psi_nn
    nG = np.einsum("...kj,jle->...kle", psi_nc, _C)
    H[..., :, 0, :, 1:] = nG
    H[..., :, 1:, :, 0] = np.einsum("...lkd->...kdl", nG)
    H[..., :, 1:, :, 1:] = (
        cfg.K1 * np.einsum("kd,le->kdle", _D, _D)
        + np.einsum("ikd,...ij,jle->...kdle", _C, psi_cc, _C)
    )
    return g, H


def assemble(state, cfg, jacobian=True):
    """Assemble the full residual vector and (optionally) the sparse Jacobian.

    No constraints are applied; see :class:`~lcfem.fem.ConstraintSet` for condensation.
    """
    space = state.space
    geo = space.geometry
    lagr = cfg.lagrangian
    if lagr and not space.multiplier:
        raise ValueError("multiplier formulation needs a space with a multiplier field")
    nc = space.mesh.n_cells
    ndof_loc = 27 + (4 if lagr else 0)
    R = np.zeros(space.n_dofs)
    dofs = space.cell_dofs[:, :ndof_loc]
    Jdata = np.empty((nc, ndof_loc, ndof_loc)) if jacobian else None
    for start in range(0, nc, _CHUNK):
        cells = slice(start, min(start + _CHUNK, nc))
        n, G = field_at_quadrature(state, cells)
        lam = _multiplier_at_quadrature(state, cells) if lagr else None
        g, H = _pointwise(n, G, lam, cfg, jacobian)
        E = np.concatenate([np.broadcast_to(geo.phi[None, :, :, None], geo.dphi[cells].shape[:3] + (1,)),
                            geo.dphi[cells]], axis=-1)  # (c, q, 9, 3)
        w = geo.JxW[cells]
        EW = E * w[..., None, None]
        r = np.einsum("cqas,cqks->cka", EW, g).reshape(-1, 27)
        if lagr:
            rq = 0.5 * np.einsum("cq,qa->ca", (np.sum(n * n, axis=-1) - 1.0) * w, geo.phi1)
            r = np.concatenate([r, rq], axis=1)
        np.add.at(R, dofs[cells], r)
        if jacobian:
            T = np.einsum("cqas,cqkslt->cqkalt", EW, H)
            Jl = np.einsum("cqkalt,cqbt->ckalb", T, E).reshape(-1, 27, 27)
            if lagr:
                blk = np.zeros((Jl.shape[0], ndof_loc, ndof_loc))
                blk[:, :27, :27] = Jl
                # d(lambda n.v)/d(lambda) = n.v * psi ; symmetric counterpart
                coup = np.einsum("cqk,cqa,qb->ckab", n, EW[..., 0], geo.phi1).reshape(-1, 27, 4)
                blk[:, :27, 27:] = coup
                blk[:, 27:, :27] = coup.transpose(0, 2, 1)
                Jl = blk
            Jdata[cells] = Jl
    if not jacobian:
        return R, None
    rows = np.repeat(dofs, ndof_loc, axis=1).ravel()
    cols = np.tile(dofs, (1, ndof_loc)).ravel()
    J = sp.csr_matrix((Jdata.ravel(), (rows, cols)), shape=(space.n_dofs, space.n_dofs))
    J.sum_duplicates()
    return R, J


def _check(cfg, formulation):
    if cfg.formulation != formulation:
        raise ValueError(f"configuration uses the {cfg.formulation} formulation")


def residual_penalty(state, cfg, constraints=None):
    """Penalty optimality residual; condensed onto free dofs when ``constraints`` is given."""
    _check(cfg, "penalty")
    R, _ = assemble(state, cfg, jacobian=False)
    return constraints.condense_vector(R) if constraints is not None else R


def jacobian_penalty(state, cfg, constraints=None):
    _check(cfg, "penalty")
    _, J = assemble(state, cfg)
    return constraints.condense_matrix(J) if constraints is not None else J


def residual_lagrangian(state, cfg, constraints=None):
    """Multiplier optimality residual.

    Director rows follow the usual weak form including ``(lambda n, v)``;
    multiplier rows are ``1/2 (q, n.n - 1)`` so that the whole vector is
    half the gradient of the Lagrangian and the Jacobian is symmetric.
    """
    _check(cfg, "lagrangian")
    R, _ = assemble(state, cfg, jacobian=False)
    return constraints.condense_vector(R) if constraints is not None else R


def jacobian_lagrangian(state, cfg, constraints=None):
    _check(cfg, "lagrangian")
    _, J = assemble(state, cfg)
    return constraints.condense_matrix(J) if constraints is not None else J
