"""Experiment presets: boundary data, constants, schedules and coarse meshes."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .mesh import BoundaryDescriptor, build_ellipse_mesh, build_uniform_grid
from .physics import ProblemConfig

__all__ = [
    "BoundaryCondition",
    "PRESETS",
    "preset",
    "twist_director",
    "patterned_director",
    "helix_field",
    "load_boundary_table",
]

PRESETS = ("twist", "patterned", "ellipse_t6", "ellipse_t8", "constant_ellipse", "helix_manufactured")

TWIST_NOTE = (
    "twist side walls: xz-angle theta(y) = -pi/8 + (pi/4) y, tilt toward +y "
    "phi(y) = (pi/4) sin(pi y), g = (cos phi cos theta, sin phi, cos phi sin theta); "
    "one reading of the textual description, not a published formula"
)
PATTERN_NOTE = (
    "patterned default: xz-plane angle square wave +-pi/4 with two transitions per side "
    "(at 1/3 and 2/3 of each side), tanh-smoothed over arc length 0.05; qualitative only"
)


@dataclass
class BoundaryCondition:
    """Director-valued Dirichlet data ``g``."""

    id: str
    func: object
    description: str = ""

    def __call__(self, points):
        return np.asarray(self.func(np.atleast_2d(np.asarray(points, dtype=float))), dtype=float)


def twist_director(points):
    y = points[:, 1]
    theta = -np.pi / 8 + np.pi / 4 * y
    phi = np.pi / 4 * np.sin(np.pi * y)
    return np.column_stack([np.cos(phi) * np.cos(theta), np.sin(phi), np.cos(phi) * np.sin(theta)])


def _pattern_angle(sigma, amplitude=np.pi / 4, width=0.05):
    step = np.tanh((sigma - 1 / 3) / width) - np.tanh((sigma - 2 / 3) / width)
    return amplitude * (1.0 - step)


def patterned_director(points, descriptor=None):
    """Default patterned-square boundary data on the unit square."""
    descriptor = descriptor or BoundaryDescriptor.rectangle((0.0, 0.0), (1.0, 1.0))
    s = descriptor.arclength(points)
    side_len = descriptor.perimeter() / 4
    sigma = np.mod(s, side_len) / side_len
    theta = _pattern_angle(sigma)
    return np.column_stack([np.cos(theta), np.zeros_like(theta), np.sin(theta)])


def helix_field(points, rate, scale=1.0):
    """``scale * (sin(rate y), 0, cos(rate y))`` with its first and second derivatives.

    Returns ``(n, G, Hs)`` with ``G[:, k, i] = d_i n_k`` and
    ``Hs[:, k, i, j] = d_i d_j n_k``.
    """
    y = np.asarray(points)[:, 1]
    s, c = np.sin(rate * y), np.cos(rate * y)
    n = scale * np.column_stack([s, np.zeros_like(y), c])
    G = np.zeros((len(y), 3, 2))
    G[:, 0, 1] = scale * rate * c
    G[:, 2, 1] = -scale * rate * s
    Hs = np.zeros((len(y), 3, 2, 2))
    Hs[:, 0, 1, 1] = -scale * rate ** 2 * s
    Hs[:, 2, 1, 1] = -scale * rate ** 2 * c
    return n, G, Hs


def load_boundary_table(path, descriptor):
    """Boundary data from a whitespace table ``s g1 g2 g3`` (arc length, components).

    Values are interpolated linearly in arc length (periodically) and
    normalised to unit length.
    """
    table = np.loadtxt(path, ndmin=2)
    if table.shape[1] != 4 or len(table) < 2:
        raise ValueError(f"{path}: expected at least two rows of 4 columns")
    order = np.argsort(table[:, 0])
    s_tab, g_tab = table[order, 0], table[order, 1:]
    period = descriptor.perimeter()

    def func(points):
        s = descriptor.arclength(points)
        vals = np.column_stack([np.interp(s, s_tab, g_tab[:, k], period=period) for k in range(3)])
        return vals / np.linalg.norm(vals, axis=1, keepdims=True)

    return BoundaryCondition(f"table:{path}", func, f"tabulated boundary data from {path}")


def _split_overrides(overrides):
    names = {f.name for f in fields(ProblemConfig)}
    cfg_over = {k: v for k, v in overrides.items() if k in names}
    rest = {k: v for k, v in overrides.items() if k not in names}
    return cfg_over, rest


def preset(name, **overrides):
    """Configuration, coarse mesh and boundary data of a named experiment.

    Parameters
    ----------
    name : str
        One of :data:`PRESETS`.
    **overrides
        :class:`ProblemConfig` fields (``formulation``, ``zeta``, ``t0``,
        ...) and preset options: ``n`` (grid cells per side for the square
        domains), ``target_elements`` (ellipse), ``rate`` and
        ``boundary_scale`` (helix), ``boundary`` (a replacement
        :class:`BoundaryCondition` or a tabulated boundary file path).

    Returns
    -------
    cfg : ProblemConfig
    mesh : Mesh
    bc : BoundaryCondition
    """
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    cfg_over, opts = _split_overrides(overrides)
    formulation = cfg_over.get("formulation", "penalty")
    lagr = formulation == "lagrangian"
    notes = {}
    if name == "twist":
        base = dict(K1=1.0, K2=3.0, K3=1.2, t0=0.0, zeta=1e5,
                    alpha0=0.2 if lagr else 0.4, dalpha=0.2)
        n = opts.pop("n", 32)
        mesh = build_uniform_grid(n, n)
        bc = BoundaryCondition("twist", twist_director, TWIST_NOTE)
        notes["bc_interpretation"] = TWIST_NOTE
    elif name == "patterned":
        base = dict(K1=1.0, K2=0.629, K3=1.323, t0=0.0, zeta=1e6, alpha0=0.2, dalpha=0.2)
        n = opts.pop("n", 32)
        mesh = build_uniform_grid(n, n)
        desc = mesh.descriptor
        bc = BoundaryCondition("patterned", lambda p: patterned_director(p, desc), PATTERN_NOTE)
        notes["bc_interpretation"] = PATTERN_NOTE
    elif name in ("ellipse_t6", "ellipse_t8", "constant_ellipse"):
        if name == "ellipse_t6":
            base = dict(K1=1.0, K2=1.0, K3=1.0, t0=6.0, zeta=1e5, alpha0=0.3, dalpha=0.2)
        elif name == "ellipse_t8":
            base = dict(K1=1.0, K2=3.0, K3=1.2, t0=8.0, zeta=1e5, alpha0=0.3, dalpha=0.2)
        else:
            base = dict(K1=1.0, K2=1.0, K3=1.0, t0=0.0, zeta=1e5, alpha0=1.0, dalpha=0.0)
        mesh = build_ellipse_mesh(1.5, 1.0, opts.pop("target_elements", 1313))
        bc = BoundaryCondition("uniform_z", lambda p: np.tile([0.0, 0.0, 1.0], (len(p), 1)),
                               "n = (0, 0, 1) on the whole boundary")
        notes["ellipse"] = "semi-axes a = 1.5, b = 1.0"
        notes["coarse_elements"] = mesh.n_cells
    else:  # helix_manufactured
        t0 = cfg_over.get("t0", 2.0)
        rate = float(opts.pop("rate", t0))
        scale = float(opts.pop("boundary_scale", 1.0))
        base = dict(K1=1.0, K2=1.0, K3=1.0, t0=t0, zeta=1e5, alpha0=1.0, dalpha=0.0)
        n = opts.pop("n", 8)
        mesh = build_uniform_grid(n, n)
        bc = BoundaryCondition(
            "helix", lambda p: helix_field(p, rate, scale)[0],
            f"{scale} * (sin({rate} y), 0, cos({rate} y))")
        notes.update(rate=rate, boundary_scale=scale)
    boundary = opts.pop("boundary", None)
    if boundary is not None:
        bc = boundary if isinstance(boundary, BoundaryCondition) else load_boundary_table(boundary, mesh.descriptor)
        notes["bc_interpretation"] = bc.description
    if opts:
        raise TypeError(f"unknown preset options: {', '.join(sorted(opts))}")
    base.update(cfg_over)
    base["bc_id"] = bc.id
    base["notes"] = {**notes, **base.get("notes", {})}
    return ProblemConfig(**base), mesh, bc
