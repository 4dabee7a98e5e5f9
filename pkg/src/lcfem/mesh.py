"""Hierarchical quadrilateral meshes with local refinement.

Cells are stored as four counter-clockwise vertex ids.  Refinement is
isotropic (every flagged cell splits into four children) and keeps at
most one hanging node per cell side.  Edge midpoints created by
refinement are remembered in ``Mesh.midpoints`` so neighbouring cells
share them; a midpoint that sits on the side of an unrefined cell is a
hanging node.

Boundary sides are snapped onto the exact domain boundary through a
:class:`BoundaryDescriptor` whenever they are split.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "BoundaryDescriptor",
    "InvalidGeometryError",
    "MeshConstructionError",
    "Mesh",
    "QualityReport",
    "build_uniform_grid",
    "build_ellipse_mesh",
    "refine",
    "refine_uniform",
    "quality_report",
    "hanging_counts",
    "write_snapshot",
    "read_snapshot",
]

_uid_counter = itertools.count()

# child k of a cell covers [0, 1/2]^2 + CHILD_OFFSETS[k] / 2 in reference space
CHILD_OFFSETS = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


class InvalidGeometryError(ValueError):
    pass


class MeshConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryDescriptor:
    """Exact domain boundary used to snap new boundary vertices.

    ``kind`` is ``"polygon"`` (``params`` holds the CCW corner list) or
    ``"ellipse"`` (``params`` holds the semi-axes ``(a, b)``; the ellipse
    is centred at the origin).
    """

    kind: str
    params: tuple

    @classmethod
    def rectangle(cls, p0, p1):
        (x0, y0), (x1, y1) = p0, p1
        return cls("polygon", ((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @classmethod
    def ellipse(cls, a, b):
        return cls("ellipse", (float(a), float(b)))

    def project(self, points):
        """Map points near the boundary onto the boundary curve."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "ellipse":
            a, b = self.params
            theta = np.arctan2(pts[:, 1] / b, pts[:, 0] / a)
            out = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
            # keep points that already satisfy the ellipse equation untouched
            on = np.abs((pts[:, 0] / a) ** 2 + (pts[:, 1] / b) ** 2 - 1.0) < 1e-15
            out[on] = pts[on]
            return out
        corners = np.asarray(self.params, dtype=float)
        best = np.empty_like(pts)
        best_d = np.full(len(pts), np.inf)
        for p, q in zip(corners, np.roll(corners, -1, axis=0)):
            d = q - p
            t = np.clip(((pts - p) @ d) / (d @ d), 0.0, 1.0)
            cand = p + t[:, None] * d
            dist = np.linalg.norm(pts - cand, axis=1)
            better = dist < best_d
            best[better] = cand[better]
            best_d[better] = dist[better]
        # points already on a side are returned untouched
        on = best_d <= 1e-14 * np.ptp(corners, axis=0).max()
        best[on] = pts[on]
        return best

    def arclength(self, points):
        """Arc-length coordinate of boundary points, measured CCW.

        Polygons start at their first corner; ellipses start at ``(a, 0)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "ellipse":
            a, b = self.params
            theta = np.mod(np.arctan2(pts[:, 1] / b, pts[:, 0] / a), 2 * np.pi)
            grid = np.linspace(0.0, 2 * np.pi, 4097)
            speed = np.hypot(a * np.sin(grid), b * np.cos(grid))
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(grid))])
            return np.interp(theta, grid, cum)
        corners = np.asarray(self.params, dtype=float)
        s = np.zeros(len(pts))
        best_d = np.full(len(pts), np.inf)
        start = 0.0
        for p, q in zip(corners, np.roll(corners, -1, axis=0)):
            d = q - p
            length = np.linalg.norm(d)
            t = np.clip(((pts - p) @ d) / (d @ d), 0.0, 1.0)
            dist = np.linalg.norm(pts - (p + t[:, None] * d), axis=1)
            better = dist < best_d - 1e-14
            s[better] = start + t[better] * length
            best_d[better] = dist[better]
            start += length
        return s

    def perimeter(self):
        if self.kind == "ellipse":
            return float(self.arclength(np.array([[self.params[0], -1e-300]]))[0])
        corners = np.asarray(self.params, dtype=float)
        return float(np.linalg.norm(np.roll(corners, -1, axis=0) - corners, axis=1).sum())


@dataclass(frozen=True, eq=False)
class Mesh:
    """Active cells of a hierarchically refined quadrilateral mesh.

    Attributes
    ----------
    vertices : (nv, 2) array
    cells : (nc, 4) int array, counter-clockwise vertex ids
    level : (nc,) refinement level of each cell
    boundary : (nc, 4) bool, side ``s`` (vertices ``s`` and ``s+1``) lies on the domain boundary
    origin : (nc,) index of the cell of the parent mesh this cell came from
    child : (nc,) child position 0..3 inside ``origin`` or -1 if copied unchanged
    midpoints : dict mapping a sorted vertex pair to the id of its midpoint vertex
    """

    vertices: np.ndarray
    cells: np.ndarray
    level: np.ndarray
    boundary: np.ndarray
    origin: np.ndarray
    child: np.ndarray
    midpoints: dict
    descriptor: BoundaryDescriptor
    parent_uid: int | None = None
    uid: int = field(default_factory=lambda: next(_uid_counter))

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @cached_property
    def side_mid(self):
        """(nc, 4) midpoint vertex of each side, -1 where the side is not split."""
        out = np.full((self.n_cells, 4), -1, dtype=np.int64)
        mids = self.midpoints
        for e, cell in enumerate(self.cells.tolist()):
            for s in range(4):
                a, b = cell[s], cell[(s + 1) % 4]
                m = mids.get((a, b) if a < b else (b, a))
                if m is not None:
                    out[e, s] = m
        return out

    @cached_property
    def edges(self):
        """Leaf edge segments of the active mesh.

        Returns a dict of arrays: ``vertices`` (ns, 2) oriented CCW for the
        first cell, ``cells`` (ns, 2) with -1 for a missing neighbour,
        ``side`` (ns, 2) and ``half`` (ns, 2) where ``half`` is -1 for a full
        cell side and 0/1 for the first/second half of a split side.
        """
        table = {}
        cells = self.cells.tolist()
        side_mid = self.side_mid.tolist()
        for e, cell in enumerate(cells):
            for s in range(4):
                a, b = cell[s], cell[(s + 1) % 4]
                m = side_mid[e][s]
                if m < 0:
                    parts = [(a, b, -1)]
                else:
                    parts = [(a, m, 0), (m, b, 1)]
                for p, q, h in parts:
                    key = (p, q) if p < q else (q, p)
                    table.setdefault(key, []).append((e, s, h, p, q))
        ns = len(table)
        verts = np.empty((ns, 2), dtype=np.int64)
        ecells = np.full((ns, 2), -1, dtype=np.int64)
        eside = np.full((ns, 2), -1, dtype=np.int64)
        ehalf = np.full((ns, 2), -1, dtype=np.int64)
        for i, key in enumerate(sorted(table)):
            entries = sorted(table[key])
            if len(entries) > 2:
                raise MeshConstructionError(f"edge {key} shared by {len(entries)} cells")
            verts[i] = entries[0][3], entries[0][4]
            for j, (e, s, h, _, _) in enumerate(entries):
                ecells[i, j], eside[i, j], ehalf[i, j] = e, s, h
        return {"vertices": verts, "cells": ecells, "side": eside, "half": ehalf}

    @cached_property
    def hanging(self):
        """(nh, 3) records ``(hanging vertex, master a, master b)``."""
        rows = []
        for e, s in zip(*np.nonzero(self.side_mid >= 0)):
            a, b = self.cells[e, s], self.cells[e, (s + 1) % 4]
            rows.append((self.side_mid[e, s], a, b))
        return np.array(sorted(rows), dtype=np.int64).reshape(-1, 3)

    @cached_property
    def h_cell(self):
        """Diameter of every cell (largest vertex-to-vertex distance)."""
        x = self.vertices[self.cells]
        d = [np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in itertools.combinations(range(4), 2)]
        return np.max(d, axis=0)

    @cached_property
    def area(self):
        x = self.vertices[self.cells]
        xs, ys = x[..., 0], x[..., 1]
        return 0.5 * np.sum(xs * np.roll(ys, -1, axis=1) - np.roll(xs, -1, axis=1) * ys, axis=1)

    def domain_area(self):
        return float(self.area.sum())


def _detect_boundary(cells):
    count = {}
    for cell in cells.tolist():
        for s in range(4):
            a, b = cell[s], cell[(s + 1) % 4]
            key = (a, b) if a < b else (b, a)
            count[key] = count.get(key, 0) + 1
    out = np.zeros(cells.shape, dtype=bool)
    for e, cell in enumerate(cells.tolist()):
        for s in range(4):
            a, b = cell[s], cell[(s + 1) % 4]
            out[e, s] = count[(a, b) if a < b else (b, a)] == 1
    return out


def _coarse_mesh(vertices, cells, descriptor):
    nc = len(cells)
    return Mesh(
        vertices=np.asarray(vertices, dtype=float),
        cells=np.asarray(cells, dtype=np.int64),
        level=np.zeros(nc, dtype=np.int64),
        boundary=_detect_boundary(np.asarray(cells)),
        origin=np.arange(nc),
        child=np.full(nc, -1, dtype=np.int64),
        midpoints={},
        descriptor=descriptor,
    )


def build_uniform_grid(nx, ny, rect=((0.0, 0.0), (1.0, 1.0))):
    """Structured ``nx`` by ``ny`` grid of congruent rectangles."""
    if nx < 1 or ny < 1:
        raise InvalidGeometryError("nx and ny must be at least 1")
    (x0, y0), (x1, y1) = rect
    if not (x1 > x0 and y1 > y0):
        raise InvalidGeometryError(f"degenerate rectangle {rect}")
    xs, ys = np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v0 = (j * (nx + 1) + i).ravel()
    cells = np.column_stack([v0, v0 + 1, v0 + nx + 2, v0 + nx + 1])
    return _coarse_mesh(vertices, cells, BoundaryDescriptor.rectangle((x0, y0), (x1, y1)))


def _ellipse_layout(target):
    best = None
    for n in range(2, 120):
        for m in range(1, 120):
            if not 0.3 <= m / n <= 0.7:
                continue
            count = n * n + 4 * n * m
            score = (abs(count - target), abs(m / n - 0.45))
            if best is None or score < best[0]:
                best = (score, n, m)
    return best[1], best[2]


def build_ellipse_mesh(a, b, target_elements, core=0.55):
    """Ellipse mesh made of a square core surrounded by four ring blocks.

    The core is an ``n x n`` grid on ``[-core, core]^2`` of the unit disk;
    each ring block has ``n`` cells tangentially and ``m`` radially and is
    a linear blend between a core side and a quarter of the unit circle.
    The disk is then stretched to semi-axes ``(a, b)``.  ``n`` and ``m`` are
    chosen so that ``n^2 + 4 n m`` is as close as possible to the target.
    """
    if not (a >= b > 0):
        raise InvalidGeometryError("need a >= b > 0")
    n, m = _ellipse_layout(target_elements)
    achieved = n * n + 4 * n * m
    if abs(achieved - target_elements) > 0.15 * target_elements:
        raise MeshConstructionError(
            f"cannot reach {target_elements} elements; closest layout gives {achieved}"
        )
    blocks = []
    s = np.linspace(-core, core, n + 1)
    X, Y = np.meshgrid(s, s)
    blocks.append(np.stack([X, Y], axis=-1))  # indexed [j (y), i (x)]
    u = np.linspace(-1.0, 1.0, n + 1)
    t = np.linspace(0.0, 1.0, m + 1)
    inner = np.column_stack([np.full_like(u, core), core * u])
    outer = np.column_stack([np.cos(np.pi / 4 * u), np.sin(np.pi / 4 * u)])
    right = (1 - t[:, None, None]) * inner[None] + t[:, None, None] * outer[None]  # [t, u]
    for k in range(4):
        c, sn = np.cos(k * np.pi / 2), np.sin(k * np.pi / 2)
        rot = np.array([[c, -sn], [sn, c]])
        pts = right @ rot.T
        if k in (1, 2, 3):
            # snap to exact values so shared core points coincide bit-for-bit after dedup
            pts = np.where(np.abs(pts) < 1e-15, 0.0, pts)
        blocks.append(pts)
    points, cells = [], []
    offset = 0
    for grid in blocks:
        rows, cols = grid.shape[:2]
        points.append(grid.reshape(-1, 2))
        jj, ii = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
        v0 = (jj * cols + ii).ravel() + offset
        cells.append(np.column_stack([v0, v0 + 1, v0 + cols + 1, v0 + cols]))
        offset += rows * cols
    points = np.vstack(points)
    cells = np.vstack(cells)
    # merge coincident points
    tree = cKDTree(points)
    rep = np.arange(len(points))
    for i, j in sorted(tree.query_pairs(1e-9)):
        ri, rj = rep[i], rep[j]
        lo = min(ri, rj)
        rep[rep == max(ri, rj)] = lo
    uniq, inverse = np.unique(rep, return_inverse=True)
    verts = points[uniq]
    cells = inverse[cells]
    # exact unit radius on the outer ring before stretching
    r = np.hypot(verts[:, 0], verts[:, 1])
    on = np.abs(r - 1.0) < 1e-9
    verts[on] /= r[on, None]
    verts = verts * np.array([a, b])
    # orient counter-clockwise
    x = verts[cells]
    area = 0.5 * np.sum(x[..., 0] * np.roll(x[..., 1], -1, 1) - np.roll(x[..., 0], -1, 1) * x[..., 1], axis=1)
    cells[area < 0] = cells[area < 0][:, ::-1]
    return _coarse_mesh(verts, cells, BoundaryDescriptor.ellipse(a, b))


def _closure(mesh, flags):
    """Grow the flag set until refining it keeps 2:1 balance."""
    flags = np.asarray(flags, dtype=bool).copy()
    edges = mesh.edges
    ecells, ehalf = edges["cells"], edges["half"]
    # for each cell side that is a full (unsplit) side, find a coarser neighbour
    coarser = {}
    for i in range(len(ecells)):
        c0, c1 = ecells[i]
        if c1 < 0:
            continue
        h0, h1 = ehalf[i]
        if h0 < 0 and h1 >= 0:
            coarser.setdefault(c0, []).append(c1)
        elif h1 < 0 and h0 >= 0:
            coarser.setdefault(c1, []).append(c0)
    stack = sorted(int(e) for e in np.nonzero(flags)[0])
    while stack:
        e = stack.pop()
        for nb in coarser.get(e, ()):
            if not flags[nb]:
                flags[nb] = True
                stack.append(nb)
    return flags


def refine(mesh, flags, boundary=None):
    """Split flagged cells into four and return the new mesh.

    Additional cells are refined where needed to keep at most one
    hanging node per side.  New midpoints of boundary sides are projected
    with ``boundary`` (defaults to the mesh's own descriptor).
    """
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (mesh.n_cells,):
        raise ValueError(f"expected {mesh.n_cells} flags, got {flags.shape}")
    descriptor = boundary or mesh.descriptor
    flags = _closure(mesh, flags)
    verts = list(map(tuple, mesh.vertices.tolist()))
    mids = dict(mesh.midpoints)

    def midpoint(a, b, on_boundary):
        key = (a, b) if a < b else (b, a)
        m = mids.get(key)
        if m is None:
            p = 0.5 * (np.asarray(verts[a]) + np.asarray(verts[b]))
            if on_boundary:
                p = descriptor.project(p)[0]
            verts.append(tuple(p))
            m = len(verts) - 1
            mids[key] = m
        return m

    new_cells, new_level, new_bnd, new_origin, new_child = [], [], [], [], []
    for e, cell in enumerate(mesh.cells.tolist()):
        bnd = mesh.boundary[e]
        if not flags[e]:
            new_cells.append(cell)
            new_level.append(mesh.level[e])
            new_bnd.append(bnd.tolist())
            new_origin.append(e)
            new_child.append(-1)
            continue
        v0, v1, v2, v3 = cell
        m01 = midpoint(v0, v1, bnd[0])
        m12 = midpoint(v1, v2, bnd[1])
        m23 = midpoint(v2, v3, bnd[2])
        m30 = midpoint(v3, v0, bnd[3])
        c = tuple(np.mean([verts[m01], verts[m12], verts[m23], verts[m30]], axis=0))
        verts.append(c)
        ci = len(verts) - 1
        kids = [
            ([v0, m01, ci, m30], [bnd[0], False, False, bnd[3]]),
            ([m01, v1, m12, ci], [bnd[0], bnd[1], False, False]),
            ([ci, m12, v2, m23], [False, bnd[1], bnd[2], False]),
            ([m30, ci, m23, v3], [False, False, bnd[2], bnd[3]]),
        ]
        for k, (kc, kb) in enumerate(kids):
            new_cells.append(kc)
            new_level.append(mesh.level[e] + 1)
            new_bnd.append(kb)
            new_origin.append(e)
            new_child.append(k)
    return Mesh(
        vertices=np.array(verts, dtype=float),
        cells=np.array(new_cells, dtype=np.int64),
        level=np.array(new_level, dtype=np.int64),
        boundary=np.array(new_bnd, dtype=bool),
        origin=np.array(new_origin, dtype=np.int64),
        child=np.array(new_child, dtype=np.int64),
        midpoints=mids,
        descriptor=descriptor,
        parent_uid=mesh.uid,
    )


def refine_uniform(mesh, times=1):
    for _ in range(times):
        mesh = refine(mesh, np.ones(mesh.n_cells, dtype=bool))
    return mesh


def hanging_counts(mesh):
    """Number of hanging vertices on every active cell side, by exhaustive scan."""
    mids = mesh.midpoints

    def count(a, b):
        m = mids.get((a, b) if a < b else (b, a))
        if m is None:
            return 0
        return 1 + count(a, m) + count(m, b)

    out = np.zeros((mesh.n_cells, 4), dtype=np.int64)
    for e, cell in enumerate(mesh.cells.tolist()):
        for s in range(4):
            out[e, s] = count(cell[s], cell[(s + 1) % 4])
    return out


@dataclass
class QualityReport:
    max_h: float
    min_inscribed: float
    min_h_ratio: float
    max_h_ratio: float
    min_angle: float
    min_jacobian: float

    def passes(self):
        return self.min_jacobian > 0 and self.min_angle > 0 and self.min_inscribed > 0


def quality_report(mesh):
    """Shape statistics of all active cells.

    ``min_inscribed`` is twice the smallest distance from a cell's vertex
    centroid to its side lines, which is exact for parallelograms.
    """
    x = mesh.vertices[mesh.cells]
    nxt = np.roll(x, -1, axis=1)
    prv = np.roll(x, 1, axis=1)
    side = nxt - x
    h_e = np.linalg.norm(side, axis=2)
    ratio = mesh.h_cell[:, None] / h_e
    u = side / h_e[..., None]
    w = prv - x
    w = w / np.linalg.norm(w, axis=2)[..., None]
    angles = np.arccos(np.clip(np.sum(u * w, axis=2), -1.0, 1.0))
    centroid = x.mean(axis=1)
    rel = centroid[:, None, :] - x
    dist = np.abs(u[..., 0] * rel[..., 1] - u[..., 1] * rel[..., 0])
    probe = np.linspace(0.0, 1.0, 3)
    dets = []
    for xi, eta in itertools.product(probe, probe):
        dxi = (1 - eta) * (x[:, 1] - x[:, 0]) + eta * (x[:, 2] - x[:, 3])
        deta = (1 - xi) * (x[:, 3] - x[:, 0]) + xi * (x[:, 2] - x[:, 1])
        dets.append(dxi[:, 0] * deta[:, 1] - dxi[:, 1] * deta[:, 0])
    return QualityReport(
        max_h=float(mesh.h_cell.max()),
        min_inscribed=float(2 * dist.min()),
        min_h_ratio=float(ratio.min()),
        max_h_ratio=float(ratio.max()),
        min_angle=float(angles.min()),
        min_jacobian=float(np.min(dets)),
    )


def write_snapshot(mesh, path):
    """Plain-text, loss-free dump of vertices, cells and hanging records."""
    with open(path, "w") as f:
        f.write(f"descriptor {mesh.descriptor.kind} {' '.join(repr(float(v)) for v in np.ravel(mesh.descriptor.params))}\n")
        f.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices.tolist():
            f.write(f"{x!r} {y!r}\n")
        f.write(f"cells {mesh.n_cells}\n")
        for cell, lev, bnd, org, ch in zip(mesh.cells.tolist(), mesh.level.tolist(), mesh.boundary.tolist(),
                                           mesh.origin.tolist(), mesh.child.tolist()):
            f.write(" ".join(map(str, cell + [lev] + [int(b) for b in bnd] + [org, ch])) + "\n")
        f.write(f"midpoints {len(mesh.midpoints)}\n")
        for (a, b), m in sorted(mesh.midpoints.items()):
            f.write(f"{a} {b} {m}\n")
        f.write(f"hanging {len(mesh.hanging)}\n")
        for row in mesh.hanging.tolist():
            f.write(" ".join(map(str, row)) + "\n")


def read_snapshot(path):
    with open(path) as f:
        lines = f.read().splitlines()
    head = lines[0].split()
    kind, vals = head[1], [float(v) for v in head[2:]]
    params = tuple(vals) if kind == "ellipse" else tuple(zip(vals[0::2], vals[1::2]))
    i = 1
    nv = int(lines[i].split()[1]); i += 1
    verts = np.array([[float(t) for t in ln.split()] for ln in lines[i:i + nv]]).reshape(-1, 2); i += nv
    nc = int(lines[i].split()[1]); i += 1
    rows = np.array([[int(t) for t in ln.split()] for ln in lines[i:i + nc]], dtype=np.int64).reshape(-1, 11); i += nc
    nm = int(lines[i].split()[1]); i += 1
    mids = {}
    for ln in lines[i:i + nm]:
        a, b, m = map(int, ln.split())
        mids[(a, b)] = m
    return Mesh(
        vertices=verts,
        cells=rows[:, :4].copy(),
        level=rows[:, 4].copy(),
        boundary=rows[:, 5:9].astype(bool),
        origin=rows[:, 9].copy(),
        child=rows[:, 10].copy(),
        midpoints=mids,
        descriptor=BoundaryDescriptor(kind, params),
    )
