"""Structured triangulations of axis-aligned rectangles with tagged boundaries.

The mesh family is fixed: an nx-by-ny grid of cells, each split along the
lower-left to upper-right diagonal, vertices numbered row-major. Boundary
edges carry a Dirichlet (GAMMA1) or Neumann (GAMMA2) tag; GAMMA1 must cover
at least one whole rectangle side.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

SIDES = ("left", "right", "bottom", "top")


class BoundaryTag(enum.Enum):
    GAMMA1 = 1  # Dirichlet part, u = b
    GAMMA2 = 2  # Neumann part, -du/dn = q


@dataclass(frozen=True)
class Mesh:
    """Conforming P1 triangulation of a rectangle.

    vertices       : (n, 2) float array, row-major grid numbering
    triangles      : (m, 3) int array, counterclockwise
    boundary_edges : (k, 2) int array of vertex pairs
    boundary_tags  : (k,) array of BoundaryTag
    h              : longest triangle side
    level          : refinement count from the base mesh
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    h: float
    level: int
    # structured-grid metadata; fixes refinement and point location
    nx: int
    ny: int
    domain: tuple[float, float, float, float]  # (x0, y0, x1, y1)
    gamma1_sides: frozenset[str]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    def vertex_index(self, ix: int, iy: int) -> int:
        return iy * (self.nx + 1) + ix


def build_rectangle_mesh(nx, ny, domain=(0.0, 0.0, 1.0, 1.0), gamma1_sides=("left",)):
    """Triangulate [x0,x1] x [y0,y1] into 2*nx*ny triangles.

    gamma1_sides selects whole rectangle sides for the Dirichlet boundary;
    it must be nonempty (the problem requires meas(Gamma1) > 0).
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"grid must have nx, ny >= 1, got nx={nx}, ny={ny}")
    sides = frozenset(gamma1_sides)
    if not sides:
        raise ValueError("gamma1_sides must be nonempty (meas(Gamma1) > 0 required)")
    unknown = sides - set(SIDES)
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}; expected subset of {SIDES}")
    x0, y0, x1, y1 = map(float, domain)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys)  # row-major: vertex iy*(nx+1)+ix
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(ix, iy):
        return iy * (nx + 1) + ix

    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    t = 0
    for iy in range(ny):
        for ix in range(nx):
            v00 = vid(ix, iy)
            v10 = vid(ix + 1, iy)
            v01 = vid(ix, iy + 1)
            v11 = vid(ix + 1, iy + 1)
            # diagonal v00 -> v11, both children counterclockwise
            triangles[t] = (v00, v10, v11)
            triangles[t + 1] = (v00, v11, v01)
            t += 2

    edges = []
    tags = []

    def tag_for(side):
        return BoundaryTag.GAMMA1 if side in sides else BoundaryTag.GAMMA2

    for ix in range(nx):
        edges.append((vid(ix, 0), vid(ix + 1, 0)))
        tags.append(tag_for("bottom"))
        edges.append((vid(ix, ny), vid(ix + 1, ny)))
        tags.append(tag_for("top"))
    for iy in range(ny):
        edges.append((vid(0, iy), vid(0, iy + 1)))
        tags.append(tag_for("left"))
        edges.append((vid(nx, iy), vid(nx, iy + 1)))
        tags.append(tag_for("right"))

    dx = (x1 - x0) / nx
    dy = (y1 - y0) / ny
    h = float(np.hypot(dx, dy))
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=np.array(edges, dtype=np.int64),
        boundary_tags=np.array(tags, dtype=object),
        h=h,
        level=0,
        nx=nx,
        ny=ny,
        domain=(x0, y0, x1, y1),
        gamma1_sides=sides,
    )


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into 4 congruent children.

    For this structured family that is exactly the doubled grid, so the
    refined mesh is rebuilt with 2*nx, 2*ny; tags are inherited side-wise.
    """
    fine = build_rectangle_mesh(2 * mesh.nx, 2 * mesh.ny, mesh.domain, mesh.gamma1_sides)
    return Mesh(
        vertices=fine.vertices,
        triangles=fine.triangles,
        boundary_edges=fine.boundary_edges,
        boundary_tags=fine.boundary_tags,
        h=mesh.h / 2.0,
        level=mesh.level + 1,
        nx=fine.nx,
        ny=fine.ny,
        domain=fine.domain,
        gamma1_sides=fine.gamma1_sides,
    )


def refine_times(mesh: Mesh, times: int) -> Mesh:
    for _ in range(times):
        mesh = refine_uniform(mesh)
    return mesh


def mesh_size(mesh: Mesh) -> float:
    """Longest triangle side over the whole mesh.

    All triangles of the structured family are congruent with longest side
    the cell diagonal; computing it from the cell counts keeps the halving
    under refinement exact in floating point.
    """
    if mesh.num_triangles == 0:
        raise ValueError("mesh has no triangles")
    x0, y0, x1, y1 = mesh.domain
    return float(np.hypot((x1 - x0) / mesh.nx, (y1 - y0) / mesh.ny))


def triangle_areas(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def interpolate(mesh: Mesh, f) -> np.ndarray:
    """Nodal P1 interpolant: value f(x, y) at every vertex.

    f may be a callable (x, y) -> float or a scalar constant.
    """
    if callable(f):
        values = np.array(
            [f(x, y) for x, y in mesh.vertices], dtype=float
        )
    else:
        values = np.full(mesh.num_vertices, float(f))
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(
            f"non-finite value at vertex {bad} {tuple(mesh.vertices[bad])}"
        )
    return values


def evaluate_p1(mesh: Mesh, field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the P1 function with nodal values `field` at arbitrary points.

    Exact point location via the structured grid; points must lie in the
    closed domain rectangle (clamped to guard against roundoff on edges).
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.num_vertices,):
        raise ValueError(f"field has shape {field.shape}, expected ({mesh.num_vertices},)")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x0, y0, x1, y1 = mesh.domain
    dx = (x1 - x0) / mesh.nx
    dy = (y1 - y0) / mesh.ny
    ix = np.clip(((pts[:, 0] - x0) // dx).astype(int), 0, mesh.nx - 1)
    iy = np.clip(((pts[:, 1] - y0) // dy).astype(int), 0, mesh.ny - 1)
    s = (pts[:, 0] - x0) / dx - ix  # local coords in [0, 1]
    t = (pts[:, 1] - y0) / dy - iy
    stride = mesh.nx + 1
    v00 = field[iy * stride + ix]
    v10 = field[iy * stride + ix + 1]
    v01 = field[(iy + 1) * stride + ix]
    v11 = field[(iy + 1) * stride + ix + 1]
    lower = s >= t  # below the v00->v11 diagonal
    out = np.where(
        lower,
        v00 * (1.0 - s) + v10 * (s - t) + v11 * t,
        v00 * (1.0 - t) + v01 * (t - s) + v11 * s,
    )
    return out


def prolongate(coarse: Mesh, field: np.ndarray, fine: Mesh) -> np.ndarray:
    """P1 interpolation of a coarse nodal field onto a nested finer mesh.

    Exact (up to roundoff) when `fine` was obtained from `coarse` by
    refine_uniform, since the coarse function is piecewise linear on the
    fine triangles as well.
    """
    if fine.domain != coarse.domain or fine.nx % coarse.nx or fine.ny % coarse.ny:
        raise ValueError("fine mesh is not a nested refinement of the coarse mesh")
    return evaluate_p1(coarse, field, fine.vertices)


def export_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh dump: vertices, triangles, tagged boundary edges.

    Columns: `v x y` / `t i j k` / `e i j tag` with tag in {gamma1, gamma2}.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vicontrol mesh: v x y | t i j k | e i j tag\n")
        for x, y in mesh.vertices:
            fh.write(f"v {float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"t {i} {j} {k}\n")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            name = "gamma1" if tag is BoundaryTag.GAMMA1 else "gamma2"
            fh.write(f"e {i} {j} {name}\n")
