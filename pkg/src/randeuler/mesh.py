"""Conforming triangular meshes in 2D.

Faces carry one fixed unit normal.  The cell the normal leaves is the
``left`` ("in") cell; the cell it enters is ``right`` ("out"), or ``-1``
on the domain boundary, where the normal always points out of the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Raised for malformed mesh files and topologically invalid meshes."""


class MeshParseError(MeshError):
    pass


class MeshTopologyError(MeshError):
    pass


class NonNestedError(MeshError):
    """Raised when a fine mesh is not a refinement of a coarse one."""


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (nv, 2)
    cells: np.ndarray  # (nc, 3), counterclockwise
    face_vertices: np.ndarray  # (nf, 2)
    face_normal: np.ndarray  # (nf, 2), unit
    face_length: np.ndarray  # (nf,)
    face_left: np.ndarray  # (nf,) cell the normal leaves
    face_right: np.ndarray  # (nf,) cell the normal enters, -1 on the boundary
    cell_faces: np.ndarray  # (nc, 3)
    cell_face_sign: np.ndarray  # (nc, 3) +1 if the face normal is outward for the cell
    cell_area: np.ndarray  # (nc,)
    cell_diameter: np.ndarray  # (nc,)
    structured: tuple | None = field(default=None)  # (nx, ny, Lx, Ly) if built on a grid

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.face_left)

    @property
    def h(self) -> float:
        return float(self.cell_diameter.max())

    @property
    def interior(self) -> np.ndarray:
        """Indices of interior faces."""
        return np.flatnonzero(self.face_right >= 0)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.face_right < 0)

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def flip_normals(self, faces=None) -> "Mesh":
        """Return a copy with the stored normal of the given interior faces reversed.

        Boundary faces keep their outward normal; by default every interior
        face is flipped.
        """
        flip = np.zeros(self.n_faces, dtype=bool)
        if faces is None:
            flip[self.interior] = True
        else:
            flip[np.asarray(faces)] = True
            if np.any(self.face_right[flip] < 0):
                raise ValueError("boundary face normals are fixed to the outward direction")
        left = np.where(flip, self.face_right, self.face_left)
        right = np.where(flip, self.face_left, self.face_right)
        normal = np.where(flip[:, None], -self.face_normal, self.face_normal)
        fv = np.where(flip[:, None], self.face_vertices[:, ::-1], self.face_vertices)
        sign = np.where(flip[self.cell_faces], -self.cell_face_sign, self.cell_face_sign)
        return Mesh(self.vertices, self.cells, fv, normal, self.face_length, left, right,
                    self.cell_faces, sign, self.cell_area, self.cell_diameter, self.structured)


def _signed_areas(vertices, cells):
    p0, p1, p2 = (vertices[cells[:, i]] for i in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def from_arrays(vertices, cells, structured=None, check_hanging=True) -> Mesh:
    """Build and validate a :class:`Mesh` from vertex coordinates and cell triples."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (nv, 2)")
    if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
        raise MeshError("cells must have shape (nc, 3) with nc >= 1")
    if cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshTopologyError("cell references a nonexistent vertex")
    if np.any((cells[:, 0] == cells[:, 1]) | (cells[:, 1] == cells[:, 2])
              | (cells[:, 0] == cells[:, 2])):
        raise MeshTopologyError("cell with repeated vertex")

    area = _signed_areas(vertices, cells)
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise MeshTopologyError(f"cell {bad} is not positively oriented (signed area {area[bad]:.3g})")

    nc = len(cells)
    # directed edges a->b, cell-local edge j opposite vertex (j+2)%3
    a = cells[:, [0, 1, 2]].reshape(-1)
    b = cells[:, [1, 2, 0]].reshape(-1)
    owner = np.repeat(np.arange(nc), 3)
    key = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    uniq, first, inverse, counts = np.unique(key, axis=0, return_index=True,
                                             return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        bad = uniq[np.flatnonzero(counts > 2)[0]]
        raise MeshTopologyError(f"edge {tuple(bad)} is shared by more than two cells")

    nf = len(uniq)
    # the first occurrence defines the left cell and the orientation a->b
    left = owner[first]
    fa = a[first]
    fb = b[first]
    right = np.full(nf, -1, dtype=np.int64)
    occ = np.arange(3 * nc)
    second = occ[first[inverse] != occ]
    right[inverse[second]] = owner[second]
    # two cells traversing a shared edge in the same direction overlap
    if np.any(a[second] == fa[inverse[second]]):
        raise MeshTopologyError("adjacent cells have inconsistent orientation")

    d = vertices[fb] - vertices[fa]
    length = np.hypot(d[:, 0], d[:, 1])
    normal = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]

    cell_faces = inverse.reshape(nc, 3)
    cell_face_sign = np.where(left[cell_faces] == np.arange(nc)[:, None], 1, -1).astype(np.int8)

    edge_len = length[cell_faces]
    diameter = edge_len.max(axis=1)

    mesh = Mesh(vertices, cells, np.stack([fa, fb], axis=1), normal, length, left, right,
                cell_faces, cell_face_sign, area, diameter, structured)
    _check_closed(mesh)
    if check_hanging:
        _check_hanging_nodes(mesh)
    return mesh


def _check_closed(mesh: Mesh):
    contrib = (mesh.face_length[mesh.cell_faces, None] * mesh.face_normal[mesh.cell_faces]
               * mesh.cell_face_sign[:, :, None])
    resid = np.abs(contrib.sum(axis=1)).max()
    if resid > 1e-10 * max(1.0, mesh.h):
        raise MeshTopologyError(f"cell boundaries do not close (residual {resid:.3g})")


def _check_hanging_nodes(mesh: Mesh):
    bnd = mesh.boundary
    if len(bnd) == 0:
        return
    used = np.unique(mesh.cells)
    pts = mesh.vertices[used]
    tol = 1e-12 * mesh.h
    for start in range(0, len(bnd), 256):
        fs = bnd[start:start + 256]
        p = mesh.vertices[mesh.face_vertices[fs, 0]]
        q = mesh.vertices[mesh.face_vertices[fs, 1]]
        d = q - p
        L2 = (d ** 2).sum(axis=1)
        rel = pts[None, :, :] - p[:, None, :]
        s = (rel * d[:, None, :]).sum(axis=2) / L2[:, None]
        cross = rel[:, :, 0] * d[:, None, 1] - rel[:, :, 1] * d[:, None, 0]
        dist = np.abs(cross) / np.sqrt(L2)[:, None]
        inner = (s > 1e-12) & (s < 1.0 - 1e-12) & (dist <= tol)
        if inner.any():
            i, j = np.argwhere(inner)[0]
            raise MeshTopologyError(
                f"hanging node: vertex {int(used[j])} lies inside face {int(fs[i])}")


def build_structured(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> Mesh:
    """Split an ``nx`` by ``ny`` grid on ``[0, Lx] x [0, Ly]`` into right triangles.

    Every square is cut along its lower-left to upper-right diagonal, so
    doubling ``nx`` and ``ny`` yields a nested refinement.
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    if not (Lx > 0 and Ly > 0):
        raise ValueError("Lx and Ly must be positive")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    cells = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return from_arrays(vertices, cells, structured=(nx, ny, float(Lx), float(Ly)),
                       check_hanging=False)


def write_mesh(mesh: Mesh, path):
    lines = [f"mesh2d {mesh.n_vertices} {mesh.n_cells}"]
    lines += [f"v {x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"c {i} {j} {k}" for i, j, k in mesh.cells]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read a ``mesh2d`` text file and validate its topology."""
    text = Path(path).read_text()
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or rows[0][0] != "mesh2d" or len(rows[0]) != 3:
        raise MeshParseError(f"{path}: missing 'mesh2d <nvertices> <ncells>' header")
    try:
        nv, nc = int(rows[0][1]), int(rows[0][2])
        verts = []
        cells = []
        for lineno, r in enumerate(rows[1:], start=2):
            if r[0] == "v" and len(r) == 3:
                verts.append((float(r[1]), float(r[2])))
            elif r[0] == "c" and len(r) == 4:
                cells.append((int(r[1]), int(r[2]), int(r[3])))
            else:
                raise MeshParseError(f"{path}: cannot parse record {' '.join(r)!r}")
    except ValueError as exc:
        if isinstance(exc, MeshParseError):
            raise
        raise MeshParseError(f"{path}: {exc}") from exc
    if len(verts) != nv or len(cells) != nc:
        raise MeshParseError(f"{path}: header announces {nv} vertices and {nc} cells, "
                             f"found {len(verts)} and {len(cells)}")
    return from_arrays(np.array(verts, dtype=float), np.array(cells, dtype=np.int64))


@dataclass(frozen=True)
class MeshStats:
    h: float
    c1: float
    C1: float
    c2: float
    C2: float
    min_angle: float
    constM: float
    alignment_deviation: float
    degenerate_alignment_faces: int


def _angles(mesh: Mesh):
    p = mesh.vertices[mesh.cells]
    out = []
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    return np.stack(out, axis=1)


def circumcenters(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.cells]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    bx, by = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    cx, cy = c[:, 0] - a[:, 0], c[:, 1] - a[:, 1]
    d = 2.0 * (bx * cy - by * cx)
    b2 = bx ** 2 + by ** 2
    c2 = cx ** 2 + cy ** 2
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return np.stack([a[:, 0] + ux, a[:, 1] + uy], axis=1)


def alignment_deviation(mesh: Mesh):
    """Sine of the angle between ``x_K - x_L`` and the face normal, per interior face.

    ``x_K`` are circumcenters.  Faces whose two circumcenters coincide are
    degenerate; they get deviation 1 and are flagged in the returned mask.
    """
    f = mesh.interior
    cc = circumcenters(mesh)
    d = cc[mesh.face_left[f]] - cc[mesh.face_right[f]]
    norm = np.hypot(d[:, 0], d[:, 1])
    n = mesh.face_normal[f]
    degenerate = norm <= 1e-12 * mesh.h
    safe = np.where(degenerate, 1.0, norm)
    sine = np.abs(d[:, 0] * n[:, 1] - d[:, 1] * n[:, 0]) / safe
    sine = np.where(degenerate, 1.0, np.minimum(sine, 1.0))
    return sine, degenerate


def mesh_constant_M(mesh: Mesh) -> float:
    """Smallest M with ``h * sum_sigma |sigma| <r> <= M * sum_K |K| r_K`` for all r >= 0."""
    interior = (mesh.face_right >= 0)[mesh.cell_faces]
    half_perimeter = 0.5 * np.where(interior, mesh.face_length[mesh.cell_faces], 0.0).sum(axis=1)
    return float(np.max(mesh.h * half_perimeter / mesh.cell_area))


def mesh_stats(mesh: Mesh) -> MeshStats:
    h = mesh.h
    ratio_k = mesh.cell_area / h ** 2
    ratio_f = mesh.face_length / h
    sine, degenerate = alignment_deviation(mesh)
    return MeshStats(
        h=h,
        c1=float(ratio_k.min()), C1=float(ratio_k.max()),
        c2=float(ratio_f.min()), C2=float(ratio_f.max()),
        min_angle=float(_angles(mesh).min()),
        constM=mesh_constant_M(mesh),
        alignment_deviation=float(sine.max()) if len(sine) else 0.0,
        degenerate_alignment_faces=int(degenerate.sum()),
    )


def face_average_jump(mesh: Mesh, values, face: int):
    """Average and jump of a piecewise-constant field across an interior face.

    The jump is ``out - in`` with sides taken relative to the stored normal.
    """
    right = mesh.face_right[face]
    if right < 0:
        raise ValueError(f"face {face} is a boundary face; jump needs a ghost state")
    values = np.asarray(values, dtype=float)
    a_in = values[mesh.face_left[face]]
    a_out = values[right]
    return 0.5 * (a_out + a_in), a_out - a_in


def locate_cells(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Index of a cell containing each point (-1 if outside the mesh)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if mesh.structured is not None:
        nx, ny, Lx, Ly = mesh.structured
        sx = points[:, 0] / Lx * nx
        sy = points[:, 1] / Ly * ny
        i = np.clip(np.floor(sx).astype(np.int64), 0, nx - 1)
        j = np.clip(np.floor(sy).astype(np.int64), 0, ny - 1)
        upper = (sy - j) > (sx - i)
        idx = 2 * (j * nx + i) + upper
        outside = (sx < 0) | (sx > nx) | (sy < 0) | (sy > ny)
        return np.where(outside, -1, idx)
    out = np.full(len(points), -1, dtype=np.int64)
    lam = _barycentric_all(mesh, points)
    inside = lam.min(axis=2) >= -1e-12
    has = inside.any(axis=1)
    out[has] = inside[has].argmax(axis=1)
    return out


def _barycentric_all(mesh: Mesh, points):
    p = mesh.vertices[mesh.cells]
    a = p[:, 0]
    T = np.stack([p[:, 1] - a, p[:, 2] - a], axis=2)  # (nc, 2, 2)
    Tinv = np.linalg.inv(T)
    rel = points[:, None, :] - a[None, :, :]
    l12 = np.einsum("cij,pcj->pci", Tinv, rel)
    return np.concatenate([1.0 - l12.sum(axis=2, keepdims=True), l12], axis=2)


def nested_parent_map(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """For every fine cell, the coarse cell that contains it.

    Raises :class:`NonNestedError` unless every fine triangle lies inside a
    single coarse triangle.
    """
    if coarse is fine:
        return np.arange(fine.n_cells)
    parent = locate_cells(coarse, fine.centroids)
    if np.any(parent < 0):
        raise NonNestedError("fine mesh extends outside the coarse mesh")
    # every fine vertex must lie in the closed parent triangle
    p = coarse.vertices[coarse.cells[parent]]
    a = p[:, 0]
    T = np.stack([p[:, 1] - a, p[:, 2] - a], axis=2)
    Tinv = np.linalg.inv(T)
    tol = 1e-9
    for k in range(3):
        rel = fine.vertices[fine.cells[:, k]] - a
        l12 = np.einsum("cij,cj->ci", Tinv, rel)
        lam = np.concatenate([1.0 - l12.sum(axis=1, keepdims=True), l12], axis=1)
        if lam.min() < -tol:
            raise NonNestedError("fine cells straddle coarse cell boundaries")
    if not np.allclose(np.bincount(parent, weights=fine.cell_area, minlength=coarse.n_cells),
                       coarse.cell_area, rtol=1e-9, atol=0.0):
        raise NonNestedError("fine cells do not tile the coarse cells")
    return parent
