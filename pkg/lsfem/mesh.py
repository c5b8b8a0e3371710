"""Conforming triangulations of the square (-1, 1)² with oriented edges.

Every edge carries a global orientation from its lower to its higher vertex
index; its global normal is the tangent rotated clockwise. Local edge i of a
triangle is the edge opposite local vertex i, traversed from vertex i+1 to
vertex i+2 (counterclockwise), so its outward normal equals the global normal
times the orientation sign stored in ``tri_edge_signs``.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lsfem.exceptions import MeshError, MeshFormatError

logger = logging.getLogger(__name__)

INTERIOR = 0
DIRICHLET = 1
NEUMANN = 2

# Relative area below which a triangle counts as degenerate.
_AREA_TOLERANCE = 1e-14


@dataclass(frozen=True, eq=False)
class Mesh:
    """An immutable oriented triangulation.

    Attributes:
        vertices: Vertex coordinates, shape (V, 2)
        triangles: Counterclockwise vertex triples, shape (T, 3)
        edges: Vertex pairs with the lower index first, shape (E, 2)
        tri_edges: Global edge index of local edge i (opposite vertex i), shape (T, 3)
        tri_edge_signs: +1 where the local outward normal equals the global
            edge normal, -1 otherwise, shape (T, 3)
        edge_triangles: The one or two triangles sharing each edge, -1 padded,
            shape (E, 2)
        edge_tags: INTERIOR, DIRICHLET or NEUMANN per edge, shape (E,)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_edge_signs: np.ndarray
    edge_triangles: np.ndarray
    edge_tags: np.ndarray

    @classmethod
    def from_triangles(
        cls,
        vertices: np.ndarray,
        triangles: np.ndarray,
        neumann: Iterable[tuple[int, int]] | None = None,
    ) -> Mesh:
        """Build a mesh from vertex coordinates and vertex triples.

        Clockwise triangles are reoriented. All boundary edges are tagged
        Dirichlet except the vertex pairs listed in ``neumann``.

        Raises:
            MeshError: If a vertex reference is out of range, a triangle is
                degenerate, or an edge is shared by more than two triangles
        """
        vertices = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 2)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) == 0:
            raise MeshError("at least one triangle")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            bad = int(np.flatnonzero((triangles < 0) | (triangles >= len(vertices)))[0])
            raise MeshError(
                "vertex references in range",
                f"triangle {bad // 3} refers to vertex {triangles.flat[bad]}, "
                f"only {len(vertices)} vertices exist",
            )

        area = _signed_areas(vertices, triangles)
        scale = max(float(np.ptp(vertices, axis=0).max()), 1.0) ** 2
        if np.any(np.abs(area) <= _AREA_TOLERANCE * scale):
            bad = int(np.flatnonzero(np.abs(area) <= _AREA_TOLERANCE * scale)[0])
            raise MeshError("positive triangle area", f"triangle {bad} is degenerate")
        flip = area < 0
        if np.any(flip):
            logger.debug("reorienting %d clockwise triangles", int(flip.sum()))
            triangles[flip] = triangles[flip][:, [0, 2, 1]]

        local = np.stack(
            [triangles[:, [(i + 1) % 3, (i + 2) % 3]] for i in range(3)], axis=1
        )
        keys = np.sort(local, axis=2).reshape(-1, 2)
        edges, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        inverse = np.asarray(inverse).reshape(-1)
        if counts.max() > 2:
            bad = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(
                "each edge shared by at most two triangles",
                f"edge {tuple(edges[bad])} is shared by {counts[bad]}",
            )
        tri_edges = inverse.reshape(-1, 3)
        signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1).astype(np.int8)

        owner = np.repeat(np.arange(len(triangles)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_triangles = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_triangles[sorted_edges[first], 0] = owner[order][first]
        edge_triangles[sorted_edges[~first], 1] = owner[order][~first]

        flat_signs = signs.reshape(-1)[order]
        shared = ~first
        if np.any(flat_signs[shared] * np.roll(flat_signs, 1)[shared] != -1):
            raise MeshError(
                "opposite orientation signs across interior edges",
                "neighbouring triangles overlap or are folded",
            )

        tags = np.where(counts == 1, DIRICHLET, INTERIOR).astype(np.int8)
        if neumann is not None:
            lookup = {(int(a), int(b)): e for e, (a, b) in enumerate(edges)}
            for a, b in neumann:
                key = (min(a, b), max(a, b))
                edge = lookup.get(key)
                if edge is None or tags[edge] == INTERIOR:
                    raise MeshError(
                        "Neumann edges lie on the boundary",
                        f"vertex pair {key} is not a boundary edge",
                    )
                tags[edge] = NEUMANN

        for array in (vertices, triangles, edges, tri_edges, signs, edge_triangles, tags):
            array.setflags(write=False)
        return cls(vertices, triangles, edges, tri_edges, signs, edge_triangles, tags)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tags != INTERIOR)

    @property
    def edge_lengths(self) -> np.ndarray:
        delta = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(delta[:, 0], delta[:, 1])

    @property
    def h(self) -> float:
        """Mesh size: the longest edge of the triangulation."""
        return float(self.edge_lengths.max())

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    def edge_normals(self) -> np.ndarray:
        """Global edge normals scaled by edge length (tangent rotated clockwise)."""
        delta = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.column_stack([delta[:, 1], -delta[:, 0]])

    def jacobians(self, cells: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Affine map Jacobians J (nc, 2, 2) and determinants (nc,).

        Column j of J is the edge vector from local vertex 0 to local vertex j+1.
        """
        tris = self.triangles if cells is None else self.triangles[cells]
        p0 = self.vertices[tris[:, 0]]
        jac = np.stack(
            [self.vertices[tris[:, 1]] - p0, self.vertices[tris[:, 2]] - p0], axis=-1
        )
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        return jac, det

    def map_points(self, xy: np.ndarray, cells: np.ndarray | None = None) -> np.ndarray:
        """Map reference points (nq, 2) into every selected cell: (nc, nq, 2)."""
        tris = self.triangles if cells is None else self.triangles[cells]
        jac, _ = self.jacobians(cells)
        p0 = self.vertices[tris[:, 0]]
        return p0[:, None, :] + np.einsum("cij,qj->cqi", jac, xy)

    def validate(self, expected_edges: int | None = None) -> None:
        """Check the global invariants that construction alone does not enforce.

        Raises:
            MeshError: Naming the first violated invariant
        """
        if expected_edges is not None and expected_edges != self.num_edges:
            raise MeshError(
                "edge count matches the header",
                f"header declares {expected_edges}, triangles define {self.num_edges}",
            )
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError(
                "every vertex belongs to a triangle",
                f"vertex {int(np.flatnonzero(~used)[0])} is unused",
            )
        euler = self.num_vertices - self.num_edges + self.num_triangles
        if euler != 1:
            raise MeshError(
                "Euler relation V - E + T = 1",
                f"V - E + T = {euler}; the triangulation is not a simply connected disk",
            )


def _signed_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


def build_structured(n: int) -> Mesh:
    """Uniform n×n grid on (-1, 1)², squares cut from lower-left to upper-right.

    Vertex j*(n+1)+i sits at (-1 + 2i/n, -1 + 2j/n); for even n the line x = 0
    is a union of mesh edges.

    Raises:
        MeshError: If n < 1
    """
    if n < 1:
        raise MeshError("n >= 1", f"got n={n}")
    coords = (2.0 * np.arange(n + 1) - n) / n
    x, y = np.meshgrid(coords, coords, indexing="xy")
    vertices = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    a = (j * (n + 1) + i).ravel()
    b, c, d = a + 1, a + n + 2, a + n + 1
    triangles = np.stack(
        [np.column_stack([a, b, c]), np.column_stack([a, c, d])], axis=1
    ).reshape(-1, 3)
    mesh = Mesh.from_triangles(vertices, triangles)
    logger.debug("structured mesh n=%d: V=%d E=%d T=%d", n, mesh.num_vertices,
                 mesh.num_edges, mesh.num_triangles)
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children through edge midpoints."""
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    v0, v1, v2 = mesh.triangles.T
    m0, m1, m2 = (nv + mesh.tri_edges).T
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    neumann = []
    for edge in np.flatnonzero(mesh.edge_tags == NEUMANN):
        a, b = mesh.edges[edge]
        neumann.extend([(int(a), nv + int(edge)), (nv + int(edge), int(b))])
    return Mesh.from_triangles(vertices, children, neumann=neumann or None)


def load_mesh(path: str | Path) -> Mesh:
    """Read a mesh in the plain triangle-list format.

    Line 1 holds ``V E T``; V lines ``x y`` and T lines ``v0 v1 v2`` (0-based)
    follow. An optional trailing section ``N count`` lists Neumann boundary
    edges as ``a b`` vertex pairs. Blank lines and ``#`` comments are ignored.

    Raises:
        MeshFormatError: On malformed input, with the 1-based line number
        MeshError: If the triangulation violates a mesh invariant
    """
    rows = []
    for number, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            rows.append((number, text.split()))
    if not rows:
        raise MeshFormatError(1, "empty mesh file")

    def ints(number: int, fields: list[str], count: int) -> list[int]:
        if len(fields) != count:
            raise MeshFormatError(number, f"expected {count} integers, got {len(fields)}")
        try:
            return [int(value) for value in fields]
        except ValueError:
            raise MeshFormatError(number, f"expected integers, got {' '.join(fields)}") from None

    number, header = rows[0]
    nv, ne, nt = ints(number, header, 3)
    if len(rows) < 1 + nv + nt:
        last = rows[-1][0]
        raise MeshFormatError(last, f"file ends early: expected {nv} vertices and {nt} triangles")
    vertices = np.empty((nv, 2))
    for index, (number, fields) in enumerate(rows[1 : 1 + nv]):
        if len(fields) != 2:
            raise MeshFormatError(number, f"expected 2 coordinates, got {len(fields)}")
        try:
            vertices[index] = [float(value) for value in fields]
        except ValueError:
            raise MeshFormatError(number, f"invalid coordinates {' '.join(fields)}") from None
    triangles = [ints(number, fields, 3) for number, fields in rows[1 + nv : 1 + nv + nt]]

    neumann = None
    rest = rows[1 + nv + nt :]
    if rest:
        number, fields = rest[0]
        if fields[0] != "N" or len(fields) != 2:
            raise MeshFormatError(number, "unexpected content after the triangle list")
        count = ints(number, fields[1:], 1)[0]
        pairs = rest[1:]
        if len(pairs) != count:
            raise MeshFormatError(number, f"Neumann section declares {count} edges, found {len(pairs)}")
        neumann = [tuple(ints(n, f, 2)) for n, f in pairs]

    mesh = Mesh.from_triangles(vertices, triangles, neumann=neumann)
    mesh.validate(expected_edges=ne)
    logger.info("loaded %s: V=%d E=%d T=%d", path, nv, mesh.num_edges, nt)
    return mesh


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    """Write ``mesh`` in the format read by :func:`load_mesh`."""
    lines = [f"{mesh.num_vertices} {mesh.num_edges} {mesh.num_triangles}"]
    lines.extend(f"{x!r} {y!r}" for x, y in mesh.vertices.tolist())
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist())
    neumann = np.flatnonzero(mesh.edge_tags == NEUMANN)
    if len(neumann):
        lines.append(f"N {len(neumann)}")
        lines.extend(f"{a} {b}" for a, b in mesh.edges[neumann].tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
