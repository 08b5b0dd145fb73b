import math
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from .errors import MeshError

__all__ = ("BoundaryTag", "Mesh", "build_lshape_mesh", "build_rectangle_mesh", "read_mesh", "write_mesh")

LSHAPE_AREA = 3.0


class BoundaryTag(IntEnum):
    """
    Integer enumeration labelling each boundary edge.
    """

    NEUMANN = 0
    DIRICHLET_LEFT = 1
    DIRICHLET_RIGHT = 2


class Mesh:
    """
    A conforming triangulation with tagged boundary edges and per-triangle subdomain labels.

    Meshes are immutable after construction: all arrays are read-only, so a mesh can be shared between threads.
    """

    __slots__ = ("nodes", "triangles", "boundary_edges", "boundary_tags", "subdomains")

    def __init__(self, nodes, triangles, boundary_edges, boundary_tags, subdomains, validate=True):
        """
        :param nodes: (M, 2) node coordinates.
        :param triangles: (T, 3) node indices, counter-clockwise.
        :param boundary_edges: (E, 2) node indices of boundary edges, oriented along the boundary.
        :param boundary_tags: (E,) :class:`BoundaryTag` values.
        :param subdomains: (T,) subdomain labels in {1, 2, 3}.
        :param bool validate: Whether to check the mesh invariants.
        :raises MeshError: if validation fails.
        """
        self.nodes = _frozen(np.asarray(nodes, dtype=float).reshape(-1, 2))
        self.triangles = _frozen(np.asarray(triangles, dtype=np.int64).reshape(-1, 3))
        self.boundary_edges = _frozen(np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2))
        self.boundary_tags = _frozen(np.asarray(boundary_tags, dtype=np.int64).reshape(-1))
        self.subdomains = _frozen(np.asarray(subdomains, dtype=np.int64).reshape(-1))
        if validate:
            self.validate()

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def signed_areas(self) -> np.ndarray:
        """The signed area of every triangle (positive for counter-clockwise orientation)."""
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def area(self) -> float:
        return float(np.sum(self.signed_areas))

    @property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def tagged_nodes(self, tag: BoundaryTag) -> np.ndarray:
        """
        Returns the sorted indices of all nodes lying on an edge with the given tag.

        :param BoundaryTag tag: The boundary tag.
        :rtype: numpy.ndarray
        """
        return np.unique(self.boundary_edges[self.boundary_tags == tag])

    def validate(self):
        """
        Checks the mesh invariants.

        :raises MeshError: if a triangle references a missing node, has non-positive area, or if the boundary
            edges do not form closed loops.
        """
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.num_nodes):
            raise MeshError("A triangle references a node that does not exist.")
        if len(self.subdomains) != self.num_triangles:
            raise MeshError("Subdomain labels must be given for every triangle.")
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshError("Boundary tags must be given for every boundary edge.")
        if np.any(self.signed_areas <= 0):
            raise MeshError("Every triangle must have strictly positive signed area.")
        # closed loops: every boundary node starts exactly one edge and ends exactly one edge
        starts = np.bincount(self.boundary_edges[:, 0], minlength=self.num_nodes)
        ends = np.bincount(self.boundary_edges[:, 1], minlength=self.num_nodes)
        if np.any(starts != ends) or np.any(starts > 1):
            raise MeshError("Boundary edges do not form closed loops.")

    def permute_nodes(self, perm) -> "Mesh":
        """
        Returns the same mesh with nodes renumbered, so that new node ``k`` is old node ``perm[k]``.

        :param perm: A permutation of ``range(num_nodes)``.
        :rtype: Mesh
        """
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return Mesh(
            self.nodes[perm],
            inverse[self.triangles],
            inverse[self.boundary_edges],
            self.boundary_tags,
            self.subdomains,
        )

    def describe(self) -> dict:
        """Summary statistics used by the ``mesh-info`` command."""
        return {
            "nodes": self.num_nodes,
            "triangles": self.num_triangles,
            "area": self.area,
            "boundary_edges": {tag.name: int(np.sum(self.boundary_tags == tag)) for tag in BoundaryTag},
            "subdomain_triangles": {int(s): int(np.sum(self.subdomains == s)) for s in np.unique(self.subdomains)},
        }

    def __repr__(self):
        return f"<Mesh nodes={self.num_nodes} triangles={self.num_triangles}>"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _cells_per_unit(h: float) -> int:
    if not 0 < h <= 1:
        raise ValueError("Target edge length h must satisfy 0 < h <= 1.")
    n = math.ceil(1.0 / h - 1e-12)
    # even so that the subdomain interface y = 0.5 is a mesh line
    return n + (n % 2)


def _structured_mesh(
    nx: int,
    ny: int,
    spacing: float,
    keep_cell: Callable[[int, int], bool],
    tagger: Callable[[np.ndarray], int],
    labeller: Callable[[np.ndarray], int],
) -> Mesh:
    cells = [(i, j) for j in range(ny) for i in range(nx) if keep_cell(i, j)]
    used = set()
    for i, j in cells:
        used.update(((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)))
    # lexicographic by (y, x)
    ordered = sorted(used, key=lambda ij: (ij[1], ij[0]))
    index = {ij: k for k, ij in enumerate(ordered)}
    nodes = np.array([(i * spacing, j * spacing) for i, j in ordered], dtype=float)

    triangles = []
    for i, j in cells:
        p00, p10, p01, p11 = index[i, j], index[i + 1, j], index[i, j + 1], index[i + 1, j + 1]
        triangles.append((p00, p10, p11))
        triangles.append((p00, p11, p01))
    triangles = np.array(triangles, dtype=np.int64)

    # boundary edges are the directed triangle edges whose reverse is not present
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    present = {(int(a), int(b)) for a, b in directed}
    boundary = np.array([(a, b) for a, b in directed if (int(b), int(a)) not in present], dtype=np.int64)
    midpoints = nodes[boundary].mean(axis=1)
    tags = np.array([tagger(m) for m in midpoints], dtype=np.int64)
    subdomains = np.array([labeller(c) for c in nodes[triangles].mean(axis=1)], dtype=np.int64)
    return Mesh(nodes, triangles, boundary, tags, subdomains)


def lshape_subdomain(point) -> int:
    """
    Returns the subdomain label of a point in the L-shape: 1 for x < 1, 2 for the lower strip y < 0.5 of the
    right leg, 3 for the upper strip of the right leg.
    """
    x, y = point
    if x < 1.0:
        return 1
    return 2 if y < 0.5 else 3


def _lshape_tag(midpoint) -> int:
    x, y = midpoint
    if abs(x - 2.0) < 1e-12:
        return BoundaryTag.DIRICHLET_RIGHT
    if abs(y - 2.0) < 1e-12:
        return BoundaryTag.DIRICHLET_LEFT
    return BoundaryTag.NEUMANN


def build_lshape_mesh(h: float) -> Mesh:
    """
    Builds a structured, right-triangle mesh of the L-shape ``[0,2]^2 \\ (1,2)x(1,2)``.

    The upper edge ``y = 2`` is tagged :attr:`BoundaryTag.DIRICHLET_LEFT`, the right edge ``x = 2`` is tagged
    :attr:`BoundaryTag.DIRICHLET_RIGHT`, all other edges are Neumann. Triangles are labelled with the subdomains of
    :func:`lshape_subdomain`.

    >>> build_lshape_mesh(1.0).area
    3.0

    :param float h: Target edge length, ``0 < h <= 1``.
    :rtype: Mesh
    :raises ValueError: if h is out of range.
    """
    n = _cells_per_unit(h)
    return _structured_mesh(
        2 * n,
        2 * n,
        1.0 / n,
        keep_cell=lambda i, j: not (i >= n and j >= n),
        tagger=_lshape_tag,
        labeller=lshape_subdomain,
    )


def build_rectangle_mesh(h: float, width: float = 1.0, height: float = 1.0) -> Mesh:
    """
    Builds a structured mesh of ``[0,width] x [0,height]`` with every edge Dirichlet (left and top edges tagged
    :attr:`BoundaryTag.DIRICHLET_LEFT`, right and bottom edges :attr:`BoundaryTag.DIRICHLET_RIGHT`) and a single
    subdomain. Width and height must be integer multiples of the resulting spacing.

    :param float h: Target edge length, ``0 < h <= 1``.
    :param float width: Rectangle width.
    :param float height: Rectangle height.
    :rtype: Mesh
    """
    n = _cells_per_unit(h)
    nx, ny = round(width * n), round(height * n)
    if nx < 1 or ny < 1 or abs(nx - width * n) > 1e-9 or abs(ny - height * n) > 1e-9:
        raise ValueError("Rectangle sides must be multiples of the mesh spacing.")

    def tagger(midpoint):
        x, y = midpoint
        if abs(x) < 1e-12 or abs(y - height) < 1e-12:
            return BoundaryTag.DIRICHLET_LEFT
        return BoundaryTag.DIRICHLET_RIGHT

    return _structured_mesh(nx, ny, 1.0 / n, keep_cell=lambda i, j: True, tagger=tagger, labeller=lambda c: 1)


# ===== plain-text mesh listing =====
def write_mesh(mesh: Mesh, path):
    """
    Writes a mesh as a plain-text listing of nodes, triangles (with subdomain) and tagged boundary edges.

    :param Mesh mesh: The mesh to write.
    :param path: Destination file path.
    """
    with open(path, "w") as f:
        f.write(f"nodes {mesh.num_nodes}\n")
        for x, y in mesh.nodes:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        f.write(f"triangles {mesh.num_triangles}\n")
        for (a, b, c), s in zip(mesh.triangles, mesh.subdomains):
            f.write(f"{a} {b} {c} {s}\n")
        f.write(f"boundary {len(mesh.boundary_edges)}\n")
        for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
            f.write(f"{a} {b} {BoundaryTag(t).name}\n")


def read_mesh(path) -> Mesh:
    """
    Reads a mesh written by :func:`write_mesh`.

    :param path: Source file path.
    :rtype: Mesh
    :raises MeshError: if the file is malformed.
    """
    with open(path) as f:
        lines = [line.split() for line in f if line.strip() and not line.startswith("#")]
    try:
        pos = 0

        def section(name: str, width: Optional[int]):
            nonlocal pos
            header = lines[pos]
            if header[0] != name:
                raise MeshError(f"Expected section '{name}', got '{header[0]}'.")
            count = int(header[1])
            rows = lines[pos + 1 : pos + 1 + count]
            pos += 1 + count
            if len(rows) != count or (width is not None and any(len(r) != width for r in rows)):
                raise MeshError(f"Section '{name}' is truncated or malformed.")
            return rows

        nodes = [[float(v) for v in r] for r in section("nodes", 2)]
        tris = section("triangles", 4)
        bnd = section("boundary", 3)
    except (IndexError, ValueError) as e:
        raise MeshError(f"Malformed mesh file: {e}")
    try:
        tags = [BoundaryTag[r[2]] for r in bnd]
    except KeyError as e:
        raise MeshError(f"Unknown boundary tag {e}")
    return Mesh(
        nodes,
        [[int(v) for v in r[:3]] for r in tris],
        [[int(v) for v in r[:2]] for r in bnd],
        tags,
        [int(r[3]) for r in tris],
    )
