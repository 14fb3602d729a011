"""Quadrilateral meshes in the plane (coordinates in mm)."""

from dataclasses import dataclass, field

import numpy as np

from glic.errors import InvalidInputError


@dataclass
class Mesh:
    """Four-node quadrilateral mesh.

    ``elements`` holds counter-clockwise connectivity; ``node_sets`` and
    ``element_sets`` map names to index arrays.
    """

    nodes: np.ndarray
    elements: np.ndarray
    node_sets: dict = field(default_factory=dict)
    element_sets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float).reshape(-1, 2)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 4)
        self.validate()

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return 2 * len(self.nodes)

    def validate(self):
        if not np.all(np.isfinite(self.nodes)):
            raise InvalidInputError("mesh has non-finite nodal coordinates")
        if self.elements.size and (
            self.elements.min() < 0 or self.elements.max() >= self.n_nodes
        ):
            raise InvalidInputError("element connectivity references a missing node")
        for name, idx in self.element_sets.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_elements):
                raise InvalidInputError(f"element set {name!r} references a missing element")
        for name, idx in self.node_sets.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= self.n_nodes):
                raise InvalidInputError(f"node set {name!r} references a missing node")
        if self.elements.size:
            from glic.fem.element import jacobian_determinants

            det = jacobian_determinants(self.nodes[self.elements])
            if np.any(det <= 0.0):
                bad = np.unique(np.nonzero(det <= 0.0)[0])
                raise InvalidInputError(
                    f"non-positive Jacobian in elements {bad[:10].tolist()}"
                )

    def element_centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    def nodes_in_box(self, xmin, xmax, ymin, ymax, tol=1e-9):
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        mask = (x >= xmin - tol) & (x <= xmax + tol) & (y >= ymin - tol) & (y <= ymax + tol)
        return np.nonzero(mask)[0]

    def submesh(self, element_ids):
        """Extract the elements ``element_ids`` with compacted node numbering.

        Returns the new mesh and the array mapping new node ids to old ones.
        """
        element_ids = np.asarray(element_ids, dtype=np.int64)
        conn = self.elements[element_ids]
        used = np.unique(conn)
        renumber = np.full(self.n_nodes, -1, dtype=np.int64)
        renumber[used] = np.arange(len(used))
        return Mesh(self.nodes[used], renumber[conn]), used


def rectangular_grid(x0, y0, width, height, nx, ny):
    """Structured ``nx`` by ``ny`` grid over ``[x0, x0+width] x [y0, y0+height]``.

    Nodes are numbered row by row from the bottom-left corner.
    """
    if nx < 1 or ny < 1:
        raise InvalidInputError("grid needs at least one element per direction")
    xs = x0 + width * np.arange(nx + 1) / nx
    ys = y0 + height * np.arange(ny + 1) / ny
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return Mesh(nodes, elements)


def remove_disk(mesh, center, radius):
    """Drop elements whose centroid lies inside a disk, then unused nodes."""
    c = mesh.element_centroids()
    keep = np.hypot(c[:, 0] - center[0], c[:, 1] - center[1]) > radius
    if keep.all():
        return mesh
    sub, _ = mesh.submesh(np.nonzero(keep)[0])
    return sub
