# modules/mesh.py
"""
Structured Lagrange meshes: tensor-product quadrilaterals in 2D, intervals in 1D.

Local node numbering on the reference cell [0, 1]^d is a = ly * (p + 1) + lx.
Facet sides in 2D: 0 bottom, 1 right, 2 top, 3 left. In 1D: 0 left end, 1 right end.
Facets are stored per tag as (element, side) pairs.
"""

from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from modules.errors import EmptyTagError, OutsideDomainError
from modules.logger import logger

INSIDE_TOL = 1e-10

SIDE_NORMALS = {
    1: np.array([[-1.0], [1.0]]),
    2: np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]),
}

# d(reference point)/dt along each side of the unit square
SIDE_DIRECTIONS_2D = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])


def side_local_nodes(dim: int, degree: int, side: int) -> np.ndarray:
    """Local node indices lying on one side of the reference cell, ordered along the side."""
    p = degree
    if dim == 1:
        return np.array([0]) if side == 0 else np.array([p])
    lx = np.arange(p + 1)
    if side == 0:
        return lx
    if side == 1:
        return lx * (p + 1) + p
    if side == 2:
        return p * (p + 1) + lx
    if side == 3:
        return lx * (p + 1)
    raise ValueError(f"Invalid side {side}")


def side_reference_points(dim: int, side: int, t: np.ndarray) -> np.ndarray:
    """Maps facet parameters t in [0, 1] to reference-cell coordinates."""
    if dim == 1:
        return np.array([[0.0]]) if side == 0 else np.array([[1.0]])
    t = np.asarray(t, dtype=float)
    zeros, ones = np.zeros_like(t), np.ones_like(t)
    if side == 0:
        return np.column_stack([t, zeros])
    if side == 1:
        return np.column_stack([ones, t])
    if side == 2:
        return np.column_stack([t, ones])
    if side == 3:
        return np.column_stack([zeros, t])
    raise ValueError(f"Invalid side {side}")


def subdivide(breaks: Iterable[float], h: float) -> np.ndarray:
    """
    Refines sorted breakpoints so that no cell is longer than h.
    Every original breakpoint is kept.
    """
    breaks = np.unique(np.asarray(list(breaks), dtype=float))
    pieces = [breaks[:1]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(np.ceil((b - a) / h - 1e-9)))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(pieces)


# =======================================
# STRUCTURED GRID (INVERSE INDEXING)
# =======================================

class StructuredGrid:
    """Breakpoints and cell-to-element table of a tensor-product mesh."""

    def __init__(self, xs: np.ndarray, ys: Optional[np.ndarray], cell_to_element: np.ndarray):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = None if ys is None else np.asarray(ys, dtype=float)
        self.cell_to_element = np.asarray(cell_to_element, dtype=np.int64)

    @property
    def dim(self) -> int:
        return 1 if self.ys is None else 2

    @staticmethod
    def _axis_candidates(breaks: np.ndarray, x: np.ndarray) -> np.ndarray:
        n = len(breaks) - 1
        i = np.clip(np.searchsorted(breaks, x, side="right") - 1, 0, n - 1)
        return np.stack([np.clip(i - 1, 0, n - 1), i, np.clip(i + 1, 0, n - 1)], axis=1)

    def locate(self, points: np.ndarray, tol: float = INSIDE_TOL) -> Tuple[np.ndarray, np.ndarray]:
        """
        Finds the containing element of each point by binary search on the breakpoints.

        :param points: (npts, dim) physical points
        :return: (elements, local coordinates); element -1 for points outside
        """
        points = np.atleast_2d(points)
        big = np.iinfo(np.int64).max
        cx = self._axis_candidates(self.xs, points[:, 0])
        x = points[:, :1]
        in_x = (self.xs[cx] - tol <= x) & (x <= self.xs[cx + 1] + tol)

        if self.dim == 1:
            elem = np.where(in_x, self.cell_to_element[cx], -1)
            elem = np.where(elem >= 0, elem, big)
            pick = np.argmin(elem, axis=1)
            rows = np.arange(len(points))
            best = elem[rows, pick]
            ix = cx[rows, pick]
            local = ((points[:, 0] - self.xs[ix]) / (self.xs[ix + 1] - self.xs[ix]))[:, None]
        else:
            cy = self._axis_candidates(self.ys, points[:, 1])
            y = points[:, 1:2]
            in_y = (self.ys[cy] - tol <= y) & (y <= self.ys[cy + 1] + tol)
            # 3 x 3 neighborhood of candidate cells per point
            CX = np.repeat(cx[:, None, :], 3, axis=1)
            CY = np.repeat(cy[:, :, None], 3, axis=2)
            inside = in_x[:, None, :] & in_y[:, :, None]
            elem = np.where(inside, self.cell_to_element[CY, CX], -1)
            elem = np.where(elem >= 0, elem, big).reshape(len(points), 9)
            pick = np.argmin(elem, axis=1)
            rows = np.arange(len(points))
            best = elem[rows, pick]
            ix = CX.reshape(len(points), 9)[rows, pick]
            iy = CY.reshape(len(points), 9)[rows, pick]
            local = np.column_stack([
                (points[:, 0] - self.xs[ix]) / (self.xs[ix + 1] - self.xs[ix]),
                (points[:, 1] - self.ys[iy]) / (self.ys[iy + 1] - self.ys[iy]),
            ])
        best = np.where(best == big, -1, best)
        return best.astype(np.int64), np.clip(local, 0.0, 1.0)

    def distance_to_cells(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest active cell."""
        points = np.atleast_2d(points)
        if self.dim == 1:
            ix = np.flatnonzero(self.cell_to_element >= 0)
            lo, hi = self.xs[ix], self.xs[ix + 1]
            dx = np.maximum(np.maximum(lo[None, :] - points[:, :1], 0.0), points[:, :1] - hi[None, :])
            return np.min(np.abs(dx), axis=1)
        iy, ix = np.nonzero(self.cell_to_element >= 0)
        x0, x1 = self.xs[ix], self.xs[ix + 1]
        y0, y1 = self.ys[iy], self.ys[iy + 1]
        dx = np.maximum(np.maximum(x0[None, :] - points[:, :1], 0.0), points[:, :1] - x1[None, :])
        dy = np.maximum(np.maximum(y0[None, :] - points[:, 1:2], 0.0), points[:, 1:2] - y1[None, :])
        return np.min(np.hypot(dx, dy), axis=1)


# =======================================
# MESH
# =======================================

class Mesh:
    """
    Lagrange mesh with tagged boundary facets.

    :param nodes: (N_v, d) node coordinates
    :param connectivity: (N_e, n_lp) node indices per element
    :param degree: polynomial degree of the elements
    :param tags: boundary facet sets, name -> (k, 2) array of (element, side)
    :param grid: inverse-index data for structured meshes
    """

    def __init__(
        self,
        nodes: np.ndarray,
        connectivity: np.ndarray,
        degree: int,
        tags: Optional[Dict[str, np.ndarray]] = None,
        grid: Optional[StructuredGrid] = None,
    ):
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.ndim == 1:
            self.nodes = self.nodes[:, None]
        self.connectivity = np.asarray(connectivity, dtype=np.int64)
        self.degree = int(degree)
        self.tags = {name: np.asarray(f, dtype=np.int64).reshape(-1, 2) for name, f in (tags or {}).items()}
        self.grid = grid
        self._tree = None

        if self.connectivity.size and (self.connectivity.min() < 0 or self.connectivity.max() >= len(self.nodes)):
            raise ValueError("Connectivity references a node index out of range")
        if self.connectivity.shape[1] != (self.degree + 1) ** self.dim:
            raise ValueError(f"Expected {(self.degree + 1) ** self.dim} nodes per element, got {self.connectivity.shape[1]}")

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.connectivity)

    @property
    def nodes_per_element(self) -> int:
        return self.connectivity.shape[1]

    def facets(self, tag: str) -> np.ndarray:
        facets = self.tags.get(tag)
        if facets is None or len(facets) == 0:
            raise EmptyTagError(tag)
        return facets

    def facets_of(self, tags: Iterable[str]) -> np.ndarray:
        """Union of several tags (missing tags are skipped)."""
        parts = [self.tags[t] for t in tags if t in self.tags and len(self.tags[t])]
        if not parts:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate(parts)

    def facet_nodes(self, facets: np.ndarray) -> np.ndarray:
        """(k, p+1) node indices of each facet, ordered along the facet."""
        out = np.empty((len(facets), self.degree + 1 if self.dim == 2 else 1), dtype=np.int64)
        for side in np.unique(facets[:, 1]):
            sel = facets[:, 1] == side
            local = side_local_nodes(self.dim, self.degree, int(side))
            out[sel] = self.connectivity[facets[sel, 0]][:, local]
        return out

    def tag_nodes(self, *tags: str) -> np.ndarray:
        """Sorted unique nodes lying on the given tags."""
        facets = self.facets_of(tags)
        if len(facets) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.unique(self.facet_nodes(facets))

    def facet_segments(self, facets: np.ndarray) -> np.ndarray:
        """(k, 2, 2) end points of 2D facets (straight-sided cells)."""
        ends = self.facet_nodes(facets)[:, [0, -1]]
        return self.nodes[ends]

    def element_centroids(self) -> np.ndarray:
        return self.nodes[self.connectivity].mean(axis=1)

    def mapped(self, mapping) -> "Mesh":
        """
        Mesh with nodes moved by a geometric map (discretize-then-map).
        The inverse index is kept when the map acts axis by axis on the breakpoints.
        """
        nodes = mapping.apply(self.nodes)
        grid = None
        if self.grid is not None and hasattr(mapping, "map_breaks"):
            breaks = mapping.map_breaks(self.grid.xs, self.grid.ys)
            if breaks is not None:
                grid = StructuredGrid(breaks[0], breaks[1], self.grid.cell_to_element)
        return Mesh(nodes, self.connectivity, self.degree, tags=self.tags, grid=grid)

    # =======================================
    # POINT LOCATION
    # =======================================

    def locate(self, points: np.ndarray, strict: bool = True, tol: float = INSIDE_TOL) -> Tuple[np.ndarray, np.ndarray]:
        """
        Containing element and reference coordinates of each point.
        Points within tol of an element boundary count as inside; ties go to the lowest element index.

        :param points: (npts, d) physical points
        :param strict: raise OutsideDomainError for points outside the mesh
        :return: (elements, local coordinates); element -1 marks outside points when not strict
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.grid is not None:
            elements, local = self.grid.locate(points, tol)
        else:
            elements, local = self._locate_unstructured(points, tol)

        if strict and np.any(elements < 0):
            bad = int(np.flatnonzero(elements < 0)[0])
            distance = self._distance_outside(points[bad:bad + 1])[0]
            raise OutsideDomainError(points[bad], distance)
        return elements, local

    def contains(self, points: np.ndarray, tol: float = INSIDE_TOL) -> np.ndarray:
        elements, _ = self.locate(points, strict=False, tol=tol)
        return elements >= 0

    def _distance_outside(self, points: np.ndarray) -> np.ndarray:
        if self.grid is not None:
            return self.grid.distance_to_cells(points)
        centroids = self.element_centroids()
        return np.min(np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2), axis=1)

    def _locate_unstructured(self, points: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
        """KD-tree candidates followed by Newton inversion of the element map."""
        from modules.fe_core import LagrangeBasis

        if self._tree is None:
            self._tree = cKDTree(self.element_centroids())
        basis = LagrangeBasis(self.dim, self.degree)
        k = min(8, self.n_elements)
        _, candidates = self._tree.query(points, k=k)
        candidates = np.sort(np.atleast_2d(candidates).reshape(len(points), k), axis=1)

        elements = np.full(len(points), -1, dtype=np.int64)
        local = np.zeros((len(points), self.dim))
        for p, x in enumerate(points):
            for e in candidates[p]:
                X = self.nodes[self.connectivity[e]]
                xi = np.full(self.dim, 0.5)
                for _ in range(25):
                    N = basis.values(xi[None, :])[0]
                    dN = basis.gradients(xi[None, :])[0]
                    J = X.T @ dN
                    step = np.linalg.solve(J, X.T @ N - x)
                    xi -= step
                    if np.linalg.norm(step) < 1e-14:
                        break
                if np.all(xi >= -tol) and np.all(xi <= 1.0 + tol):
                    elements[p] = e
                    local[p] = np.clip(xi, 0.0, 1.0)
                    break
        return elements, local


# =======================================
# GENERATORS
# =======================================

def structured_quad_mesh(
    xs: np.ndarray,
    ys: np.ndarray,
    degree: int = 2,
    active: Optional[np.ndarray] = None,
    classify: Optional[Callable[[int, np.ndarray], Optional[str]]] = None,
) -> Mesh:
    """
    Tensor-product quadrilateral mesh on the breakpoints xs x ys.

    :param active: (ny, nx) mask of cells to keep (holes are inactive cells)
    :param classify: classify(side, facet_midpoint) -> tag name or None for boundary facets
    """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    nx, ny, p = len(xs) - 1, len(ys) - 1, degree
    if active is None:
        active = np.ones((ny, nx), dtype=bool)
    active = np.asarray(active, dtype=bool)

    # node lines
    t = np.arange(p) / p
    xn = np.concatenate([xs[:-1, None] + t[None, :] * np.diff(xs)[:, None], xs[-1:, None]], axis=None)
    yn = np.concatenate([ys[:-1, None] + t[None, :] * np.diff(ys)[:, None], ys[-1:, None]], axis=None)

    used = np.zeros((p * ny + 1, p * nx + 1), dtype=bool)
    iy_e, ix_e = np.nonzero(active)
    for iy, ix in zip(iy_e, ix_e):
        used[p * iy:p * iy + p + 1, p * ix:p * ix + p + 1] = True
    node_id = np.full(used.shape, -1, dtype=np.int64)
    node_id[used] = np.arange(int(used.sum()))
    X, Y = np.meshgrid(xn, yn)
    nodes = np.column_stack([X[used], Y[used]])

    LY = np.repeat(np.arange(p + 1), p + 1)
    LX = np.tile(np.arange(p + 1), p + 1)
    connectivity = node_id[p * iy_e[:, None] + LY[None, :], p * ix_e[:, None] + LX[None, :]]

    cell_to_element = np.full((ny, nx), -1, dtype=np.int64)
    cell_to_element[active] = np.arange(len(iy_e))

    tags: Dict[str, list] = {}
    if classify is not None:
        padded = np.pad(active, 1)
        outside = [
            ~padded[:-2, 1:-1],  # below
            ~padded[1:-1, 2:],  # right
            ~padded[2:, 1:-1],  # above
            ~padded[1:-1, :-2],  # left
        ]
        xm = 0.5 * (xs[:-1] + xs[1:])
        ym = 0.5 * (ys[:-1] + ys[1:])
        records = []
        for side in range(4):
            for iy, ix in zip(*np.nonzero(active & outside[side])):
                if side == 0:
                    mid = np.array([xm[ix], ys[iy]])
                elif side == 1:
                    mid = np.array([xs[ix + 1], ym[iy]])
                elif side == 2:
                    mid = np.array([xm[ix], ys[iy + 1]])
                else:
                    mid = np.array([xs[ix], ym[iy]])
                name = classify(side, mid)
                if name is not None:
                    records.append((name, int(cell_to_element[iy, ix]), side))
        for name, e, side in sorted(records, key=lambda r: (r[0], r[1], r[2])):
            tags.setdefault(name, []).append((e, side))

    mesh = Mesh(
        nodes,
        connectivity,
        degree,
        tags={k: np.array(v) for k, v in tags.items()},
        grid=StructuredGrid(xs, ys, cell_to_element),
    )
    logger.debug(f"[MESH] Quad mesh P{degree}: {mesh.n_elements} elements, {mesh.n_nodes} nodes, tags={sorted(mesh.tags)}")
    return mesh


def interval_mesh(xs: np.ndarray, degree: int = 2) -> Mesh:
    """1D Lagrange mesh on breakpoints xs with tags 'left' and 'right'."""
    xs = np.asarray(xs, dtype=float)
    nx, p = len(xs) - 1, degree
    t = np.arange(p) / p
    xn = np.concatenate([xs[:-1, None] + t[None, :] * np.diff(xs)[:, None], xs[-1:, None]], axis=None)
    connectivity = p * np.arange(nx)[:, None] + np.arange(p + 1)[None, :]
    tags = {"left": np.array([[0, 0]]), "right": np.array([[nx - 1, 1]])}
    return Mesh(xn[:, None], connectivity, degree, tags=tags, grid=StructuredGrid(xs, None, np.arange(nx)))
