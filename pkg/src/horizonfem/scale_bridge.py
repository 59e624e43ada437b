"""Scale bridging: map child quadrature points back onto the parent mesh.

Three steps per point: the child map already gives Euclidean
coordinates, a uniform background grid proposes candidate parent
elements, and the inverse geometric map recovers reference coordinates
in the chosen element.  Ties on shared edges resolve to the lowest
element id, so results are deterministic.  The batch path is fully
vectorized over (point, candidate) pairs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BridgingError, NumericError
from .geometry import ParentMesh

_REF_TOL_GEOM = 1e-9  # physical inflation absorbed into reference-space tests
_NEWTON_ITERS = 20
_NEWTON_TOL = 1e-12


@dataclass(frozen=True)
class BridgedPoint:
    parent_element: int
    local_coords: tuple
    global_coords: tuple


class SpatialIndex:
    """Uniform background grid listing parent elements per cell.

    Cell size defaults to the mean element diameter; every element is
    registered in every cell its bounding box overlaps, so queries never
    miss a containing element.  Candidate lists are stored ascending, so
    the first containment hit is also the lowest element id.
    """

    def __init__(self, mesh: ParentMesh, cell_size=None):
        self.mesh = mesh
        lo = mesh.bbox_min.copy()
        hi = mesh.bbox_max.copy()
        size = cell_size or mesh.mean_element_diameter
        if size <= 0:
            size = float(max(hi - lo)) or 1.0
        pad = 1e-9 * max(float(np.max(hi - lo)), 1.0)
        lo = lo - pad
        hi = hi + pad
        self.origin = lo
        self.cell = float(size)
        self.nx = max(1, int(np.ceil((hi[0] - lo[0]) / size)))
        self.ny = max(1, int(np.ceil((hi[1] - lo[1]) / size)))
        i0 = np.clip(((mesh.elem_bbox_min - lo) / size).astype(int), 0, [self.nx - 1, self.ny - 1])
        i1 = np.clip(((mesh.elem_bbox_max - lo) / size).astype(int), 0, [self.nx - 1, self.ny - 1])
        spans = (i1 - i0 + 1).prod(axis=1)
        owners = np.repeat(np.arange(mesh.n_elements), spans)
        cells = np.empty(spans.sum(), dtype=int)
        pos = 0
        for e in range(mesh.n_elements):
            gx = np.arange(i0[e, 0], i1[e, 0] + 1)
            gy = np.arange(i0[e, 1], i1[e, 1] + 1)
            cc = (gx[:, None] * self.ny + gy[None, :]).ravel()
            cells[pos : pos + len(cc)] = cc
            pos += len(cc)
        order = np.lexsort((owners, cells))
        self._cells_sorted = cells[order]
        self._owners_sorted = owners[order]
        self._starts = np.searchsorted(self._cells_sorted, np.arange(self.nx * self.ny + 1))
        # per-element geometry caches for the batched inverse maps
        corners = mesh.element_corner_coords(np.arange(mesh.n_elements))
        p0, p1, p2, p3 = (corners[:, k] for k in range(4))
        self._is_tri = mesh.corner_count == 3
        self._tri_a = p0
        self._tri_M = np.stack([p1 - p0, p2 - p0], axis=-1)  # columns are edges
        self._c0 = 0.25 * (p0 + p1 + p2 + p3)
        self._c1 = 0.25 * (-p0 + p1 + p2 - p3)
        self._c2 = 0.25 * (-p0 - p1 + p2 + p3)
        self._c3 = 0.25 * (p0 - p1 + p2 - p3)
        ext = np.max(mesh.elem_bbox_max - mesh.elem_bbox_min, axis=1)
        self._ref_tol = 2.0 * _REF_TOL_GEOM / np.maximum(ext, 1e-300)

    def cell_of(self, pts):
        ix = np.clip(((pts[:, 0] - self.origin[0]) / self.cell).astype(int), 0, self.nx - 1)
        iy = np.clip(((pts[:, 1] - self.origin[1]) / self.cell).astype(int), 0, self.ny - 1)
        return ix * self.ny + iy

    def candidates(self, flat_cell):
        s, e = self._starts[flat_cell], self._starts[flat_cell + 1]
        return self._owners_sorted[s:e]


def _solve2(m00, m01, m10, m11, rx, ry):
    det = m00 * m11 - m01 * m10
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = (m11 * rx - m01 * ry) / det
        sy = (-m10 * rx + m00 * ry) / det
    return sx, sy, det


def _quad_inverse_batch(c0, c1, c2, c3, pts):
    """Invert bilinear maps for per-row coefficient arrays (n, 2)."""
    r = pts - c0
    xi, eta, det = _solve2(c1[:, 0], c2[:, 0], c1[:, 1], c2[:, 1], r[:, 0], r[:, 1])
    if np.any(det == 0):
        raise NumericError("degenerate quadrilateral in inverse map")
    scale = np.maximum(np.abs(c1).max(axis=1), np.abs(c2).max(axis=1))
    curved = np.abs(c3).max(axis=1) > 1e-13 * scale
    if np.any(curved):
        idx = np.nonzero(curved)[0]
        x, y = xi[idx], eta[idx]
        for _ in range(_NEWTON_ITERS):
            resx = c0[idx, 0] + c1[idx, 0] * x + c2[idx, 0] * y + c3[idx, 0] * x * y - pts[idx, 0]
            resy = c0[idx, 1] + c1[idx, 1] * x + c2[idx, 1] * y + c3[idx, 1] * x * y - pts[idx, 1]
            dx, dy, det = _solve2(
                c1[idx, 0] + c3[idx, 0] * y,
                c2[idx, 0] + c3[idx, 0] * x,
                c1[idx, 1] + c3[idx, 1] * y,
                c2[idx, 1] + c3[idx, 1] * x,
                resx,
                resy,
            )
            x = x - dx
            y = y - dy
            if max(np.max(np.abs(dx)), np.max(np.abs(dy))) < _NEWTON_TOL:
                break
        xi[idx], eta[idx] = x, y
    return np.column_stack([xi, eta])


def _tri_inverse_batch(a, M, pts):
    r = pts - a
    xi, eta, det = _solve2(M[:, 0, 0], M[:, 0, 1], M[:, 1, 0], M[:, 1, 1], r[:, 0], r[:, 1])
    if np.any(det == 0):
        raise NumericError("degenerate triangle in inverse map")
    return np.column_stack([xi, eta])


def bridge_many(index: SpatialIndex, mesh: ParentMesh, points):
    """Locate many points at once; returns (element ids, reference coords).

    Raises BridgingError (with the first offending point and its nearest
    element) if any point falls outside every candidate element.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    cells = index.cell_of(pts)
    starts = index._starts[cells]
    counts = index._starts[cells + 1] - starts
    total = int(counts.sum())
    if total == 0:
        centres = 0.5 * (mesh.elem_bbox_min + mesh.elem_bbox_max)
        nearest = int(np.argmin(np.linalg.norm(centres - pts[0], axis=1)))
        raise BridgingError(pts[0], nearest_element=nearest)
    pair_pt = np.repeat(np.arange(n), counts)
    offs = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    pair_elem = index._owners_sorted[np.repeat(starts, counts) + offs]

    xi = np.empty((total, 2))
    is_tri = index._is_tri[pair_elem]
    tol = index._ref_tol[pair_elem]
    inside = np.zeros(total, dtype=bool)
    if np.any(is_tri):
        sel = np.nonzero(is_tri)[0]
        e = pair_elem[sel]
        xi[sel] = _tri_inverse_batch(index._tri_a[e], index._tri_M[e], pts[pair_pt[sel]])
        t = tol[sel]
        inside[sel] = (
            (xi[sel, 0] >= -t) & (xi[sel, 1] >= -t) & (xi[sel].sum(axis=1) <= 1.0 + t)
        )
    if not np.all(is_tri):
        sel = np.nonzero(~is_tri)[0]
        e = pair_elem[sel]
        xi[sel] = _quad_inverse_batch(
            index._c0[e], index._c1[e], index._c2[e], index._c3[e], pts[pair_pt[sel]]
        )
        inside[sel] = np.all(np.abs(xi[sel]) <= 1.0 + tol[sel, None], axis=1)

    # pairs are ordered by point, then ascending element id: the first
    # containing pair per point implements the lowest-id tie-break
    hit_pairs = np.nonzero(inside)[0]
    hit_pts, first = np.unique(pair_pt[hit_pairs], return_index=True)
    if len(hit_pts) != n:
        missing = np.setdiff1d(np.arange(n), hit_pts)[0]
        centres = 0.5 * (mesh.elem_bbox_min + mesh.elem_bbox_max)
        nearest = int(np.argmin(np.linalg.norm(centres - pts[missing], axis=1)))
        raise BridgingError(pts[missing], nearest_element=nearest)
    chosen = hit_pairs[first]
    elem_ids = pair_elem[chosen]
    out_xi = xi[chosen]
    return elem_ids, out_xi


def inverse_map(mesh: ParentMesh, elem: int, x) -> np.ndarray:
    """Reference coordinates of x within element elem.

    Triangles solve one 2x2 linear system; quadrilaterals run Newton on
    the bilinear map (residual below 1e-12, at most 20 iterations).
    """
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    el = mesh.elements[elem]
    corners = mesh.coords[list(el.node_ids[: el.n_corners])]
    if el.shape.startswith("t"):
        a = corners[0][None, :]
        M = np.stack([corners[1] - corners[0], corners[2] - corners[0]], axis=-1)[None, :]
        xi = _tri_inverse_batch(
            np.broadcast_to(a, pts.shape), np.broadcast_to(M, (len(pts), 2, 2)), pts
        )
    else:
        p0, p1, p2, p3 = corners
        c0 = 0.25 * (p0 + p1 + p2 + p3)
        c1 = 0.25 * (-p0 + p1 + p2 - p3)
        c2 = 0.25 * (-p0 - p1 + p2 + p3)
        c3 = 0.25 * (p0 - p1 + p2 - p3)
        stack = lambda c: np.broadcast_to(c[None, :], pts.shape)
        xi = _quad_inverse_batch(stack(c0), stack(c1), stack(c2), stack(c3), pts)
        res = (
            c0[None, :]
            + c1[None, :] * xi[:, :1]
            + c2[None, :] * xi[:, 1:]
            + c3[None, :] * xi[:, :1] * xi[:, 1:]
            - pts
        )
        if np.max(np.abs(res)) > _NEWTON_TOL * max(1.0, float(np.max(np.abs(corners)))):
            raise NumericError(f"inverse map did not converge in element {elem}")
    return xi[0] if single else xi


def forward_map(mesh: ParentMesh, elem_ids, xis) -> np.ndarray:
    """Geometric forward map for a batch of (element, reference point) pairs."""
    elem_ids = np.atleast_1d(np.asarray(elem_ids, dtype=int))
    xis = np.atleast_2d(np.asarray(xis, dtype=float))
    corners = mesh.element_corner_coords(elem_ids)
    p0, p1, p2, p3 = (corners[:, k] for k in range(4))
    is_tri = mesh.corner_count[elem_ids] == 3
    out = np.empty_like(xis)
    if np.any(is_tri):
        s = is_tri
        out[s] = (
            p0[s]
            + xis[s, :1] * (p1[s] - p0[s])
            + xis[s, 1:] * (p2[s] - p0[s])
        )
    if np.any(~is_tri):
        s = ~is_tri
        c0 = 0.25 * (p0[s] + p1[s] + p2[s] + p3[s])
        c1 = 0.25 * (-p0[s] + p1[s] + p2[s] - p3[s])
        c2 = 0.25 * (-p0[s] - p1[s] + p2[s] + p3[s])
        c3 = 0.25 * (p0[s] - p1[s] + p2[s] - p3[s])
        out[s] = c0 + c1 * xis[s, :1] + c2 * xis[s, 1:] + c3 * xis[s, :1] * xis[s, 1:]
    return out


def locate_parent_element(index: SpatialIndex, mesh: ParentMesh, x) -> int:
    """Containing element id for a single point (lowest id on ties)."""
    ids, _ = bridge_many(index, mesh, np.asarray(x, dtype=float)[None, :])
    return int(ids[0])


def bridge(index: SpatialIndex, mesh: ParentMesh, x) -> BridgedPoint:
    """Full three-step bridging of one Euclidean point."""
    pt = np.asarray(x, dtype=float)
    ids, xis = bridge_many(index, mesh, pt[None, :])
    return BridgedPoint(int(ids[0]), tuple(xis[0]), tuple(pt))
