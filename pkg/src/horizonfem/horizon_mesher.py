"""Child meshes tiling a truncated horizon, one per parent Gauss point.

Rectangular regions get structured grids, split into four quadrant
blocks when a singular point must lie on cell edges; polygonal regions
(clipped circles, full subregions) are fan-triangulated around the
anchor with radial rings; segment regions become 1D chains.  Meshes are
built per Gauss point and consumed immediately, never stored globally.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError
from .kernels import (
    BidirectionalPowerLaw,
    KernelSpec,
    PowerLaw,
    TruncatedRegion,
)
from .quadrature import gauss_jacobi, gauss_legendre, triangle_rule

_EMPTY_PTS = np.empty((0, 2))
_EMPTY_W = np.empty(0)


@dataclass(frozen=True)
class ChildMesh:
    """Discretized truncated horizon.

    kind "rectgrid": tensor grid given by x_breaks/y_breaks; sx_index /
    sy_index give the break index of a singular grid line (or None).
    kind "fan": triangles fanned around the anchor (nodes/tris arrays).
    kind "segments": two 1D chains through the anchor along x and y.
    kind "empty": fully truncated horizon, contributes nothing.
    """

    kind: str
    anchor: tuple
    owner: tuple = None
    x_breaks: np.ndarray = None
    y_breaks: np.ndarray = None
    sx_index: int = None
    sy_index: int = None
    nodes: np.ndarray = None
    tris: np.ndarray = None
    seg_x: np.ndarray = None
    seg_y: np.ndarray = None
    seg_sx: int = None
    seg_sy: int = None
    avg_element_size: float = 0.0

    @property
    def n_elements(self):
        if self.kind == "rectgrid":
            return (len(self.x_breaks) - 1) * (len(self.y_breaks) - 1)
        if self.kind == "fan":
            return len(self.tris)
        if self.kind == "segments":
            n = 0
            if self.seg_x is not None:
                n += len(self.seg_x) - 1
            if self.seg_y is not None:
                n += len(self.seg_y) - 1
            return n
        return 0

    def measure(self):
        """Total area (2D kinds) or length (segments)."""
        if self.kind == "rectgrid":
            return float(np.sum(np.outer(np.diff(self.x_breaks), np.diff(self.y_breaks))))
        if self.kind == "fan":
            a = self.nodes[self.tris[:, 0]]
            b = self.nodes[self.tris[:, 1]]
            c = self.nodes[self.tris[:, 2]]
            cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
                c[:, 0] - a[:, 0]
            )
            return float(0.5 * np.abs(cross).sum())
        if self.kind == "segments":
            total = 0.0
            for br in (self.seg_x, self.seg_y):
                if br is not None:
                    total += br[-1] - br[0]
            return float(total)
        return 0.0

    def node_elements(self):
        """(nodes, connectivity, shape token) view for dumps and checks."""
        if self.kind == "rectgrid":
            nx, ny = len(self.x_breaks), len(self.y_breaks)
            X, Y = np.meshgrid(self.x_breaks, self.y_breaks, indexing="xy")
            nodes = np.column_stack([X.ravel(), Y.ravel()])
            conn = []
            for j in range(ny - 1):
                for i in range(nx - 1):
                    n0 = j * nx + i
                    conn.append((n0, n0 + 1, n0 + nx + 1, n0 + nx))
            return nodes, np.asarray(conn, dtype=int), "q4"
        if self.kind == "fan":
            return self.nodes, self.tris, "t3"
        raise ValueError(f"no element view for child mesh kind {self.kind!r}")

    def to_text(self):
        """Serialize in the parent-mesh text format (no boundary lines)."""
        nodes, conn, shape = self.node_elements()
        lines = [f"nodes {len(nodes)} elements {len(conn)} boundaries 0"]
        for i, (x, y) in enumerate(nodes):
            lines.append(f"{i} {float(x)!r} {float(y)!r}")
        for e, ids in enumerate(conn):
            lines.append(f"{e} {shape} " + " ".join(str(int(n)) for n in ids))
        return "\n".join(lines) + "\n"


def _split_breaks(a, b, split, target):
    """Grid over [a, b], with a break forced at `split` when given.

    Returns (breaks, split_index).  Cell count per part is the rounded
    ratio of part width to target size, at least 1.
    """

    def part(lo, hi):
        n = max(1, int(np.rint((hi - lo) / target)))
        return np.linspace(lo, hi, n + 1)

    if split is None or split <= a + 1e-14 or split >= b - 1e-14:
        return part(a, b), None
    left = part(a, split)
    right = part(split, b)
    return np.concatenate([left, right[1:]]), len(left) - 1


def mesh_child(region: TruncatedRegion, singular_point, target_size: float) -> ChildMesh:
    """Tile a truncated region with child elements of roughly target_size.

    When a singular point is given, grid lines pass through it so the
    kernel's singular lines contain only element edges.
    """
    if target_size <= 0:
        raise ValueError("target_size must be positive")
    if region.is_empty:
        return ChildMesh(kind="empty", anchor=region.anchor)

    if region.kind == "rect":
        x0, x1, y0, y1 = region.bounds
        sx = sy = None
        if singular_point is not None:
            sx, sy = float(singular_point[0]), float(singular_point[1])
        xb, sxi = _split_breaks(x0, x1, sx, target_size)
        yb, syi = _split_breaks(y0, y1, sy, target_size)
        avg = float(np.sqrt(np.mean(np.diff(xb)) * np.mean(np.diff(yb))))
        return ChildMesh(
            kind="rectgrid", anchor=region.anchor, x_breaks=xb, y_breaks=yb,
            sx_index=sxi, sy_index=syi, avg_element_size=avg,
        )

    if region.kind == "polygon":
        anchor = np.asarray(region.anchor, dtype=float)
        verts = np.asarray(region.vertices, dtype=float)
        radii = np.linalg.norm(verts - anchor, axis=1)
        m = max(1, int(np.rint(radii.max() / target_size)))
        nv = len(verts)
        # nodes: anchor, then rings at fractions k/m along each anchor->vertex ray
        fracs = np.arange(1, m + 1) / m
        ring_nodes = anchor + fracs[:, None, None] * (verts - anchor)[None, :, :]
        nodes = np.vstack([anchor[None, :], ring_nodes.reshape(-1, 2)])

        def ring_id(k, j):  # k in 1..m
            return 1 + (k - 1) * nv + (j % nv)

        tris = []
        for j in range(nv):
            tris.append((0, ring_id(1, j), ring_id(1, j + 1)))
        for k in range(1, m):
            for j in range(nv):
                a_, b_ = ring_id(k, j), ring_id(k, j + 1)
                c_, d_ = ring_id(k + 1, j + 1), ring_id(k + 1, j)
                tris.append((a_, b_, c_))
                tris.append((a_, c_, d_))
        tris = np.asarray(tris, dtype=int)
        cm = ChildMesh(kind="fan", anchor=region.anchor, nodes=nodes, tris=tris)
        area = cm.measure()
        avg = float(np.sqrt(2.0 * area / max(len(tris), 1)))
        return ChildMesh(
            kind="fan", anchor=region.anchor, nodes=nodes, tris=tris, avg_element_size=avg
        )

    if region.kind == "segments":
        ax, ay = region.anchor
        ivx, ivy = region.intervals
        bx = by = None
        sxi = syi = None
        if ivx is not None:
            bx, sxi = _split_breaks(ivx[0], ivx[1], ax, target_size)
        if ivy is not None:
            by, syi = _split_breaks(ivy[0], ivy[1], ay, target_size)
        sizes = [np.mean(np.diff(b)) for b in (bx, by) if b is not None]
        return ChildMesh(
            kind="segments", anchor=region.anchor, seg_x=bx, seg_y=by,
            seg_sx=sxi, seg_sy=syi, avg_element_size=float(np.mean(sizes)) if sizes else 0.0,
        )

    raise ValueError(f"unknown region kind {region.kind!r}")


def axis_rule(breaks, singular_index, alpha, n):
    """Per-axis quadrature nodes/weights along a chain of cells.

    Cells adjacent to the singular break use a mapped Gauss-Jacobi rule
    whose weights absorb |t - s|**(-alpha); other cells use Gauss-
    Legendre, with the now-smooth |t - s|**(-alpha) factor (if any)
    evaluated pointwise into the weights.
    """
    glx, glw = (lambda r: (r.points, r.weights))(gauss_legendre(n))
    cells_a = breaks[:-1]
    cells_b = breaks[1:]
    half = 0.5 * (cells_b - cells_a)
    mid = 0.5 * (cells_a + cells_b)
    nodes = mid[:, None] + half[:, None] * glx[None, :]
    weights = half[:, None] * glw[None, :]
    if alpha is not None:
        if singular_index is None:
            raise AlignmentError("singular kernel requires a break on the singular line")
        s = breaks[singular_index]
        weights = weights * np.abs(nodes - s) ** (-alpha)
        jx, jw = (lambda r: (r.points, r.weights))(gauss_jacobi(n, alpha))
        for k, sing_at_right in ((singular_index - 1, True), (singular_index, False)):
            if not 0 <= k < len(cells_a):
                continue
            h = half[k]
            if sing_at_right:
                nodes[k] = cells_b[k] - h * (1.0 - jx)
            else:
                nodes[k] = cells_a[k] + h * (1.0 - jx)
            weights[k] = h ** (1.0 - alpha) * jw
    return nodes.ravel(), weights.ravel()


def _tri_order(rule_size):
    return min(max(int(rule_size), 1), 3)


def child_quadrature_points(cm: ChildMesh, spec: KernelSpec, rule_size: int, leg=None):
    """Quadrature points and combined weights over a child mesh.

    Non-singular kernels: weights are plain area (or length) weights and
    the kernel is evaluated pointwise by the caller.  Singular kernels:
    the per-axis singular factors are already inside the weights and the
    caller multiplies only the kernel's smooth part.

    leg selects one chain ("x" or "y") of a segments mesh; by default
    both are concatenated (x first).
    """
    if cm.kind == "empty":
        return _EMPTY_PTS, _EMPTY_W

    if cm.kind == "rectgrid":
        if isinstance(spec, BidirectionalPowerLaw):
            raise AlignmentError("bidirectional kernels require a segments child mesh")
        ax = ay = None
        if isinstance(spec, PowerLaw):
            if cm.sx_index is None or cm.sy_index is None:
                raise AlignmentError(
                    "singular kernel used with a child grid not aligned to the singular point"
                )
            ax = ay = spec.alpha
        xn, xw = axis_rule(cm.x_breaks, cm.sx_index, ax, rule_size)
        yn, yw = axis_rule(cm.y_breaks, cm.sy_index, ay, rule_size)
        pts = np.column_stack(
            [np.repeat(xn, len(yn)), np.tile(yn, len(xn))]
        )
        w = (xw[:, None] * yw[None, :]).ravel()
        return pts, w

    if cm.kind == "fan":
        if getattr(spec, "singular", False):
            # fan edges meet at the anchor so alignment holds, but the
            # endpoint-weighted rules are only built for grid meshes
            raise AlignmentError("singular kernels are supported on grid/segment child meshes")
        rule = triangle_rule(_tri_order(rule_size))
        a = cm.nodes[cm.tris[:, 0]]
        e1 = cm.nodes[cm.tris[:, 1]] - a
        e2 = cm.nodes[cm.tris[:, 2]] - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        xi = rule.points
        pts = (
            a[:, None, :]
            + xi[None, :, 0, None] * e1[:, None, :]
            + xi[None, :, 1, None] * e2[:, None, :]
        )
        w = np.abs(det)[:, None] * rule.weights[None, :]
        return pts.reshape(-1, 2), w.ravel()

    if cm.kind == "segments":
        if not isinstance(spec, BidirectionalPowerLaw):
            raise ValueError("segments child meshes pair with the bidirectional kernel")
        out_p, out_w = [], []
        if leg in (None, "x") and cm.seg_x is not None:
            t, w = axis_rule(cm.seg_x, cm.seg_sx, spec.alpha, rule_size)
            out_p.append(np.column_stack([t, np.full_like(t, cm.anchor[1])]))
            out_w.append(w)
        if leg in (None, "y") and cm.seg_y is not None:
            t, w = axis_rule(cm.seg_y, cm.seg_sy, spec.alpha, rule_size)
            out_p.append(np.column_stack([np.full_like(t, cm.anchor[0]), t]))
            out_w.append(w)
        if not out_p:
            return _EMPTY_PTS, _EMPTY_W
        return np.vstack(out_p), np.concatenate(out_w)

    raise ValueError(f"unknown child mesh kind {cm.kind!r}")
