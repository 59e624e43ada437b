"""Parent meshes: structured quads, polar annulus/disc triangulations, text I/O.

Connectivity convention for every shape: corner nodes first, counter
clockwise; higher-order nodes follow (quad midsides bottom/right/top/left
then centre; triangle midedges 01/12/20).  The geometric map of an
element always uses the corner subset, so curved boundaries are faceted.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _shapes
from .errors import InvertedElementError, MeshFormatError
from .quadrature import gauss_legendre, tensor_rule

SHAPE_NODE_COUNT = {"q4": 4, "q9": 9, "t3": 3, "t6": 6}
DIRICHLET = "dir"
TRACTION = "trac"


@dataclass(frozen=True)
class Node:
    id: int
    coords: tuple


@dataclass(frozen=True)
class Element:
    id: int
    shape: str
    node_ids: tuple

    def __post_init__(self):
        if self.shape not in SHAPE_NODE_COUNT:
            raise ValueError(f"unknown element shape {self.shape!r}")
        if len(self.node_ids) != SHAPE_NODE_COUNT[self.shape]:
            raise ValueError(
                f"element {self.id}: shape {self.shape} needs "
                f"{SHAPE_NODE_COUNT[self.shape]} nodes, got {len(self.node_ids)}"
            )

    @property
    def n_corners(self):
        return 4 if self.shape.startswith("q") else 3


@dataclass(frozen=True)
class BoundarySegment:
    """Boundary edge with 2 (linear) or 3 (end, end, mid) nodes."""

    node_ids: tuple
    kind: str
    outward_normal: tuple

    def __post_init__(self):
        if self.kind not in (DIRICHLET, TRACTION):
            raise ValueError(f"boundary kind must be 'dir' or 'trac', got {self.kind!r}")
        n = np.asarray(self.outward_normal, dtype=float)
        if abs(np.hypot(n[0], n[1]) - 1.0) > 1e-12:
            raise ValueError("outward_normal must have unit length")


class _RectDomain:
    def __init__(self, lx, ly):
        self.lx, self.ly = float(lx), float(ly)
        self.area = self.lx * self.ly

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] >= 0.0)
            & (pts[:, 0] <= self.lx)
            & (pts[:, 1] >= 0.0)
            & (pts[:, 1] <= self.ly)
        )


class _AnnulusDomain:
    def __init__(self, r_in, r_out, n_angular):
        self.r_in, self.r_out = float(r_in), float(r_out)
        self.n_angular = int(n_angular)
        self.area = np.pi * (self.r_out**2 - self.r_in**2)
        # radius of the circle inscribed in the faceted outer polygon;
        # child geometry clipped to it is guaranteed to lie inside the mesh
        self.r_out_inscribed = self.r_out * np.cos(np.pi / self.n_angular)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        r = np.hypot(pts[:, 0], pts[:, 1])
        return (r >= self.r_in) & (r <= self.r_out)


class _SquareWithDiscDomain(_RectDomain):
    def __init__(self, lx, ly, centre, r_inclusion, n_angular):
        super().__init__(lx, ly)
        self.centre = np.asarray(centre, dtype=float)
        self.r_inclusion = float(r_inclusion)
        self.n_angular = int(n_angular)


class _MeshDomain:
    """Fallback descriptor for imported meshes: point-in-any-element walk."""

    def __init__(self):
        self.area = None
        self._mesh = None

    def bind(self, mesh):
        self._mesh = mesh
        self.area = mesh.total_area()

    def contains(self, pts):
        from .scale_bridge import SpatialIndex, locate_parent_element
        from .errors import BridgingError

        pts = np.atleast_2d(pts)
        index = SpatialIndex(self._mesh)
        out = np.empty(len(pts), dtype=bool)
        for i, p in enumerate(pts):
            try:
                locate_parent_element(index, self._mesh, p)
                out[i] = True
            except BridgingError:
                out[i] = False
        return out


class ParentMesh:
    """Immutable 2D mesh of the material domain.

    Attributes
    ----------
    coords : (n_nodes, 2) ndarray
    elements : list of Element
    boundary : list of BoundarySegment
    domain : descriptor with ``contains(points)`` and ``area``
    groups : dict mapping a region name to an array of element ids
    """

    def __init__(self, coords, elements, boundary, domain, groups=None):
        self.coords = np.ascontiguousarray(coords, dtype=float)
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("node coordinates must be finite")
        self.elements = list(elements)
        self.boundary = list(boundary)
        self.domain = domain
        self.groups = dict(groups or {})
        self._build_caches()
        if isinstance(domain, _MeshDomain):
            domain.bind(self)

    # -- caches ------------------------------------------------------------
    def _build_caches(self):
        self.nodes = [Node(i, tuple(c)) for i, c in enumerate(self.coords)]
        for e, elem in enumerate(self.elements):
            if elem.id != e:
                raise ValueError("element ids must be dense 0..N-1 in order")
            if max(elem.node_ids) >= len(self.coords) or min(elem.node_ids) < 0:
                raise ValueError(f"element {e} references a missing node")
        self.shape_groups = {}
        for elem in self.elements:
            self.shape_groups.setdefault(elem.shape, []).append(elem.id)
        for shape, ids in self.shape_groups.items():
            ids = np.asarray(ids, dtype=int)
            conn = np.asarray([self.elements[i].node_ids for i in ids], dtype=int)
            self.shape_groups[shape] = (ids, conn)
        ncorner = np.array([el.n_corners for el in self.elements])
        corner_conn = np.zeros((len(self.elements), 4), dtype=int)
        for elem in self.elements:
            nc = elem.n_corners
            corner_conn[elem.id, :nc] = elem.node_ids[:nc]
            if nc == 3:
                corner_conn[elem.id, 3] = elem.node_ids[0]
        self.corner_conn = corner_conn
        self.corner_count = ncorner
        pts = self.coords[corner_conn]
        self.elem_bbox_min = pts.min(axis=1)
        self.elem_bbox_max = pts.max(axis=1)
        self.bbox_min = self.coords.min(axis=0)
        self.bbox_max = self.coords.max(axis=0)
        diam = np.linalg.norm(self.elem_bbox_max - self.elem_bbox_min, axis=1)
        self.mean_element_diameter = float(diam.mean()) if len(diam) else 0.0

    @property
    def n_nodes(self):
        return len(self.coords)

    @property
    def n_elements(self):
        return len(self.elements)

    def replace_boundary(self, segments):
        """New mesh sharing geometry but with different boundary tagging."""
        return ParentMesh(self.coords, self.elements, segments, self.domain, self.groups)

    def element_corner_coords(self, elem_ids):
        """Corner coordinates, padded to 4 (triangles repeat the first)."""
        return self.coords[self.corner_conn[elem_ids]]

    def element_areas(self):
        """Element areas via the geometric map (2x2 Gauss on quads)."""
        areas = np.zeros(self.n_elements)
        rule = tensor_rule(gauss_legendre(2))
        for shape, (ids, conn) in self.shape_groups.items():
            fam = _shapes.family(shape)
            corners = self.coords[conn[:, : fam.n_geom]]
            if shape.startswith("t"):
                v1 = corners[:, 1] - corners[:, 0]
                v2 = corners[:, 2] - corners[:, 0]
                areas[ids] = 0.5 * np.abs(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
            else:
                dphi = fam.geom_dpsi(rule.points)  # (npts, 4, 2)
                J = np.einsum("edi,pdj->epij", corners, dphi)
                det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
                areas[ids] = det @ rule.weights
        return areas

    def total_area(self):
        return float(self.element_areas().sum())

    def jacobian_dets(self, sample="corners"):
        """Geometric-map determinants per element at sample points."""
        out = []
        for shape, (ids, conn) in self.shape_groups.items():
            fam = _shapes.family(shape)
            corners = self.coords[conn[:, : fam.n_geom]]
            if shape.startswith("t"):
                pts = np.array([[1 / 3, 1 / 3]])
            else:
                pts = _shapes.REF_SQUARE_CORNERS if sample == "corners" else np.array([[0.0, 0.0]])
            dphi = fam.geom_dpsi(pts)
            J = np.einsum("edi,pdj->epij", corners, dphi)
            det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
            out.append(det.ravel())
        return np.concatenate(out) if out else np.array([])


def _check_orientation(mesh_or_args):
    dets = mesh_or_args.jacobian_dets()
    if np.any(dets <= 0):
        raise InvertedElementError("mesh contains an element with non-positive Jacobian")


# -- structured quadrilateral mesh ------------------------------------------


def build_structured_quad_mesh(lx, ly, mx, my, order=1) -> ParentMesh:
    """Uniform mx-by-my quad mesh of the rectangle [0, lx] x [0, ly].

    order selects bilinear (q4) or biquadratic (q9) displacement
    interpolation; every boundary edge is tagged Dirichlet.
    """
    if mx < 1 or my < 1:
        raise ValueError("mesh counts must be at least 1")
    if lx <= 0 or ly <= 0:
        raise ValueError("side lengths must be positive")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    nx, ny = order * mx + 1, order * my + 1
    xs = np.linspace(0.0, lx, nx)
    ys = np.linspace(0.0, ly, ny)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * nx + i

    elements = []
    for j in range(my):
        for i in range(mx):
            if order == 1:
                ids = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
                elements.append(Element(len(elements), "q4", ids))
            else:
                i0, j0 = 2 * i, 2 * j
                ids = (
                    nid(i0, j0), nid(i0 + 2, j0), nid(i0 + 2, j0 + 2), nid(i0, j0 + 2),
                    nid(i0 + 1, j0), nid(i0 + 2, j0 + 1), nid(i0 + 1, j0 + 2), nid(i0, j0 + 1),
                    nid(i0 + 1, j0 + 1),
                )
                elements.append(Element(len(elements), "q9", ids))

    boundary = []

    def seg(n0, n1, nmid, normal):
        ids = (n0, n1) if order == 1 else (n0, n1, nmid)
        boundary.append(BoundarySegment(ids, DIRICHLET, normal))

    s = order
    for i in range(mx):  # bottom, left to right
        seg(nid(s * i, 0), nid(s * (i + 1), 0), nid(s * i + 1, 0), (0.0, -1.0))
    for j in range(my):  # right, bottom to top
        seg(nid(nx - 1, s * j), nid(nx - 1, s * (j + 1)), nid(nx - 1, s * j + 1), (1.0, 0.0))
    for i in range(mx, 0, -1):  # top, right to left
        seg(nid(s * i, ny - 1), nid(s * (i - 1), ny - 1), nid(s * i - 1, ny - 1), (0.0, 1.0))
    for j in range(my, 0, -1):  # left, top to bottom
        seg(nid(0, s * j), nid(0, s * (j - 1)), nid(0, s * j - 1), (-1.0, 0.0))

    mesh = ParentMesh(coords, elements, boundary, _RectDomain(lx, ly))
    _check_orientation(mesh)
    return mesh


# -- polar meshes ------------------------------------------------------------


def _polar_ring_nodes(radii, n_angular, centre=(0.0, 0.0)):
    theta = 2.0 * np.pi * np.arange(n_angular) / n_angular
    ct, st = np.cos(theta), np.sin(theta)
    pts = [np.column_stack([r * ct + centre[0], r * st + centre[1]]) for r in radii]
    return np.vstack(pts), theta


def _ring_quad_tris(ring0_ids, ring1_ids, elements, start_id):
    """Split each polar quad cell between two rings into two CCW triangles."""
    n = len(ring0_ids)
    eid = start_id
    for j in range(n):
        a, b = ring0_ids[j], ring0_ids[(j + 1) % n]
        c, d = ring1_ids[(j + 1) % n], ring1_ids[j]
        elements.append(Element(eid, "t3", (a, d, c)))
        elements.append(Element(eid + 1, "t3", (a, c, b)))
        eid += 2
    return eid


def build_annulus_mesh(r_in, r_out, n_radial, n_angular) -> ParentMesh:
    """Structured-polar triangulation of an annulus centred at the origin.

    The inner ring is tagged Dirichlet, the outer ring Traction; boundary
    circles are faceted with n_angular chords.
    """
    if not 0 < r_in < r_out:
        raise ValueError("annulus radii must satisfy 0 < r_in < r_out")
    if n_radial < 1 or n_angular < 3:
        raise ValueError("need n_radial >= 1 and n_angular >= 3")
    radii = np.linspace(r_in, r_out, n_radial + 1)
    coords, theta = _polar_ring_nodes(radii, n_angular)

    def ring(i):
        return np.arange(i * n_angular, (i + 1) * n_angular)

    elements = []
    eid = 0
    for i in range(n_radial):
        eid = _ring_quad_tris(ring(i), ring(i + 1), elements, eid)

    mid_theta = theta + np.pi / n_angular
    boundary = []
    inner = ring(0)
    for j in range(n_angular):  # hole loop, wound clockwise
        nrm = (-np.cos(mid_theta[j]), -np.sin(mid_theta[j]))
        boundary.append(BoundarySegment((inner[(j + 1) % n_angular], inner[j]), DIRICHLET, nrm))
    outer = ring(n_radial)
    for j in range(n_angular):  # outer loop, counter clockwise
        nrm = (np.cos(mid_theta[j]), np.sin(mid_theta[j]))
        boundary.append(BoundarySegment((outer[j], outer[(j + 1) % n_angular]), TRACTION, nrm))

    mesh = ParentMesh(coords, elements, boundary, _AnnulusDomain(r_in, r_out, n_angular))
    _check_orientation(mesh)
    return mesh


def build_disc_in_square_mesh(
    lx, r_inclusion, n_angular=48, n_radial_inclusion=4, n_radial_matrix=8, grading=1.35
) -> ParentMesh:
    """Square [0, lx]^2 with a centred circular inclusion, all triangles.

    The interface circle is faceted with n_angular chords and is meshed
    conformingly on both sides; matrix rings grow geometrically away
    from the interface (finer resolution near the interface).  Element
    groups "inclusion" and "matrix" are recorded.  n_angular must be a
    multiple of 8 so that square corners coincide with ray directions.
    """
    if n_angular % 8:
        raise ValueError("n_angular must be a multiple of 8")
    if not 0 < 2 * r_inclusion < lx:
        raise ValueError("inclusion must fit strictly inside the square")
    centre = np.array([lx / 2.0, lx / 2.0])
    theta = 2.0 * np.pi * np.arange(n_angular) / n_angular
    ct, st = np.cos(theta), np.sin(theta)

    coords = [centre]
    ring_ids = [np.array([0])]
    nid = 1
    inc_radii = r_inclusion * np.arange(1, n_radial_inclusion + 1) / n_radial_inclusion
    for r in inc_radii:
        coords.append(np.column_stack([centre[0] + r * ct, centre[1] + r * st]))
        ring_ids.append(np.arange(nid, nid + n_angular))
        nid += n_angular
    # matrix rings: ray-dependent outer radius reaching the square boundary
    r_edge = (lx / 2.0) / np.maximum(np.abs(ct), np.abs(st))
    fr = (grading ** np.arange(1, n_radial_matrix + 1) - 1.0) / (grading**n_radial_matrix - 1.0)
    for f in fr:
        r = r_inclusion + f * (r_edge - r_inclusion)
        coords.append(np.column_stack([centre[0] + r * ct, centre[1] + r * st]))
        ring_ids.append(np.arange(nid, nid + n_angular))
        nid += n_angular
    coords = np.vstack(coords)

    elements = []
    eid = 0
    centre_ring = ring_ids[1]
    for j in range(n_angular):
        elements.append(Element(eid, "t3", (0, centre_ring[j], centre_ring[(j + 1) % n_angular])))
        eid += 1
    for i in range(1, len(ring_ids) - 1):
        eid = _ring_quad_tris(ring_ids[i], ring_ids[i + 1], elements, eid)
    n_inclusion = n_angular + 2 * n_angular * (n_radial_inclusion - 1)
    groups = {
        "inclusion": np.arange(n_inclusion),
        "matrix": np.arange(n_inclusion, len(elements)),
    }

    outer = ring_ids[-1]
    boundary = []
    for j in range(n_angular):
        a, b = outer[j], outer[(j + 1) % n_angular]
        mid = 0.5 * (coords[a] + coords[b]) - centre
        axis = int(np.argmax(np.abs(mid)))
        nrm = [0.0, 0.0]
        nrm[axis] = 1.0 if mid[axis] > 0 else -1.0
        boundary.append(BoundarySegment((a, b), DIRICHLET, tuple(nrm)))

    domain = _SquareWithDiscDomain(lx, lx, centre, r_inclusion, n_angular)
    mesh = ParentMesh(coords, elements, boundary, domain, groups)
    _check_orientation(mesh)
    return mesh


def point_in_domain(mesh: ParentMesh, x) -> bool:
    """True iff x lies in the closed material domain."""
    return bool(mesh.domain.contains(np.asarray(x, dtype=float))[0])


# -- text format --------------------------------------------------------------


def export_mesh(mesh: ParentMesh) -> str:
    """Serialize a mesh in the line-oriented text format (round-trip exact)."""
    lines = [f"nodes {mesh.n_nodes} elements {mesh.n_elements} boundaries {len(mesh.boundary)}"]
    for i, (x, y) in enumerate(mesh.coords):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    for elem in mesh.elements:
        lines.append(f"{elem.id} {elem.shape} " + " ".join(str(n) for n in elem.node_ids))
    for seg in mesh.boundary:
        nx, ny = seg.outward_normal
        lines.append(
            f"{seg.kind} " + " ".join(str(n) for n in seg.node_ids) + f" {float(nx)!r} {float(ny)!r}"
        )
    return "\n".join(lines) + "\n"


def import_mesh(text: str) -> ParentMesh:
    """Parse the text format; raises MeshFormatError with the offending line."""
    rows = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            rows.append((line_no, body.split()))
    if not rows:
        raise MeshFormatError("empty mesh file")
    line_no, head = rows[0]
    if len(head) != 6 or head[0] != "nodes" or head[2] != "elements" or head[4] != "boundaries":
        raise MeshFormatError("expected header 'nodes N elements M boundaries B'", line_no)
    try:
        n_nodes, n_elems, n_bound = int(head[1]), int(head[3]), int(head[5])
    except ValueError:
        raise MeshFormatError("non-integer count in header", line_no) from None
    if len(rows) != 1 + n_nodes + n_elems + n_bound:
        raise MeshFormatError(
            f"expected {n_nodes + n_elems + n_bound} data lines, got {len(rows) - 1}", line_no
        )

    coords = np.full((n_nodes, 2), np.nan)
    for line_no, tok in rows[1 : 1 + n_nodes]:
        if len(tok) != 3:
            raise MeshFormatError("node line must be 'id x y'", line_no)
        try:
            i, x, y = int(tok[0]), float(tok[1]), float(tok[2])
        except ValueError:
            raise MeshFormatError("malformed node line", line_no) from None
        if not 0 <= i < n_nodes:
            raise MeshFormatError(f"node id {i} out of range", line_no)
        coords[i] = (x, y)
    if np.any(np.isnan(coords)):
        raise MeshFormatError("node ids are not dense 0..N-1")

    elements = []
    for k, (line_no, tok) in enumerate(rows[1 + n_nodes : 1 + n_nodes + n_elems]):
        if len(tok) < 3:
            raise MeshFormatError("element line must be 'id shape n0 n1 ...'", line_no)
        shape = tok[1]
        if shape not in SHAPE_NODE_COUNT:
            raise MeshFormatError(f"unknown shape token {shape!r}", line_no)
        try:
            eid = int(tok[0])
            ids = tuple(int(t) for t in tok[2:])
        except ValueError:
            raise MeshFormatError("malformed element line", line_no) from None
        if eid != k:
            raise MeshFormatError(f"element ids must be dense; expected {k}, got {eid}", line_no)
        if len(ids) != SHAPE_NODE_COUNT[shape]:
            raise MeshFormatError(
                f"shape {shape} needs {SHAPE_NODE_COUNT[shape]} nodes, got {len(ids)}", line_no
            )
        for n in ids:
            if not 0 <= n < n_nodes:
                raise MeshFormatError(f"element references missing node {n}", line_no)
        elements.append(Element(eid, shape, ids))
        det = _element_corner_dets(coords, elements[-1])
        if np.any(det <= 0):
            raise InvertedElementError(
                f"element {eid} winds clockwise (non-positive Jacobian)", line_no
            )

    boundary = []
    for line_no, tok in rows[1 + n_nodes + n_elems :]:
        if tok[0] not in (DIRICHLET, TRACTION):
            raise MeshFormatError(f"unknown boundary kind {tok[0]!r}", line_no)
        if len(tok) not in (5, 6):
            raise MeshFormatError("boundary line must be 'kind n0 n1 [n2] nx ny'", line_no)
        try:
            ids = tuple(int(t) for t in tok[1:-2])
            nrm = (float(tok[-2]), float(tok[-1]))
        except ValueError:
            raise MeshFormatError("malformed boundary line", line_no) from None
        for n in ids:
            if not 0 <= n < n_nodes:
                raise MeshFormatError(f"boundary references missing node {n}", line_no)
        try:
            boundary.append(BoundarySegment(ids, tok[0], nrm))
        except ValueError as exc:
            raise MeshFormatError(str(exc), line_no) from None

    return ParentMesh(coords, elements, boundary, _MeshDomain())


def _element_corner_dets(coords, elem):
    fam = _shapes.family(elem.shape)
    corners = coords[list(elem.node_ids[: fam.n_geom])][None, ...]
    if elem.shape.startswith("t"):
        pts = np.array([[1 / 3, 1 / 3]])
    else:
        pts = _shapes.REF_SQUARE_CORNERS
    dphi = fam.geom_dpsi(pts)
    J = np.einsum("edi,pdj->epij", corners, dphi)
    return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
