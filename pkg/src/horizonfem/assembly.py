"""Element operators and global assembly.

The bilinear form couples a test-function symmetric gradient at each
parent Gauss point with the kernel-weighted strain integral over that
point's child mesh; the strain is read from parent degrees of freedom
through scale bridging.  Assembled rows are test DOFs, columns are
solution DOFs.  Global DOF layout: ux of node i at i, uy at n_nodes+i.

The element loop is processed in fixed-size chunks.  Chunks are
independent, so they may run on worker processes; triplets are merged
in chunk order, which keeps results bit-identical for any worker count.
"""

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import _shapes
from .errors import AlignmentError, BridgingError
from .geometry import DIRICHLET, TRACTION, ParentMesh
from .horizon_mesher import axis_rule, child_quadrature_points, mesh_child
from .kernels import (
    BidirectionalPowerLaw,
    FullRegionHorizon,
    HorizonSpec,
    KernelSpec,
    PowerLaw,
    RectHorizon,
    horizon_geometry,
)
from .quadrature import gauss_jacobi, gauss_legendre, tensor_rule, triangle_rule
from .scale_bridge import SpatialIndex, bridge_many


@dataclass(frozen=True)
class MaterialModel:
    """Homogeneous isotropic plane-strain material."""

    lame_mu: float
    lame_lambda: float
    rho: float = 1.0

    def __post_init__(self):
        if self.lame_mu <= 0 or self.lame_lambda < 0 or self.rho < 0:
            raise ValueError("need mu > 0, lambda >= 0, rho >= 0")

    def voigt(self):
        mu, lam = self.lame_mu, self.lame_lambda
        return np.array(
            [[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, 2 * mu]]
        )


@dataclass
class Loads:
    """Field callbacks; each takes points (n, 2) and returns (n, 2)."""

    body: callable = None
    traction: callable = None
    dirichlet: callable = None


@dataclass
class AssemblyOptions:
    g_parent: int = None        # per-axis parent rule; default 2 (order 1) or 3 (order 2)
    g_child: int = 3            # per-axis child rule, Legendre and Jacobi alike
    g_boundary: int = None
    rel_resolution: float = 1.0     # parent-to-child element size ratio
    child_size: float = None        # absolute override of the child target size
    chunk_elems: int = 64
    workers: int = 1


@dataclass
class GlobalSystem:
    K: sp.csr_matrix
    M: sp.csr_matrix
    F: np.ndarray
    dirichlet: list
    dof_map: np.ndarray
    mesh: ParentMesh
    material: MaterialModel
    meta: dict = field(default_factory=dict)

    @property
    def n_dof(self):
        return 2 * self.mesh.n_nodes


def shape_functions(shape, order=None):
    """Shape family for a connectivity token or a (kind, order) pair.

    Accepts tokens "q4", "q9", "t3", "t6", "line2", "line3" directly, or
    kind in {"quad", "tri", "line"} with order in {1, 2}.
    """
    if order is not None:
        table = {
            ("quad", 1): "q4", ("quad", 2): "q9",
            ("tri", 1): "t3", ("tri", 2): "t6",
            ("line", 1): "line2", ("line", 2): "line3",
        }
        try:
            shape = table[(shape, order)]
        except KeyError:
            raise ValueError(f"unsupported shape/order pair {(shape, order)!r}") from None
    return _shapes.family(shape)


def interpolation_order(mesh: ParentMesh) -> int:
    return 2 if any(s in mesh.shape_groups for s in ("q9", "t6")) else 1


def _parent_rule(shape, g_parent):
    if shape.startswith("q"):
        return tensor_rule(gauss_legendre(g_parent))
    return triangle_rule(min(max(g_parent, 1), 3))


def parent_scale(mesh: ParentMesh) -> float:
    """Representative parent element size (grid spacing for quad grids)."""
    mean_area = mesh.total_area() / mesh.n_elements
    tri = sum(len(ids) for s, (ids, _) in mesh.shape_groups.items() if s.startswith("t"))
    if tri > mesh.n_elements // 2:
        mean_area *= 2.0
    return float(np.sqrt(mean_area))


class _GroupData:
    """Per-shape-group parent quadrature data."""

    def __init__(self, mesh, shape, ids, conn, g_parent):
        fam = _shapes.family(shape)
        rule = _parent_rule(shape, g_parent)
        self.ids = ids
        self.conn = conn
        self.fam = fam
        self.rule = rule
        self.psi = fam.psi(rule.points)                      # (g, m)
        dpsi = fam.dpsi(rule.points)                          # (g, m, 2)
        corners = mesh.coords[conn[:, : fam.n_geom]]          # (e, nc, 2)
        gphi = fam.geom_psi(rule.points)                      # (g, nc)
        gdphi = fam.geom_dpsi(rule.points)                    # (g, nc, 2)
        J = np.einsum("edi,gdj->egij", corners, gdphi)        # (e, g, 2, 2)
        Jinv, det = _shapes.inv2(J)
        if np.any(det <= 0):
            raise ValueError("non-positive Jacobian during assembly")
        self.det = det                                        # (e, g)
        self.gp_xy = np.einsum("gd,edi->egi", gphi, corners)  # (e, g, 2)
        # physical gradients of displacement shape functions at parent GPs
        self.grad = np.einsum("gmj,egji->egmi", dpsi, Jinv)   # (e, g, m, 2)
        self.wdet = det * rule.weights[None, :]               # (e, g)


def _grads_at(mesh, elem_ids, xis):
    """Shape values and physical gradients at bridged points.

    Returns (conn (n, m), psi (n, m), grad (n, m, 2)) with m the max
    node count across shapes present (rows padded with zeros).
    """
    n = len(elem_ids)
    m_max = max(
        _shapes.family(s).n_nodes for s in mesh.shape_groups
    )
    conn_out = np.zeros((n, m_max), dtype=int)
    psi_out = np.zeros((n, m_max))
    grad_out = np.zeros((n, m_max, 2))
    shape_of = np.empty(n, dtype=object) if len(mesh.shape_groups) > 1 else None
    for shape, (ids, conn) in mesh.shape_groups.items():
        fam = _shapes.family(shape)
        if shape_of is None:
            sel = np.arange(n)
        else:
            member = np.zeros(mesh.n_elements, dtype=bool)
            member[ids] = True
            sel = np.nonzero(member[elem_ids])[0]
        if len(sel) == 0:
            continue
        e = elem_ids[sel]
        xi = xis[sel]
        corners = mesh.coords[mesh.corner_conn[e][:, : fam.n_geom]]
        gdphi = fam.geom_dpsi(xi)
        J = np.einsum("pdi,pdj->pij", corners, gdphi)
        Jinv, det = _shapes.inv2(J)
        psi = fam.psi(xi)
        dpsi = fam.dpsi(xi)
        grad = np.einsum("pmj,pji->pmi", dpsi, Jinv)
        m = fam.n_nodes
        # element connectivity rows for the bridged elements
        idx_in_group = np.searchsorted(ids, e)
        conn_out[sel, :m] = conn[idx_in_group]
        psi_out[sel, :m] = psi
        grad_out[sel, :m] = grad
    return conn_out, psi_out, grad_out


# -- child quadrature batching -----------------------------------------------


def _ragged_cells(widths, lo, target):
    """Flat uniform cells for per-row intervals [lo, lo+width].

    Returns (row_of_cell, cell_index, cells_in_row, cell_lo, cell_half).
    """
    n = np.maximum(1, np.rint(widths / target).astype(int))
    total = int(n.sum())
    row = np.repeat(np.arange(len(widths)), n)
    k = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(n)[:-1]]), n)
    w = (widths / n)[row]
    return row, k, n[row], lo[row] + k * w, 0.5 * w


def _axis_points_plain(lo, hi, target, n_rule):
    """Per-row Legendre chains on [lo_i, hi_i]: flat nodes/weights/row ids."""
    glx, glw = (lambda r: (r.points, r.weights))(gauss_legendre(n_rule))
    row, _, _, c_lo, half = _ragged_cells(hi - lo, lo, target)
    nodes = (c_lo + half)[:, None] + half[:, None] * glx[None, :]
    weights = half[:, None] * glw[None, :]
    return nodes.ravel(), weights.ravel(), np.repeat(row, n_rule)


def _axis_points_singular(lo, hi, s, alpha, target, n_rule):
    """Per-row chains on [lo_i, hi_i] split at s_i, absorbing |t-s|^-alpha.

    Cells adjacent to s use the mapped Jacobi rule; the rest use
    Legendre with the singular factor evaluated pointwise.
    """
    glx, glw = (lambda r: (r.points, r.weights))(gauss_legendre(n_rule))
    jx, jw = (lambda r: (r.points, r.weights))(gauss_jacobi(n_rule, alpha))
    segs = []
    for side in ("left", "right"):
        if side == "left":
            a, b = lo, s
        else:
            a, b = s, hi
        widths = b - a
        if not np.all(widths > 1e-14):
            raise AlignmentError("singular point must lie strictly inside the horizon")
        row, k, n_row, c_lo, half = _ragged_cells(widths, a, target)
        adj = (k == n_row - 1) if side == "left" else (k == 0)
        # plain cells
        pr, ph, pl = row[~adj], half[~adj], c_lo[~adj]
        nodes = (pl + ph)[:, None] + ph[:, None] * glx[None, :]
        wts = ph[:, None] * glw[None, :] * np.abs(nodes - s[pr, None]) ** (-alpha)
        segs.append((nodes.ravel(), wts.ravel(), np.repeat(pr, n_rule)))
        # adjacent cells, one per row
        ar, ah = row[adj], half[adj]
        if side == "left":
            nj = s[ar, None] - ah[:, None] * (1.0 - jx[None, :])
        else:
            nj = s[ar, None] + ah[:, None] * (1.0 - jx[None, :])
        wj = ah[:, None] ** (1.0 - alpha) * jw[None, :]
        segs.append((nj.ravel(), wj.ravel(), np.repeat(ar, n_rule)))
    nodes = np.concatenate([s[0] for s in segs])
    weights = np.concatenate([s[1] for s in segs])
    rows = np.concatenate([s[2] for s in segs])
    order = np.argsort(rows, kind="stable")
    return nodes[order], weights[order], rows[order]


def _cross_rows(xn, xw, xr, yn, yw, yr, n_rows):
    """Tensor product of per-row x and y chains; returns (pts, w, row)."""
    kx = np.bincount(xr, minlength=n_rows)
    ky = np.bincount(yr, minlength=n_rows)
    counts = kx * ky
    total = int(counts.sum())
    row = np.repeat(np.arange(n_rows), counts)
    within = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    offx = np.concatenate([[0], np.cumsum(kx)[:-1]])
    offy = np.concatenate([[0], np.cumsum(ky)[:-1]])
    xi = offx[row] + within // np.maximum(ky[row], 1)
    yi = offy[row] + within % np.maximum(ky[row], 1)
    pts = np.column_stack([xn[xi], yn[yi]])
    return pts, xw[xi] * yw[yi], row


def _rect_child_batch(bounds, anchors, alpha, target, n_rule):
    """Child quadrature for a batch of clamped rectangular horizons.

    bounds: (G, 4) as (x0, x1, y0, y1); anchors (G, 2).  With alpha the
    grids split at the anchor and weights absorb the per-axis singular
    factors.  Returns (pts, weights, gp_ids).
    """
    g = len(bounds)
    if alpha is None:
        xn, xw, xr = _axis_points_plain(bounds[:, 0], bounds[:, 1], target, n_rule)
        yn, yw, yr = _axis_points_plain(bounds[:, 2], bounds[:, 3], target, n_rule)
    else:
        xn, xw, xr = _axis_points_singular(
            bounds[:, 0], bounds[:, 1], anchors[:, 0], alpha, target, n_rule
        )
        yn, yw, yr = _axis_points_singular(
            bounds[:, 2], bounds[:, 3], anchors[:, 1], alpha, target, n_rule
        )
    return _cross_rows(xn, xw, xr, yn, yw, yr, g)


def _segments_child_batch(mesh, horizon, kernel, anchors, target, n_rule):
    """Per-anchor leg chains via the generic child mesher (loop per GP)."""
    pts, wts, gids = [], [], []
    for i, anchor in enumerate(anchors):
        region = horizon_geometry(horizon, anchor, mesh)
        cm = mesh_child(region, anchor, target)
        p, w = child_quadrature_points(cm, kernel, n_rule)
        if len(w):
            pts.append(p)
            wts.append(w)
            gids.append(np.full(len(w), i))
    if not pts:
        return np.empty((0, 2)), np.empty(0), np.empty(0, dtype=int)
    return np.vstack(pts), np.concatenate(wts), np.concatenate(gids)


def _polygon_child_batch(mesh, horizon, kernel, anchors, target, n_rule):
    pts, wts, gids = [], [], []
    for i, anchor in enumerate(anchors):
        region = horizon_geometry(horizon, anchor, mesh)
        cm = mesh_child(region, None, target)
        p, w = child_quadrature_points(cm, kernel, n_rule)
        if len(w):
            pts.append(p)
            wts.append(w)
            gids.append(np.full(len(w), i))
    if not pts:
        return np.empty((0, 2)), np.empty(0), np.empty(0, dtype=int)
    return np.vstack(pts), np.concatenate(wts), np.concatenate(gids)


def _child_batch(mesh, kernel, horizon, anchors, target, n_rule):
    """Dispatch on horizon type; returns (pts, weights, gp_ids, mode).

    mode "pointwise": weight carries the measure, multiply kernel values.
    mode "absorbed": weight carries kernel singular factors, multiply the
    constant smooth prefactor.
    """
    if isinstance(horizon, RectHorizon):
        from .geometry import _RectDomain

        dom = mesh.domain
        if not isinstance(dom, _RectDomain):
            raise NotImplementedError("rectangular horizons require a rectangular domain")
        x0 = np.maximum(anchors[:, 0] - horizon.half_width, 0.0)
        x1 = np.minimum(anchors[:, 0] + horizon.half_width, dom.lx)
        y0 = np.maximum(anchors[:, 1] - horizon.half_width, 0.0)
        y1 = np.minimum(anchors[:, 1] + horizon.half_width, dom.ly)
        bounds = np.column_stack([x0, x1, y0, y1])
        alpha = kernel.alpha if isinstance(kernel, PowerLaw) else None
        pts, w, gids = _rect_child_batch(bounds, anchors, alpha, target, n_rule)
        return pts, w, gids, ("absorbed" if alpha is not None else "pointwise")
    if isinstance(kernel, BidirectionalPowerLaw):
        pts, w, gids = _segments_child_batch(mesh, horizon, kernel, anchors, target, n_rule)
        return pts, w, gids, "absorbed"
    pts, w, gids = _polygon_child_batch(mesh, horizon, kernel, anchors, target, n_rule)
    return pts, w, gids, "pointwise"


def _kernel_prefactor(kernel):
    if isinstance(kernel, PowerLaw):
        return kernel.smooth_part
    if isinstance(kernel, BidirectionalPowerLaw):
        return 0.5 * kernel.leg_smooth_part
    return 1.0


# -- the chunk engine ----------------------------------------------------------


_CTX = {}


def _accumulate_E(n_gp, n_dof, n_nodes, w_eff, gp_ids, conn, grad):
    """Sum per-point strain-operator contributions into dense E stacks.

    Returns (E (n_gp, 3, n_dof)) with rows [exx, eyy, exy] where the
    shear row carries the half factor of the tensorial strain.
    """
    stride = 3 * n_dof
    base = gp_ids * stride
    m = conn.shape[1]
    cols_x = conn
    cols_y = conn + n_nodes
    gx = grad[:, :, 0] * w_eff[:, None]
    gy = grad[:, :, 1] * w_eff[:, None]
    idx = np.concatenate(
        [
            (base[:, None] + 0 * n_dof + cols_x).ravel(),
            (base[:, None] + 1 * n_dof + cols_y).ravel(),
            (base[:, None] + 2 * n_dof + cols_x).ravel(),
            (base[:, None] + 2 * n_dof + cols_y).ravel(),
        ]
    )
    vals = np.concatenate([gx.ravel(), gy.ravel(), (0.5 * gy).ravel(), (0.5 * gx).ravel()])
    flat = np.bincount(idx, weights=vals, minlength=n_gp * stride)
    return flat.reshape(n_gp, 3, n_dof)


def _chunk_triplets(chunk_id):
    """Nonlocal stiffness triplets for one chunk of parent elements."""
    ctx = _CTX
    mesh = ctx["mesh"]
    kernel = ctx["kernel"]
    horizon = ctx["horizon"]
    index = ctx["index"]
    C = ctx["C"]
    group = ctx["group"]
    target = ctx["target"]
    n_rule = ctx["n_rule"]
    n_nodes = mesh.n_nodes
    n_dof = 2 * n_nodes
    lo, hi = ctx["chunks"][chunk_id]
    sel = np.arange(lo, hi)
    eids = group.ids[sel]
    gpe = len(group.rule.weights)
    anchors = group.gp_xy[sel].reshape(-1, 2)     # (G, 2)
    n_gp = len(anchors)

    pts, w, gids, mode = _child_batch(mesh, kernel, horizon, anchors, target, n_rule)
    if len(w) == 0:
        return (np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0))
    if mode == "pointwise":
        w_eff = w * kernel.evaluate_pairs(anchors[gids], pts)
    else:
        w_eff = w * _kernel_prefactor(kernel)

    elem_ids, xis = bridge_many(index, mesh, pts)
    conn, _, grad = _grads_at(mesh, elem_ids, xis)
    E = _accumulate_E(n_gp, n_dof, n_nodes, w_eff, gids, conn, grad)
    EC = np.einsum("ij,gjd->gid", C, E)

    # test-side operator rows at the chunk's own parent Gauss points
    grads_own = group.grad[sel].reshape(n_gp, -1, 2)          # (G, m, 2)
    m = grads_own.shape[1]
    Gv = np.zeros((n_gp, 3, 2 * m))
    Gv[:, 0, :m] = grads_own[:, :, 0]
    Gv[:, 1, m:] = grads_own[:, :, 1]
    Gv[:, 2, :m] = grads_own[:, :, 1]
    Gv[:, 2, m:] = grads_own[:, :, 0]
    wdet = ctx["group"].wdet[sel].reshape(n_gp)
    rows_block = np.einsum("g,gji,gjd->gid", wdet, Gv, EC)    # (G, 2m, n_dof)
    rows_block = rows_block.reshape(len(sel), gpe, 2 * m, n_dof).sum(axis=1)

    conn_e = group.conn[sel]
    test_dofs = np.concatenate([conn_e, conn_e + n_nodes], axis=1)  # (e, 2m)
    e_i, r_i, c_i = np.nonzero(rows_block)
    vals = rows_block[e_i, r_i, c_i]
    rows = test_dofs[e_i, r_i]
    return rows, c_i, vals


def _run_chunks(n_chunks, workers):
    if workers <= 1 or n_chunks <= 1:
        return [_chunk_triplets(i) for i in range(n_chunks)]
    try:
        ctxmp = multiprocessing.get_context("fork")
    except ValueError:
        return [_chunk_triplets(i) for i in range(n_chunks)]
    with ctxmp.Pool(processes=min(workers, n_chunks)) as pool:
        return pool.map(_chunk_triplets, range(n_chunks))


# -- public assembly -----------------------------------------------------------


def nonlocal_stress_operator(
    mesh, index, kernel, horizon, material, x_gp, options: AssemblyOptions = None
):
    """Stress rows E (3 x 2*n_nodes) at one parent Gauss point."""
    options = options or AssemblyOptions()
    target = options.child_size or parent_scale(mesh) / options.rel_resolution
    anchors = np.atleast_2d(np.asarray(x_gp, dtype=float))
    pts, w, gids, mode = _child_batch(mesh, kernel, horizon, anchors, target, options.g_child)
    n_dof = 2 * mesh.n_nodes
    if len(w) == 0:
        return np.zeros((3, n_dof))
    if mode == "pointwise":
        w_eff = w * kernel.evaluate_pairs(anchors[gids], pts)
    else:
        w_eff = w * _kernel_prefactor(kernel)
    elem_ids, xis = bridge_many(index, mesh, pts)
    conn, _, grad = _grads_at(mesh, elem_ids, xis)
    E = _accumulate_E(1, n_dof, mesh.n_nodes, w_eff, gids, conn, grad)
    return material.voigt() @ E[0]


def assemble(
    mesh: ParentMesh,
    kernel: KernelSpec = None,
    horizon: HorizonSpec = None,
    material: MaterialModel = None,
    loads: Loads = None,
    options: AssemblyOptions = None,
    nonlocal_elements=None,
) -> GlobalSystem:
    """Assemble stiffness, mass and force.

    kernel=None assembles the classical local plane-strain operator.
    nonlocal_elements restricts the nonlocal constitutive integral to a
    subset of elements (the rest stay local); default is all elements
    when a kernel is given.
    """
    material = material or MaterialModel(1.0, 1.0, 1.0)
    loads = loads or Loads()
    options = options or AssemblyOptions()
    order = interpolation_order(mesh)
    g_parent = options.g_parent or (2 if order == 1 else 3)
    g_boundary = options.g_boundary or (order + 1)
    target = options.child_size or parent_scale(mesh) / options.rel_resolution
    n_nodes = mesh.n_nodes
    n_dof = 2 * n_nodes
    C = material.voigt()

    if kernel is None:
        nl_mask = np.zeros(mesh.n_elements, dtype=bool)
    elif nonlocal_elements is None:
        nl_mask = np.ones(mesh.n_elements, dtype=bool)
    else:
        nl_mask = np.zeros(mesh.n_elements, dtype=bool)
        nl_mask[np.asarray(nonlocal_elements, dtype=int)] = True

    rows, cols, vals = [], [], []
    m_rows, m_cols, m_vals = [], [], []
    F = np.zeros(n_dof)

    index = SpatialIndex(mesh) if np.any(nl_mask) else None

    for shape, (ids, conn) in mesh.shape_groups.items():
        group = _GroupData(mesh, shape, ids, conn, g_parent)
        m = group.fam.n_nodes
        test_dofs = np.concatenate([conn, conn + n_nodes], axis=1)  # (e, 2m)

        # mass and body force on every element
        rho = material.rho
        Me = rho * np.einsum("eg,gu,gv->euv", group.wdet, group.psi, group.psi)
        Mfull = np.zeros((len(ids), 2 * m, 2 * m))
        Mfull[:, :m, :m] = Me
        Mfull[:, m:, m:] = Me
        r = np.repeat(test_dofs[:, :, None], 2 * m, axis=2)
        c = np.repeat(test_dofs[:, None, :], 2 * m, axis=1)
        m_rows.append(r.ravel())
        m_cols.append(c.ravel())
        m_vals.append(Mfull.ravel())

        if loads.body is not None:
            fvals = loads.body(group.gp_xy.reshape(-1, 2)).reshape(len(ids), -1, 2)
            Fx = np.einsum("eg,eg,gu->eu", group.wdet, rho * fvals[:, :, 0], group.psi)
            Fy = np.einsum("eg,eg,gu->eu", group.wdet, rho * fvals[:, :, 1], group.psi)
            np.add.at(F, conn, Fx)
            np.add.at(F, conn + n_nodes, Fy)

        # local stiffness for elements outside the nonlocal set
        local_sel = np.nonzero(~nl_mask[ids])[0]
        if len(local_sel):
            g = group.grad[local_sel]                        # (e, g, m, 2)
            e_, gpe_ = g.shape[0], g.shape[1]
            Gu = np.zeros((e_, gpe_, 3, 2 * m))
            Gv = np.zeros((e_, gpe_, 3, 2 * m))
            gx, gy = g[..., 0], g[..., 1]
            Gu[:, :, 0, :m] = gx
            Gu[:, :, 1, m:] = gy
            Gu[:, :, 2, :m] = 0.5 * gy
            Gu[:, :, 2, m:] = 0.5 * gx
            Gv[:, :, 0, :m] = gx
            Gv[:, :, 1, m:] = gy
            Gv[:, :, 2, :m] = gy
            Gv[:, :, 2, m:] = gx
            wd = group.wdet[local_sel]
            Ke = np.einsum("eg,egji,jk,egkd->eid", wd, Gv, C, Gu)
            td = test_dofs[local_sel]
            rows.append(np.repeat(td[:, :, None], 2 * m, axis=2).ravel())
            cols.append(np.repeat(td[:, None, :], 2 * m, axis=1).ravel())
            vals.append(Ke.ravel())

        # nonlocal stiffness, chunked
        nl_sel = np.nonzero(nl_mask[ids])[0]
        if len(nl_sel):
            chunk = max(1, options.chunk_elems)
            chunks = [
                (int(nl_sel[i]), int(nl_sel[min(i + chunk, len(nl_sel)) - 1]) + 1)
                for i in range(0, len(nl_sel), chunk)
            ]
            # nl_sel is contiguous ascending for our meshes; guard otherwise
            if not np.array_equal(nl_sel, np.arange(nl_sel[0], nl_sel[-1] + 1)):
                chunks = [(int(s), int(s) + 1) for s in nl_sel]
            _CTX.clear()
            _CTX.update(
                dict(
                    mesh=mesh, kernel=kernel, horizon=horizon, index=index, C=C,
                    group=group, target=target, n_rule=options.g_child, chunks=chunks,
                )
            )
            for rr, cc, vv in _run_chunks(len(chunks), options.workers):
                rows.append(rr)
                cols.append(cc)
                vals.append(vv)
            _CTX.clear()

    # boundary tractions
    if loads.traction is not None:
        F += _traction_vector(mesh, loads.traction, g_boundary)

    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_dof, n_dof),
    ).tocsr()
    M = sp.coo_matrix(
        (np.concatenate(m_vals), (np.concatenate(m_rows), np.concatenate(m_cols))),
        shape=(n_dof, n_dof),
    ).tocsr()

    dirichlet = _dirichlet_values(mesh, loads.dirichlet)
    dof_map = np.column_stack([np.arange(n_nodes), np.arange(n_nodes) + n_nodes])
    meta = dict(
        order=order, g_parent=g_parent, g_child=options.g_child, g_boundary=g_boundary,
        child_target_size=target, rel_resolution=options.rel_resolution,
        workers=options.workers, parent_scale=parent_scale(mesh),
    )
    return GlobalSystem(K, M, F, dirichlet, dof_map, mesh, material, meta)


def _traction_vector(mesh, traction, g_boundary):
    F = np.zeros(2 * mesh.n_nodes)
    rule = gauss_legendre(g_boundary)
    for seg in mesh.boundary:
        if seg.kind != TRACTION:
            continue
        ids = np.asarray(seg.node_ids, dtype=int)
        fam = _shapes.family("line2" if len(ids) == 2 else "line3")
        ends = mesh.coords[ids[:2]]
        half = 0.5 * (ends[1] - ends[0])
        jac = float(np.hypot(*half))
        mid = 0.5 * (ends[0] + ends[1])
        pts = mid[None, :] + rule.points[:, None] * half[None, :]
        tvals = np.asarray(traction(pts), dtype=float)
        psi = fam.psi(rule.points)
        contrib = np.einsum("g,gu,gi->ui", rule.weights * jac, psi, tvals)
        np.add.at(F, ids, contrib[:, 0])
        np.add.at(F, ids + mesh.n_nodes, contrib[:, 1])
    return F


def _dirichlet_values(mesh, dirichlet_fn):
    node_set = set()
    for seg in mesh.boundary:
        if seg.kind == DIRICHLET:
            node_set.update(int(n) for n in seg.node_ids)
    nodes = np.array(sorted(node_set), dtype=int)
    if len(nodes) == 0:
        return []
    if dirichlet_fn is None:
        uvals = np.zeros((len(nodes), 2))
    else:
        uvals = np.asarray(dirichlet_fn(mesh.coords[nodes]), dtype=float)
    out = []
    for n, (ux, uy) in zip(nodes, uvals):
        out.append((int(n), float(ux)))
        out.append((int(n) + mesh.n_nodes, float(uy)))
    return out
