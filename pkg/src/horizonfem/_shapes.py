"""Lagrange shape function families on reference cells.

Displacement interpolation may be first or second order; the geometric
map always uses the linear/bilinear corner subset, so coordinate maps
stay affine (triangles) or bilinear (quadrilaterals).
"""

import numpy as np

REF_SQUARE_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
REF_TRI_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _lag1(t):
    """1D linear Lagrange values at nodes {-1, +1}: shape (npts, 2)."""
    t = np.asarray(t, dtype=float)
    return np.stack([(1.0 - t) / 2.0, (1.0 + t) / 2.0], axis=-1)


def _dlag1(t):
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (2,))
    out[..., 0] = -0.5
    out[..., 1] = 0.5
    return out


def _lag2(t):
    """1D quadratic Lagrange values at nodes {-1, 0, +1}: shape (npts, 3)."""
    t = np.asarray(t, dtype=float)
    return np.stack([t * (t - 1.0) / 2.0, 1.0 - t * t, t * (t + 1.0) / 2.0], axis=-1)


def _dlag2(t):
    t = np.asarray(t, dtype=float)
    return np.stack([t - 0.5, -2.0 * t, t + 0.5], axis=-1)


# Tensor index (i, j) of each node, i along xi and j along eta, in {-1,0,+1}
# mapped to 1D Lagrange slots {0,1,2} as {-1:0, 0:1, +1:2}.
_Q4_IDX = [(0, 0), (2, 0), (2, 2), (0, 2)]
_Q9_IDX = _Q4_IDX + [(1, 0), (2, 1), (1, 2), (0, 1), (1, 1)]


class ShapeFamily:
    """Vectorized shape function evaluation for one element family."""

    def __init__(self, name, n_nodes, n_geom, ref_corners):
        self.name = name
        self.n_nodes = n_nodes
        self.n_geom = n_geom
        self.ref_corners = ref_corners

    def psi(self, xi):
        """Values at reference points xi (npts, dim) -> (npts, n_nodes)."""
        raise NotImplementedError

    def dpsi(self, xi):
        """Reference gradients at xi -> (npts, n_nodes, dim)."""
        raise NotImplementedError

    def geom_psi(self, xi):
        """Geometric (corner) shape values -> (npts, n_geom)."""
        raise NotImplementedError

    def geom_dpsi(self, xi):
        raise NotImplementedError


class _QuadFamily(ShapeFamily):
    def __init__(self, order):
        n = 4 if order == 1 else 9
        super().__init__("q4" if order == 1 else "q9", n, 4, REF_SQUARE_CORNERS)
        self._order = order
        self._idx = _Q4_IDX if order == 1 else _Q9_IDX

    def _vals(self, xi, order):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if order == 1:
            lx, ly = _lag1(xi[:, 0]), _lag1(xi[:, 1])
            dlx, dly = _dlag1(xi[:, 0]), _dlag1(xi[:, 1])
            idx = [(0, 0), (1, 0), (1, 1), (0, 1)]
        else:
            lx, ly = _lag2(xi[:, 0]), _lag2(xi[:, 1])
            dlx, dly = _dlag2(xi[:, 0]), _dlag2(xi[:, 1])
            idx = self._idx
        ii = np.array([i for i, _ in idx])
        jj = np.array([j for _, j in idx])
        vals = lx[:, ii] * ly[:, jj]
        grads = np.stack([dlx[:, ii] * ly[:, jj], lx[:, ii] * dly[:, jj]], axis=-1)
        return vals, grads

    def psi(self, xi):
        return self._vals(xi, self._order)[0]

    def dpsi(self, xi):
        return self._vals(xi, self._order)[1]

    def geom_psi(self, xi):
        return self._vals(xi, 1)[0]

    def geom_dpsi(self, xi):
        return self._vals(xi, 1)[1]


class _TriFamily(ShapeFamily):
    def __init__(self, order):
        n = 3 if order == 1 else 6
        super().__init__("t3" if order == 1 else "t6", n, 3, REF_TRI_CORNERS)
        self._order = order

    def psi(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        l0 = 1.0 - xi[:, 0] - xi[:, 1]
        l1, l2 = xi[:, 0], xi[:, 1]
        if self._order == 1:
            return np.stack([l0, l1, l2], axis=-1)
        return np.stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l2 * l0,
            ],
            axis=-1,
        )

    def dpsi(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        npts = xi.shape[0]
        l0 = 1.0 - xi[:, 0] - xi[:, 1]
        l1, l2 = xi[:, 0], xi[:, 1]
        if self._order == 1:
            g = np.zeros((npts, 3, 2))
            g[:, 0] = [-1.0, -1.0]
            g[:, 1] = [1.0, 0.0]
            g[:, 2] = [0.0, 1.0]
            return g
        g = np.empty((npts, 6, 2))
        g[:, 0, 0] = 1 - 4 * l0
        g[:, 0, 1] = 1 - 4 * l0
        g[:, 1, 0] = 4 * l1 - 1
        g[:, 1, 1] = 0.0
        g[:, 2, 0] = 0.0
        g[:, 2, 1] = 4 * l2 - 1
        g[:, 3, 0] = 4 * (l0 - l1)
        g[:, 3, 1] = -4 * l1
        g[:, 4, 0] = 4 * l2
        g[:, 4, 1] = 4 * l1
        g[:, 5, 0] = -4 * l2
        g[:, 5, 1] = 4 * (l0 - l2)
        return g

    def geom_psi(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return np.stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]], axis=-1)

    def geom_dpsi(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        g = np.zeros((xi.shape[0], 3, 2))
        g[:, 0] = [-1.0, -1.0]
        g[:, 1] = [1.0, 0.0]
        g[:, 2] = [0.0, 1.0]
        return g


class _LineFamily(ShapeFamily):
    """1D boundary element on [-1, 1]; geometry is always the 2-node chord."""

    def __init__(self, order):
        n = 2 if order == 1 else 3
        super().__init__("line2" if order == 1 else "line3", n, 2, None)
        self._order = order

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        if self._order == 1:
            return _lag1(t)
        v = _lag2(t)
        # node order: ends first, midpoint last
        return v[..., [0, 2, 1]]

    def dpsi(self, t):
        t = np.asarray(t, dtype=float)
        if self._order == 1:
            return _dlag1(t)
        v = _dlag2(t)
        return v[..., [0, 2, 1]]

    def geom_psi(self, t):
        return _lag1(t)

    def geom_dpsi(self, t):
        return _dlag1(t)


_FAMILIES = {
    "q4": _QuadFamily(1),
    "q9": _QuadFamily(2),
    "t3": _TriFamily(1),
    "t6": _TriFamily(2),
    "line2": _LineFamily(1),
    "line3": _LineFamily(2),
}


def family(shape: str) -> ShapeFamily:
    """Look up the shape family for a connectivity token (q4, q9, t3, t6, ...)."""
    try:
        return _FAMILIES[shape]
    except KeyError:
        raise ValueError(f"unsupported element shape {shape!r}") from None


def jacobians(corner_coords, geom_grads):
    """Jacobian matrices dx/dxi for a batch of points.

    Parameters
    ----------
    corner_coords : (npts, n_geom, 2)
    geom_grads : (npts, n_geom, 2)

    Returns
    -------
    J : (npts, 2, 2) with J[p][i][j] = d x_i / d xi_j.
    """
    return np.einsum("pdi,pdj->pij", corner_coords, geom_grads)


def inv2(J):
    """Inverse of a batch of 2x2 matrices, with determinants."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1]
    inv[..., 0, 1] = -J[..., 0, 1]
    inv[..., 1, 0] = -J[..., 1, 0]
    inv[..., 1, 1] = J[..., 0, 0]
    return inv / det[..., None, None], det
