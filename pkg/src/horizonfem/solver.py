"""Static solves, the classical local reference path, and field metrics."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _shapes
from .assembly import AssemblyOptions, GlobalSystem, Loads, MaterialModel, assemble
from .errors import NumericError
from .geometry import ParentMesh
from .scale_bridge import SpatialIndex, bridge_many

_RESIDUAL_TOL = 1e-8
_COND_LIMIT = 1e14


@dataclass
class SolveResult:
    displacements: np.ndarray  # (n_nodes, 2)
    residual_norm: float
    stats: dict = field(default_factory=dict)

    def flat(self):
        """DOF vector in x-block/y-block layout."""
        return np.concatenate([self.displacements[:, 0], self.displacements[:, 1]])


def solve_static(system: GlobalSystem) -> SolveResult:
    """Solve K u = F after Dirichlet row/column elimination with load lifting."""
    n = system.n_dof
    u = np.zeros(n)
    fixed = np.array([d for d, _ in system.dirichlet], dtype=int)
    if len(fixed):
        vals = np.array([v for _, v in system.dirichlet])
        order = np.argsort(fixed)
        fixed, vals = fixed[order], vals[order]
        u[fixed] = vals
    free = np.setdiff1d(np.arange(n), fixed)
    K = system.K.tocsc()
    stats = {"n_free": len(free), "factorized": False}
    if len(free) == 0:
        return SolveResult(_as_field(system, u), 0.0, stats)
    rhs = system.F[free] - K[np.ix_(free, fixed)] @ u[fixed] if len(fixed) else system.F[free]
    Kff = K[np.ix_(free, free)]
    try:
        lu = spla.splu(Kff.tocsc())
    except RuntimeError as exc:
        raise NumericError(f"stiffness factorization failed ({exc}); review boundary conditions") from exc
    uf = lu.solve(rhs)
    stats["factorized"] = True
    if not np.all(np.isfinite(uf)):
        raise NumericError("solver produced non-finite displacements; review boundary conditions")
    denom = np.linalg.norm(rhs)
    res = np.linalg.norm(Kff @ uf - rhs) / (denom if denom > 0 else 1.0)
    if res > _RESIDUAL_TOL:
        cond = _estimate_condition(Kff, lu)
        if cond > _COND_LIMIT:
            raise NumericError(
                f"system is ill-conditioned (estimate {cond:.2e}); review boundary conditions"
            )
        raise NumericError(f"solver residual {res:.2e} exceeds {_RESIDUAL_TOL:.0e}")
    u[free] = uf
    stats["residual"] = float(res)
    return SolveResult(_as_field(system, u), float(res), stats)


def _estimate_condition(Kff, lu):
    try:
        n = Kff.shape[0]
        inv = spla.LinearOperator((n, n), matvec=lu.solve)
        return spla.onenormest(Kff) * spla.onenormest(inv)
    except Exception:
        return np.inf


def _as_field(system, u):
    n = system.mesh.n_nodes
    return np.column_stack([u[:n], u[n:]])


def solve_local_reference(
    mesh: ParentMesh, material: MaterialModel, loads: Loads, options: AssemblyOptions = None
) -> SolveResult:
    """Classical local plane-strain FEM on the same mesh (oracle path)."""
    system = assemble(mesh, kernel=None, material=material, loads=loads, options=options)
    return solve_static(system)


def field_metrics(a: SolveResult, b: SolveResult) -> dict:
    """Relative Euclidean distance (percent) and peak values of two fields."""
    ua, ub = a.displacements, b.displacements
    if ua.shape != ub.shape:
        raise ValueError("field layouts differ")
    denom = np.linalg.norm(ub)
    delta = 100.0 * np.linalg.norm(ua - ub) / denom if denom > 0 else (
        0.0 if np.linalg.norm(ua) == 0 else np.inf
    )
    iux = int(np.argmax(np.abs(ua[:, 0])))
    mag = np.linalg.norm(ua, axis=1)
    imag = int(np.argmax(mag))
    return {
        "delta_percent": float(delta),
        "max_ux": float(np.abs(ua[iux, 0])),
        "max_ux_node": iux,
        "max_u": float(mag[imag]),
        "max_u_node": imag,
    }


def evaluate_displacement(mesh: ParentMesh, displacements, points, index=None):
    """Interpolate a nodal field at arbitrary interior points."""
    index = index or SpatialIndex(mesh)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    elem_ids, xis = bridge_many(index, mesh, pts)
    out = np.empty((len(pts), 2))
    for shape, (ids, conn) in mesh.shape_groups.items():
        fam = _shapes.family(shape)
        member = np.zeros(mesh.n_elements, dtype=bool)
        member[ids] = True
        sel = np.nonzero(member[elem_ids])[0]
        if len(sel) == 0:
            continue
        rows = np.searchsorted(ids, elem_ids[sel])
        psi = fam.psi(xis[sel])
        out[sel] = np.einsum("pm,pmi->pi", psi, displacements[conn[rows]])
    return out
