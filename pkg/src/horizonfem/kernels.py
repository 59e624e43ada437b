"""Attenuation kernels and horizon geometry.

Kernels are immutable value objects evaluated pairwise between a field
point x and a source point xp.  Horizon specs describe the support of
the kernel around a point; ``horizon_geometry`` intersects that support
with the material domain and returns a ``TruncatedRegion`` that the
child mesher can tile.
"""

from dataclasses import dataclass
from math import gamma

import numpy as np

from .geometry import ParentMesh, point_in_domain, _RectDomain, _AnnulusDomain


# -- kernel specs -------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    singular = False

    def _from_separation(self, d):
        raise NotImplementedError

    def evaluate(self, x, xp):
        """Kernel value(s) for field point x (2,) and source points xp (n, 2)."""
        return self._from_separation(np.atleast_2d(xp) - np.asarray(x, dtype=float))

    def evaluate_pairs(self, xs, xps):
        """Rowwise kernel values for matched arrays of field/source points."""
        return self._from_separation(np.atleast_2d(xps) - np.atleast_2d(xs))


@dataclass(frozen=True)
class BiExponential(KernelSpec):
    """Separable Gaussian decay; tau > 0 sets the squared decay length."""

    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("BiExponential tau must be positive")

    def _from_separation(self, d):
        return np.exp(-(d[:, 0] ** 2 + d[:, 1] ** 2) / self.tau) / (np.pi * self.tau)


@dataclass(frozen=True)
class PowerLaw(KernelSpec):
    """Separable per-axis power-law decay, weakly singular on x'=x and y'=y."""

    alpha: float
    singular = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("PowerLaw alpha must lie in (0, 1)")

    @property
    def smooth_part(self):
        return 1.0 / gamma(1.0 - self.alpha) ** 2

    def _from_separation(self, d):
        d = np.abs(d)
        if np.any(d == 0.0):
            raise ValueError("power-law kernel evaluated on a singular line")
        return self.smooth_part * d[:, 0] ** -self.alpha * d[:, 1] ** -self.alpha


@dataclass(frozen=True)
class RadialExponential(KernelSpec):
    """Radially symmetric exponential: amplitude 1/tau1, decay length tau2."""

    tau1: float
    tau2: float

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("RadialExponential parameters must be positive")

    def _from_separation(self, d):
        r = np.hypot(d[:, 0], d[:, 1])
        return np.exp(-r / self.tau2) / self.tau1


@dataclass(frozen=True)
class Rational(KernelSpec):
    """Rational decay 1 / (tau1 r^2 + tau2)."""

    tau1: float
    tau2: float

    def __post_init__(self):
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ValueError("Rational parameters must be positive")

    def _from_separation(self, d):
        r2 = d[:, 0] ** 2 + d[:, 1] ** 2
        return 1.0 / (self.tau1 * r2 + self.tau2)


@dataclass(frozen=True)
class BidirectionalPowerLaw(KernelSpec):
    """Power-law decay restricted to the two axis-aligned line segments
    through x; the two one-dimensional convolutions are averaged with an
    overall factor 1/2 applied at assembly time.
    """

    alpha: float
    singular = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("BidirectionalPowerLaw alpha must lie in (0, 1)")

    @property
    def leg_smooth_part(self):
        return 1.0 / (2.0 * gamma(1.0 - self.alpha))

    def _from_separation(self, d):
        out = np.zeros(len(d))
        on_x_leg = d[:, 1] == 0.0
        on_y_leg = d[:, 0] == 0.0
        if np.any(on_x_leg & on_y_leg):
            raise ValueError("bidirectional kernel evaluated at its singular point")
        out[on_x_leg] = self.leg_smooth_part * np.abs(d[on_x_leg, 0]) ** -self.alpha
        out[on_y_leg] = self.leg_smooth_part * np.abs(d[on_y_leg, 1]) ** -self.alpha
        return 0.5 * out


def kernel_eval(spec: KernelSpec, x, xp) -> float:
    """Scalar kernel value K(x, x')."""
    return float(spec.evaluate(x, np.asarray(xp, dtype=float)[None, :])[0])


def kernel_split_factors(spec: KernelSpec, x=None, xp=None):
    """Smooth prefactor and per-axis singular exponents of a singular kernel.

    The per-axis ``|delta|**(-alpha)`` factors are excluded from the
    smooth part so the child integrator can absorb them into endpoint
    weighted quadrature.  For the bidirectional kernel the result is for
    one leg (the x leg unless ``x``/``xp`` identify the y leg); the
    overall averaging factor 1/2 is applied by the caller.
    """
    if isinstance(spec, PowerLaw):
        return spec.smooth_part, (spec.alpha, spec.alpha)
    if isinstance(spec, BidirectionalPowerLaw):
        axis = 0
        if x is not None and xp is not None:
            d = np.asarray(xp, dtype=float) - np.asarray(x, dtype=float)
            axis = 1 if d[0] == 0.0 and d[1] != 0.0 else 0
        exps = (spec.alpha, None) if axis == 0 else (None, spec.alpha)
        return spec.leg_smooth_part, exps
    raise ValueError(f"{type(spec).__name__} kernel has no singular factors")


# -- horizon specs ------------------------------------------------------------


@dataclass(frozen=True)
class HorizonSpec:
    pass


@dataclass(frozen=True)
class RectHorizon(HorizonSpec):
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("horizon half_width must be positive")


@dataclass(frozen=True)
class CircleHorizon(HorizonSpec):
    radius: float
    n_facets: int = 64  # 16 per quarter arc

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("horizon radius must be positive")
        if self.n_facets < 8:
            raise ValueError("need at least 8 facets")


@dataclass(frozen=True)
class SegmentsHorizon(HorizonSpec):
    half_length: float

    def __post_init__(self):
        if self.half_length <= 0:
            raise ValueError("horizon half_length must be positive")


@dataclass(frozen=True)
class FullRegionHorizon(HorizonSpec):
    """Horizon equal to a fixed subregion, independent of the field point."""

    region_id: str
    polygon: tuple  # CCW vertex loop, ((x, y), ...)


# -- truncated regions --------------------------------------------------------


@dataclass(frozen=True)
class TruncatedRegion:
    """Intersection of an ideal horizon with the material domain.

    kind "rect": bounds (x0, x1, y0, y1).
    kind "polygon": CCW vertices (n, 2), star shaped around the anchor.
    kind "segments": intervals ((ax0, ax1), (ay0, ay1)) of the two legs;
        an interval may be None when fully clipped away.
    """

    kind: str
    anchor: tuple
    bounds: tuple = None
    vertices: tuple = None
    intervals: tuple = None

    def measure(self) -> float:
        """Area (2D kinds) or total length (segments)."""
        if self.kind == "rect":
            x0, x1, y0, y1 = self.bounds
            return max(x1 - x0, 0.0) * max(y1 - y0, 0.0)
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            x, y = v[:, 0], v[:, 1]
            return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if self.kind == "segments":
            total = 0.0
            for iv in self.intervals:
                if iv is not None:
                    total += iv[1] - iv[0]
            return total
        return 0.0

    @property
    def is_empty(self):
        return self.kind == "empty" or self.measure() < 1e-14


def _clip_polygon_halfplane(verts, origin, normal):
    """Keep the part of a convex polygon with (p - origin) . normal >= 0."""
    out = []
    n = len(verts)
    d = [(np.dot(v - origin, normal)) for v in verts]
    for i in range(n):
        j = (i + 1) % n
        if d[i] >= 0:
            out.append(verts[i])
        if (d[i] > 0) != (d[j] > 0) and d[i] != d[j]:
            t = d[i] / (d[i] - d[j])
            if 0.0 < t < 1.0:
                out.append(verts[i] + t * (verts[j] - verts[i]))
    return np.asarray(out) if out else np.empty((0, 2))


def _interval_clip_rect(t0, half, lo, hi):
    return max(t0 - half, lo), min(t0 + half, hi)


def _annulus_leg_interval(x, axis, half, r_in, r_out):
    """Clipped leg through x along axis; connected component containing x."""
    c_fixed = x[1 - axis]
    t0 = x[axis]
    out_sq = r_out**2 - c_fixed**2
    if out_sq <= 0:
        return None
    b = np.sqrt(out_sq)
    in_sq = r_in**2 - c_fixed**2
    a = np.sqrt(in_sq) if in_sq > 0 else 0.0
    # admissible |t| in [a, b]; pick the component containing t0
    if a > 0.0 and abs(t0) < a:
        return None
    if t0 >= 0:
        lo, hi = (a, b) if a > 0 else (-b, b)
    else:
        lo, hi = (-b, -a) if a > 0 else (-b, b)
    lo, hi = max(lo, t0 - half), min(hi, t0 + half)
    if hi - lo < 1e-14:
        return None
    return (lo, hi)


def horizon_geometry(h: HorizonSpec, x, mesh: ParentMesh) -> TruncatedRegion:
    """Intersect the ideal horizon of x with the material domain."""
    x = np.asarray(x, dtype=float)
    if not point_in_domain(mesh, x):
        raise ValueError(f"horizon centre {tuple(x)} lies outside the domain")
    dom = mesh.domain

    if isinstance(h, RectHorizon):
        if not isinstance(dom, _RectDomain):
            raise NotImplementedError("rectangular horizons require a rectangular domain")
        x0, x1 = _interval_clip_rect(x[0], h.half_width, 0.0, dom.lx)
        y0, y1 = _interval_clip_rect(x[1], h.half_width, 0.0, dom.ly)
        return TruncatedRegion(kind="rect", anchor=tuple(x), bounds=(x0, x1, y0, y1))

    if isinstance(h, CircleHorizon):
        if not isinstance(dom, _RectDomain):
            raise NotImplementedError("circular horizons require a rectangular domain")
        th = 2.0 * np.pi * np.arange(h.n_facets) / h.n_facets
        verts = np.column_stack([x[0] + h.radius * np.cos(th), x[1] + h.radius * np.sin(th)])
        for origin, normal in (
            ((0.0, 0.0), (1.0, 0.0)),
            ((dom.lx, 0.0), (-1.0, 0.0)),
            ((0.0, 0.0), (0.0, 1.0)),
            ((0.0, dom.ly), (0.0, -1.0)),
        ):
            verts = _clip_polygon_halfplane(verts, np.asarray(origin), np.asarray(normal))
            if len(verts) == 0:
                return TruncatedRegion(kind="empty", anchor=tuple(x))
        return TruncatedRegion(
            kind="polygon", anchor=tuple(x), vertices=tuple(map(tuple, verts))
        )

    if isinstance(h, SegmentsHorizon):
        if isinstance(dom, _AnnulusDomain):
            ivx = _annulus_leg_interval(x, 0, h.half_length, dom.r_in, dom.r_out_inscribed)
            ivy = _annulus_leg_interval(x, 1, h.half_length, dom.r_in, dom.r_out_inscribed)
        elif isinstance(dom, _RectDomain):
            ivx = _interval_clip_rect(x[0], h.half_length, 0.0, dom.lx)
            ivy = _interval_clip_rect(x[1], h.half_length, 0.0, dom.ly)
        else:
            raise NotImplementedError("segment horizons need a rectangular or annular domain")
        return TruncatedRegion(kind="segments", anchor=tuple(x), intervals=(ivx, ivy))

    if isinstance(h, FullRegionHorizon):
        return TruncatedRegion(kind="polygon", anchor=tuple(x), vertices=h.polygon)

    raise ValueError(f"unknown horizon spec {type(h).__name__}")
