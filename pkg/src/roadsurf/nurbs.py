"""Rational tensor-product B-spline surfaces over a frozen plan-view lattice.

A surface is defined by degrees (p, q), clamped knot vectors, a grid of 3D
control points, and positive per-control weights:

    S(u, v) = sum_ij N_i(u) N_j(v) w_ij P_ij / sum_ij N_i(u) N_j(v) w_ij

Basis functions follow the standard recursion with the convention that
degree-0 boxes are half-open on the right, except that the final span of the
domain is closed so the upper domain end evaluates to the last control point.
Only (p+1)(q+1) basis products are nonzero at any parameter, which all
evaluation and gradient routines exploit.

Surfaces used for terrain work keep their control x/y fixed on a uniform
lattice (``xy_frozen``); the lattice corners define an affine map between
world x/y and the parameter domain, and only elevations and weights are ever
optimized.  The z component of the rational sum is then read as a height
field over the plan rectangle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import Raster


def uniform_clamped_knots(num_ctrl: int, degree: int, low: float = 0.0,
                          high: float = 1.0) -> np.ndarray:
    """Clamped knot vector with evenly spaced interior knots.

    Length is num_ctrl + degree + 1; the first and last degree+1 knots repeat
    the domain ends.
    """
    if degree < 1:
        raise ValueError("degree must be at least 1")
    if num_ctrl < degree + 1:
        raise ValueError(f"need at least degree+1={degree + 1} control points, got {num_ctrl}")
    if not high > low:
        raise ValueError("empty parameter domain")
    interior = num_ctrl - degree - 1
    inner = np.linspace(low, high, interior + 2)[1:-1]
    return np.concatenate([np.full(degree + 1, low), inner, np.full(degree + 1, high)])


def find_span(knots: np.ndarray, degree: int, u: float) -> int:
    """Index of the knot span containing u.

    For u at the upper domain end the last nonempty span is returned, which
    closes that span on the right.
    """
    n = len(knots) - degree - 2  # highest control index
    if u >= knots[n + 1]:
        return n
    if u <= knots[degree]:
        return degree
    lo, hi = degree, n + 1
    mid = (lo + hi) // 2
    while u < knots[mid] or u >= knots[mid + 1]:
        if u < knots[mid]:
            hi = mid
        else:
            lo = mid
        mid = (lo + hi) // 2
    return mid


@dataclass
class BasisSpan:
    """Nonzero basis values at one parameter: indices span-degree .. span."""

    span: int
    values: np.ndarray


def basis_functions(knots: np.ndarray, degree: int, u: float) -> BasisSpan:
    """The degree+1 nonzero basis functions at u.

    Raises ValueError for u outside the knot domain. Values are computed with
    the stable triangular recurrence; 0/0 terms never arise because only
    nonzero-span contributions are formed.
    """
    knots = np.asarray(knots, dtype=float)
    lo, hi = knots[degree], knots[-degree - 1]
    eps = 1e-12 * max(1.0, abs(hi - lo))
    if u < lo - eps or u > hi + eps:
        raise ValueError(f"parameter {u!r} outside domain [{lo!r}, {hi!r}]")
    u = min(max(u, lo), hi)
    span = find_span(knots, degree, u)
    values = np.zeros(degree + 1)
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    values[0] = 1.0
    for d in range(1, degree + 1):
        left[d] = u - knots[span + 1 - d]
        right[d] = knots[span + d] - u
        saved = 0.0
        for r in range(d):
            tmp = values[r] / (right[r + 1] + left[d - r])
            values[r] = saved + right[r + 1] * tmp
            saved = left[d - r] * tmp
        values[d] = saved
    return BasisSpan(span, values)


def basis_matrix(knots: np.ndarray, degree: int, params: np.ndarray) -> np.ndarray:
    """Dense matrix B with B[k, i] = N_i(params[k]) over all control indices."""
    params = np.asarray(params, dtype=float)
    num_ctrl = len(knots) - degree - 1
    out = np.zeros((params.size, num_ctrl))
    for k, u in enumerate(params):
        bs = basis_functions(knots, degree, u)
        out[k, bs.span - degree: bs.span + 1] = bs.values
    return out


@dataclass
class NurbsSurface:
    degree_u: int
    degree_v: int
    knots_u: np.ndarray
    knots_v: np.ndarray
    control_points: np.ndarray  # (nu, nv, 3), [a, b] with a along u and b along v
    weights: np.ndarray         # (nu, nv), strictly positive
    xy_frozen: bool = False

    def __post_init__(self):
        self.knots_u = np.asarray(self.knots_u, dtype=float)
        self.knots_v = np.asarray(self.knots_v, dtype=float)
        self.control_points = np.asarray(self.control_points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.control_points.ndim != 3 or self.control_points.shape[2] != 3:
            raise ValueError("control_points must have shape (nu, nv, 3)")
        nu, nv, _ = self.control_points.shape
        if self.weights.shape != (nu, nv):
            raise ValueError("weights shape must match the control grid")
        if not (self.weights > 0).all():
            raise ValueError("weights must be strictly positive")
        for knots, degree, n, axis in ((self.knots_u, self.degree_u, nu, "u"),
                                       (self.knots_v, self.degree_v, nv, "v")):
            if degree < 1:
                raise ValueError(f"degree_{axis} must be at least 1")
            if len(knots) != n + degree + 1:
                raise ValueError(
                    f"knots_{axis} must have {n + degree + 1} entries, got {len(knots)}")
            if (np.diff(knots) < 0).any():
                raise ValueError(f"knots_{axis} must be non-decreasing")
            if not (np.all(knots[:degree + 1] == knots[0])
                    and np.all(knots[-degree - 1:] == knots[-1])):
                raise ValueError(f"knots_{axis} must be clamped")
            if knots[0] == knots[-1]:
                raise ValueError(f"knots_{axis} spans an empty domain")

    @property
    def num_ctrl_u(self) -> int:
        return self.control_points.shape[0]

    @property
    def num_ctrl_v(self) -> int:
        return self.control_points.shape[1]

    @property
    def domain_u(self) -> tuple[float, float]:
        return float(self.knots_u[self.degree_u]), float(self.knots_u[-self.degree_u - 1])

    @property
    def domain_v(self) -> tuple[float, float]:
        return float(self.knots_v[self.degree_v]), float(self.knots_v[-self.degree_v - 1])

    def xy_extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the control lattice."""
        xs = self.control_points[:, :, 0]
        ys = self.control_points[:, :, 1]
        return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())

    def world_to_param(self, x, y):
        """Affine map from world x/y to (u, v) via the lattice extent.

        Inputs up to a relative 1e-6 outside the extent are clamped onto the
        domain edge; anything further out raises ValueError. Accepts arrays.
        """
        if not self.xy_frozen:
            raise ValueError("world mapping requires an xy_frozen lattice surface")
        x0, x1, y0, y1 = self.xy_extent()
        u0, u1 = self.domain_u
        v0, v1 = self.domain_v
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        tol_x = 1e-6 * (x1 - x0)
        tol_y = 1e-6 * (y1 - y0)
        if (x < x0 - tol_x).any() or (x > x1 + tol_x).any() \
                or (y < y0 - tol_y).any() or (y > y1 + tol_y).any():
            raise ValueError("world position outside the surface extent")
        u = u0 + (np.clip(x, x0, x1) - x0) / (x1 - x0) * (u1 - u0)
        v = v0 + (np.clip(y, y0, y1) - y0) / (y1 - y0) * (v1 - v0)
        return u, v

    def with_updates(self, control_z: np.ndarray | None = None,
                     weights: np.ndarray | None = None) -> "NurbsSurface":
        """Copy of the surface with new control elevations and/or weights."""
        ctrl = self.control_points.copy()
        if control_z is not None:
            ctrl[:, :, 2] = control_z
        w = self.weights.copy() if weights is None else np.asarray(weights, dtype=float)
        return NurbsSurface(self.degree_u, self.degree_v,
                            self.knots_u.copy(), self.knots_v.copy(),
                            ctrl, w, self.xy_frozen)


def lattice_surface(x_range: tuple[float, float], y_range: tuple[float, float],
                    num_u: int, num_v: int, degree_u: int = 3, degree_v: int = 3,
                    control_z: np.ndarray | None = None,
                    weights: np.ndarray | None = None) -> NurbsSurface:
    """Surface whose control x/y form a uniform lattice over the given ranges."""
    x0, x1 = x_range
    y0, y1 = y_range
    if not (x1 > x0 and y1 > y0):
        raise ValueError("lattice ranges must be non-degenerate")
    xs = np.linspace(x0, x1, num_u)
    ys = np.linspace(y0, y1, num_v)
    ctrl = np.zeros((num_u, num_v, 3))
    ctrl[:, :, 0] = xs[:, None]
    ctrl[:, :, 1] = ys[None, :]
    if control_z is not None:
        ctrl[:, :, 2] = control_z
    if weights is None:
        weights = np.ones((num_u, num_v))
    return NurbsSurface(
        degree_u, degree_v,
        uniform_clamped_knots(num_u, degree_u),
        uniform_clamped_knots(num_v, degree_v),
        ctrl, weights, xy_frozen=True)


def _active_patch(surface: NurbsSurface, u: float, v: float):
    bu = basis_functions(surface.knots_u, surface.degree_u, u)
    bv = basis_functions(surface.knots_v, surface.degree_v, v)
    au = slice(bu.span - surface.degree_u, bu.span + 1)
    av = slice(bv.span - surface.degree_v, bv.span + 1)
    coeff = np.outer(bu.values, bv.values) * surface.weights[au, av]
    return au, av, coeff


def evaluate(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    """Surface point at (u, v) as an xyz array."""
    au, av, coeff = _active_patch(surface, u, v)
    den = coeff.sum()
    num = np.tensordot(coeff, surface.control_points[au, av], axes=([0, 1], [0, 1]))
    return num / den


def gradients(surface: NurbsSurface, u: float, v: float) -> tuple[np.ndarray, np.ndarray]:
    """Partials of the surface elevation at (u, v).

    Returns (d_z / d_control_z, d_z / d_weight), each shaped like the control
    grid; entries outside the active (p+1) x (q+1) window are zero.
    """
    au, av, coeff = _active_patch(surface, u, v)
    den = coeff.sum()
    z_patch = surface.control_points[au, av, 2]
    sz = float((coeff * z_patch).sum() / den)
    d_ctrl = np.zeros((surface.num_ctrl_u, surface.num_ctrl_v))
    d_w = np.zeros_like(d_ctrl)
    d_ctrl[au, av] = coeff / den
    # for weights the basis product enters without the weight factor
    d_w[au, av] = coeff / surface.weights[au, av] * (z_patch - sz) / den
    return d_ctrl, d_w


def _grid_terms(surface: NurbsSurface, xs: np.ndarray, ys: np.ndarray):
    """Basis matrices and rational terms for a world-aligned grid of queries.

    Returns (bu, bv, z, den): bu is (len(xs), nu), bv is (len(ys), nv), and z
    and den are (len(ys), len(xs)) with z the height field and den the
    rational denominator.  Shared by rasterization and the fit gradients.
    """
    us, _ = surface.world_to_param(xs, np.full(np.size(xs), surface.xy_extent()[2]))
    _, vs = surface.world_to_param(np.full(np.size(ys), surface.xy_extent()[0]), ys)
    bu = basis_matrix(surface.knots_u, surface.degree_u, us)
    bv = basis_matrix(surface.knots_v, surface.degree_v, vs)
    wz = surface.weights * surface.control_points[:, :, 2]
    den = bv @ surface.weights.T @ bu.T
    z = (bv @ wz.T @ bu.T) / den
    return bu, bv, z, den


def evaluate_grid(surface: NurbsSurface, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Height field sampled on the tensor grid of world columns xs and rows ys.

    Output has shape (len(ys), len(xs)).
    """
    return _grid_terms(surface, xs, ys)[2]


def rasterize(surface: NurbsSurface, template: Raster) -> Raster:
    """Surface heights at every cell center of the template grid."""
    xs = template.origin_x + np.arange(template.width) * template.cell_size_x
    ys = template.origin_y + np.arange(template.height) * template.cell_size_y
    values = evaluate_grid(surface, xs, ys)
    return Raster(template.width, template.height, template.cell_size_x,
                  template.cell_size_y, template.origin_x, template.origin_y, values)


def save_surface(surface: NurbsSurface, path: str | Path) -> None:
    """Plain-text serialization; see load_surface for the layout."""
    lines = [
        "roadsurf-surface 1",
        f"degree {surface.degree_u} {surface.degree_v}",
        f"shape {surface.num_ctrl_u} {surface.num_ctrl_v}",
        f"xy_frozen {int(surface.xy_frozen)}",
        "knots_u " + " ".join(repr(float(k)) for k in surface.knots_u),
        "knots_v " + " ".join(repr(float(k)) for k in surface.knots_v),
    ]
    for a in range(surface.num_ctrl_u):
        for b in range(surface.num_ctrl_v):
            x, y, z = (float(c) for c in surface.control_points[a, b])
            w = float(surface.weights[a, b])
            lines.append(f"cp {x!r} {y!r} {z!r} {w!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_surface(path: str | Path) -> NurbsSurface:
    """Read a surface written by save_surface.

    Format: a signature line, then ``degree p q``, ``shape nu nv``,
    ``xy_frozen 0|1``, the two knot vectors, and one ``cp x y z w`` line per
    control point in row-major (u-major) order.
    """
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("roadsurf-surface"):
        raise ValueError(f"{path}: not a surface file")
    fields: dict[str, list[str]] = {}
    cps: list[list[float]] = []
    for line in text[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "cp":
            cps.append([float(v) for v in parts[1:]])
        else:
            fields[parts[0]] = parts[1:]
    try:
        p, q = (int(v) for v in fields["degree"])
        nu, nv = (int(v) for v in fields["shape"])
        frozen = bool(int(fields["xy_frozen"][0]))
        knots_u = np.array([float(v) for v in fields["knots_u"]])
        knots_v = np.array([float(v) for v in fields["knots_v"]])
    except KeyError as missing:
        raise ValueError(f"{path}: missing field {missing}") from None
    if len(cps) != nu * nv or any(len(c) != 4 for c in cps):
        raise ValueError(f"{path}: expected {nu * nv} 'cp x y z w' lines")
    arr = np.array(cps).reshape(nu, nv, 4)
    return NurbsSurface(p, q, knots_u, knots_v, arr[:, :, :3], arr[:, :, 3], frozen)
