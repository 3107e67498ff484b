"""Surface fitting: composite loss and gradient descent on control elevations
and weights.

The loss pulls the surface toward the DSM inside the road mask and toward the
DTM outside it, both as mean absolute residuals over the raster, plus a
squared-range penalty on control-point elevation neighborhoods that keeps the
lattice smooth.  Gradients are analytic throughout: the rasterized residual
terms chain through the rational basis, and weights are optimized through a
log reparameterization so they stay positive.  Log-weights are additionally
clipped to a fixed box after every step: the optimizer takes near-constant
magnitude steps, so an unbounded parameterization would let weights drift to
extremes that condition the rational denominator badly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Mask, Raster
from .nurbs import NurbsSurface, _grid_terms, lattice_surface

# control-grid 8-neighborhood (da, db), fixed order; ties in the neighborhood
# range pick the earliest offset
_CTRL_OFFSETS = [
    (da, db)
    for db in (-1, 0, 1)
    for da in (-1, 0, 1)
    if (da, db) != (0, 0)
]

# bound on |log w| during fitting; weight ratios beyond e^4 between lattice
# neighbors add no useful shape freedom for a height field
_LOG_WEIGHT_CLIP = 2.0


@dataclass
class LossWeights:
    """Term weights for the composite loss.

    The roughness term is normalized by control-point count, which makes it
    several times stronger per parameter than the raster-mean data terms, so
    its default weight is well below 1; larger values visibly flatten sloped
    terrain and spread any bad initial elevations sideways.
    """

    lambda_terrain: float = 1.0
    lambda_reg: float = 0.05

    def __post_init__(self):
        if self.lambda_terrain < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class FitConfig:
    learning_rate: float = 0.1
    max_iters: int = 200
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")


@dataclass
class FitReport:
    """Loss trace and outcome of one optimization run.

    The history lists hold one entry per performed iteration, evaluated at
    the iterate the step started from.
    """

    loss_total: list[float] = field(default_factory=list)
    loss_road: list[float] = field(default_factory=list)
    loss_terrain: list[float] = field(default_factory=list)
    loss_reg: list[float] = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""
    best_iteration: int = -1
    best_loss: float = float("inf")


class FitDivergedError(RuntimeError):
    """Non-finite loss during optimization; carries the partial report."""

    def __init__(self, message: str, report: FitReport):
        super().__init__(message)
        self.report = report


def _abs_residual_loss(reference: np.ndarray, predicted: np.ndarray,
                       select: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute residual over selected, present cells of the reference.

    Normalization is by the full cell count; deselected and missing cells
    contribute zero.  Returns the loss and its gradient with respect to the
    predicted raster (zero subgradient where the residual vanishes).
    """
    h, w = reference.shape
    use = select & ~np.isnan(reference)
    residual = np.where(use, reference - predicted, 0.0)
    value = float(np.abs(residual).sum() / (h * w))
    grad = -np.sign(residual) / (h * w)
    return value, grad


def loss_road(surface_raster: Raster, dsm: Raster, mask_plus: Mask) -> tuple[float, np.ndarray]:
    """Absolute deviation from the DSM inside the mask."""
    return _abs_residual_loss(dsm.values, surface_raster.values, mask_plus.bits == 1)


def loss_terrain(surface_raster: Raster, dtm: Raster, mask_plus: Mask) -> tuple[float, np.ndarray]:
    """Absolute deviation from the DTM outside the mask."""
    return _abs_residual_loss(dtm.values, surface_raster.values, mask_plus.bits == 0)


def loss_reg(surface: NurbsSurface) -> tuple[float, np.ndarray]:
    """Squared elevation range over each control point's 8-neighborhood,
    averaged over the control grid.

    For every control index the spread max - min of the differences to its
    existing neighbors is squared; gradients flow only through the argmax and
    argmin neighbors.  Returns the loss and its gradient with respect to the
    control elevations.
    """
    z = surface.control_points[:, :, 2]
    nu, nv = z.shape
    if nu < 2 or nv < 2:
        raise ValueError("regularizer needs a control grid of at least 2x2")
    stack = np.full((len(_CTRL_OFFSETS), nu, nv), np.nan)
    for k, (da, db) in enumerate(_CTRL_OFFSETS):
        a_lo, a_hi = max(0, -da), nu - max(0, da)
        b_lo, b_hi = max(0, -db), nv - max(0, db)
        stack[k, a_lo:a_hi, b_lo:b_hi] = z[a_lo + da:a_hi + da, b_lo + db:b_hi + db]
    # diff to neighbor l is z - stack[l]; its max/min over l swap the roles
    # of the neighbor extrema, so the range is max(stack) - min(stack)
    hi_idx = np.nanargmax(stack, axis=0)
    lo_idx = np.nanargmin(stack, axis=0)
    hi = np.take_along_axis(stack, hi_idx[None], axis=0)[0]
    lo = np.take_along_axis(stack, lo_idx[None], axis=0)[0]
    rng = hi - lo
    count = nu * nv
    value = float((rng ** 2).sum() / count)
    grad = np.zeros_like(z)
    aa, bb = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    for k, (da, db) in enumerate(_CTRL_OFFSETS):
        sel = hi_idx == k
        if sel.any():
            np.add.at(grad, (aa[sel] + da, bb[sel] + db), 2.0 * rng[sel] / count)
        sel = lo_idx == k
        if sel.any():
            np.add.at(grad, (aa[sel] + da, bb[sel] + db), -2.0 * rng[sel] / count)
    return value, grad


def total_loss(surface: NurbsSurface, dsm: Raster, dtm: Raster, mask_plus: Mask,
               weights: LossWeights) -> tuple[float, dict[str, float], np.ndarray, np.ndarray]:
    """Composite loss and its gradients.

    Returns (value, per-term values, d/d control_z, d/d weight_params) where
    weight_params are the logs of the surface weights.
    """
    xs = dsm.origin_x + np.arange(dsm.width) * dsm.cell_size_x
    ys = dsm.origin_y + np.arange(dsm.height) * dsm.cell_size_y
    bu, bv, z_grid, den = _grid_terms(surface, xs, ys)
    raster = Raster(dsm.width, dsm.height, dsm.cell_size_x, dsm.cell_size_y,
                    dsm.origin_x, dsm.origin_y, z_grid)
    v_road, g_road = loss_road(raster, dsm, mask_plus)
    v_terr, g_terr = loss_terrain(raster, dtm, mask_plus)
    v_reg, g_reg = loss_reg(surface)

    g_raster = g_road + weights.lambda_terrain * g_terr  # d loss / d raster cell
    scaled = g_raster / den
    back = bu.T @ scaled.T @ bv  # (nu, nv): sum of basis-weighted cell grads
    w = surface.weights
    z_ctrl = surface.control_points[:, :, 2]
    d_ctrl = back * w + weights.lambda_reg * g_reg
    d_weights = z_ctrl * back - bu.T @ (scaled * z_grid).T @ bv
    d_wparams = d_weights * w  # chain through w = exp(param)

    value = v_road + weights.lambda_terrain * v_terr + weights.lambda_reg * v_reg
    parts = {"road": v_road, "terrain": v_terr, "reg": v_reg}
    return value, parts, d_ctrl, d_wparams


def fit(surface: NurbsSurface, dsm: Raster, dtm: Raster, mask_plus: Mask,
        weights: LossWeights, config: FitConfig) -> tuple[NurbsSurface, FitReport]:
    """ADAM descent on control elevations and log-weights.

    Runs up to max_iters iterations, stopping early when the best loss has
    not improved by at least early_stop_min_delta for early_stop_patience
    consecutive iterations.  The returned surface is the best iterate seen,
    including the final post-update one.  Deterministic for fixed inputs.
    """
    z = surface.control_points[:, :, 2].copy()
    wp = np.log(surface.weights)
    m_z = np.zeros_like(z)
    v_z = np.zeros_like(z)
    m_w = np.zeros_like(wp)
    v_w = np.zeros_like(wp)
    report = FitReport()
    best = (float("inf"), z.copy(), wp.copy())
    stall = 0

    def eval_at(zv, wv):
        current = surface.with_updates(control_z=zv, weights=np.exp(wv))
        return current, total_loss(current, dsm, dtm, mask_plus, weights)

    for it in range(config.max_iters):
        _, (value, parts, g_z, g_w) = eval_at(z, wp)
        if not np.isfinite(value):
            report.stop_reason = "diverged"
            report.iterations = it
            raise FitDivergedError(
                f"non-finite loss at iteration {it}: road={parts['road']!r} "
                f"terrain={parts['terrain']!r} reg={parts['reg']!r}", report)
        report.loss_total.append(value)
        report.loss_road.append(parts["road"])
        report.loss_terrain.append(parts["terrain"])
        report.loss_reg.append(parts["reg"])
        if value < best[0]:
            if best[0] - value >= config.early_stop_min_delta:
                stall = 0
            else:
                stall += 1
            best = (value, z.copy(), wp.copy())
            report.best_iteration = it
        else:
            stall += 1
        if stall >= config.early_stop_patience:
            report.iterations = it + 1
            report.stop_reason = "early_stop"
            break
        t = it + 1
        for g, m, v, theta in ((g_z, m_z, v_z, z), (g_w, m_w, v_w, wp)):
            m *= config.adam_beta1
            m += (1 - config.adam_beta1) * g
            v *= config.adam_beta2
            v += (1 - config.adam_beta2) * g * g
            m_hat = m / (1 - config.adam_beta1 ** t)
            v_hat = v / (1 - config.adam_beta2 ** t)
            theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        # projected step: constant-magnitude updates would otherwise let
        # log-weights drift without bound and degenerate the denominator
        np.clip(wp, -_LOG_WEIGHT_CLIP, _LOG_WEIGHT_CLIP, out=wp)
    else:
        report.iterations = config.max_iters
        report.stop_reason = "max_iters"

    # the loop never evaluates the final update; give it a chance to win
    final_surface, (final_value, _, _, _) = eval_at(z, wp)
    if np.isfinite(final_value) and final_value < best[0]:
        best = (final_value, z.copy(), wp.copy())
        report.best_iteration = report.iterations
    report.best_loss = best[0]
    fitted = surface.with_updates(control_z=best[1], weights=np.exp(best[2]))
    return fitted, report


def initialize_surface(dsm: Raster, dtm: Raster, num_ctrl_u: int = 35,
                       num_ctrl_v: int = 35, degree_u: int = 3,
                       degree_v: int = 3) -> NurbsSurface:
    """Lattice surface over the DSM extent with data-driven starting heights.

    Each control elevation starts at the median DSM value over the cells
    nearest to that lattice node; nodes whose footprint holds no valid cell
    fall back to the global DTM median, then to zero.
    """
    x0, x1, y0, y1 = dsm.center_extent
    surf = lattice_surface((x0, x1), (y0, y1), num_ctrl_u, num_ctrl_v,
                           degree_u, degree_v)
    xs = dsm.origin_x + np.arange(dsm.width) * dsm.cell_size_x
    ys = dsm.origin_y + np.arange(dsm.height) * dsm.cell_size_y
    ia = np.clip(np.round((xs - x0) / (x1 - x0) * (num_ctrl_u - 1)), 0, num_ctrl_u - 1).astype(int)
    jb = np.clip(np.round((ys - y0) / (y1 - y0) * (num_ctrl_v - 1)), 0, num_ctrl_v - 1).astype(int)
    group = ia[None, :] * num_ctrl_v + jb[:, None]  # (H, W) lattice node id
    valid = dsm.valid
    ids = group[valid].ravel()
    vals = dsm.values[valid].ravel()
    dtm_values = dtm.values[dtm.valid]
    fallback = float(np.median(dtm_values)) if dtm_values.size else 0.0
    z = np.full(num_ctrl_u * num_ctrl_v, fallback)
    if ids.size:
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        vals = vals[order]
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
        for s, e in zip(starts, np.r_[starts[1:], ids.size]):
            z[ids[s]] = np.median(vals[s:e])
    return surf.with_updates(control_z=z.reshape(num_ctrl_u, num_ctrl_v))
