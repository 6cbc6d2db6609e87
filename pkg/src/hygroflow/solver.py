"""Masked Huber-TV flow solver with illumination compensation.

Estimates the dense displacement between two aligned grayscale images
together with an additive illumination field that absorbs brightness
changes (stains, mold).  The objective couples Huber-regularized
gradients of the three unknown fields with a masked L1 penalty on the
linearized brightness residual; it is minimized by a first-order
primal-dual scheme inside a coarse-to-fine warping loop.

Sign conventions: the flow maps first-image coordinates into the second
image (``i2(x + v) ~ i1(x)``), and the illumination field is the
brightness the second image gained, so ``warped - illum_scale * u``
is the compensated warp that should match ``i1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from ._validation import check_grid, check_mask, check_same_shape
from .errors import DegenerateInputError, InvalidParameterError
from .grids import (FlowField, area_resample, divergence, downsample_mask_strict,
                    gradient_forward, warp_bilinear)

__all__ = [
    "SolverParams",
    "FlowResult",
    "huber",
    "data_residual",
    "energy",
    "pd_solve",
    "coarse_to_fine",
    "estimate_rotation",
    "rigid_resample",
    "rerun_with_registration",
]

# Operator norm bound of the forward-difference gradient; tau*sigma*8 <= 1.
GRAD_NORM_SQ = 8.0
MIN_PYRAMID_DIM = 16
CENTER_EXCLUSION_PX = 2.0


@dataclass
class SolverParams:
    """Hyper-parameters of the variational model and its optimization.

    ``data_weight`` trades the data term against the regularizers,
    ``illum_scale`` sets how strongly the illumination field may absorb
    brightness changes (0 disables it), and the two Huber epsilons
    control how piecewise-smooth flow and illumination are allowed to be.
    """

    data_weight: float = 10.0
    illum_scale: float = 0.04
    huber_eps_flow: float = 0.2
    huber_eps_illum: float = 0.05
    warps: int = 8
    pd_iters: int = 60
    pyramid_scale: float = 0.85
    levels: int | str = "auto"
    median_flow_filter: bool = True
    # Estimate the illumination field on coarse pyramid levels too (not
    # only at full resolution).
    illum_coarse_levels: bool = True

    def __post_init__(self):
        if self.data_weight <= 0:
            raise InvalidParameterError("data_weight must be positive")
        if self.illum_scale < 0:
            raise InvalidParameterError("illum_scale must be >= 0")
        if self.huber_eps_flow < 0 or self.huber_eps_illum < 0:
            raise InvalidParameterError("Huber epsilons must be >= 0")
        if self.warps < 1 or self.pd_iters < 1:
            raise InvalidParameterError("warps and pd_iters must be >= 1")
        if not 0.5 <= self.pyramid_scale <= 0.95:
            raise InvalidParameterError(
                f"pyramid_scale must be in [0.5, 0.95], got {self.pyramid_scale}")
        if self.levels != "auto" and (not isinstance(self.levels, int) or self.levels < 1):
            raise InvalidParameterError("levels must be a positive integer or 'auto'")


@dataclass
class FlowResult:
    """Solver output for one image pair."""

    flow: FlowField
    illumination: np.ndarray
    warped: np.ndarray
    warped_compensated: np.ndarray
    energy: float
    delta_theta_avg: float
    v_avg: tuple[float, float]
    rotation_center: tuple[float, float]
    # Rigid pre-transform folded into ``flow`` by a registration rerun.
    rigid_theta: float = 0.0
    rigid_shift: tuple[float, float] = (0.0, 0.0)


def huber(alpha, eps: float):
    """Huber penalty: quadratic below ``eps``, shifted absolute value above.

    For ``eps == 0`` this is exactly the absolute value.  Accepts scalars
    or arrays.
    """
    if eps < 0:
        raise InvalidParameterError("eps must be >= 0")
    a = np.abs(np.asarray(alpha, dtype=np.float64))
    if eps == 0.0:
        out = a
    else:
        out = np.where(a <= eps, a * a / (2.0 * eps), a - 0.5 * eps)
    if np.isscalar(alpha):
        return float(out)
    return out


def data_residual(u: np.ndarray, flow: FlowField, flow0: FlowField,
                  grad_i: tuple[np.ndarray, np.ndarray], i_t: np.ndarray,
                  illum_scale: float) -> np.ndarray:
    """Linearized brightness residual of the compensated model.

    ``i_t`` and ``grad_i`` must come from the warp generated by ``flow0``;
    the residual is ``i_t + grad_i . (v - v0) - illum_scale * u`` so that
    a positive ``u`` explains brightening of the second image.
    """
    gx, gy = grad_i
    return (i_t + gx * (flow.vx - flow0.vx) + gy * (flow.vy - flow0.vy)
            - illum_scale * u)


def _huber_of_gradient(a: np.ndarray, eps: float) -> float:
    gx, gy = gradient_forward(a)
    return float(np.sum(huber(np.hypot(gx, gy), eps)))


def energy(u: np.ndarray, flow: FlowField, flow0: FlowField,
           grad_i: tuple[np.ndarray, np.ndarray], i_t: np.ndarray,
           mask: np.ndarray, params: SolverParams) -> float:
    """Objective value at a given linearization point.

    Sum of the per-pixel Huber penalties on the gradient magnitudes of
    the illumination field and both flow components, plus the weighted
    masked L1 data term.
    """
    reg = (_huber_of_gradient(u, params.huber_eps_illum)
           + _huber_of_gradient(flow.vx, params.huber_eps_flow)
           + _huber_of_gradient(flow.vy, params.huber_eps_flow))
    rho = data_residual(u, flow, flow0, grad_i, i_t, params.illum_scale)
    data = params.data_weight * float(np.sum(np.abs(rho[mask])))
    return reg + data


def _symmetric_gradient(i1: np.ndarray, i2w: np.ndarray):
    """Data-term image gradient: averaged central differences of both images.

    Central (pixel-centered) stencils are essential here: forward
    differences estimate the gradient half a pixel off-center, which
    biases every warp's linearization the same way and makes the
    warping loop drift.  The TV operator keeps forward differences.
    """
    g1y, g1x = np.gradient(i1)
    g2y, g2x = np.gradient(i2w)
    return 0.5 * (g1x + g2x), 0.5 * (g1y + g2y)


class _PdWorkspace:
    """Preallocated buffers for the primal-dual iteration (hot path)."""

    def __init__(self, shape):
        self.gx = np.zeros(shape)
        self.gy = np.zeros(shape)
        self.nrm = np.empty(shape)
        self.tmp = np.empty(shape)
        self.div = np.empty(shape)
        self.rho = np.empty(shape)
        self.step = np.empty(shape)

    def grad_into(self, a):
        """Forward differences; last column/row stay zero."""
        gx, gy = self.gx, self.gy
        np.subtract(a[:, 1:], a[:, :-1], out=gx[:, :-1])
        np.subtract(a[1:, :], a[:-1, :], out=gy[:-1, :])
        return gx, gy

    def div_into(self, px, py):
        """Negative adjoint of the forward gradient (ignores last col/row)."""
        out = self.div
        out[:, 0] = px[:, 0]
        np.subtract(px[:, 1:-1], px[:, :-2], out=out[:, 1:-1])
        out[:, -1] = -px[:, -2]
        out[0, :] += py[0, :]
        tmp = self.tmp
        np.subtract(py[1:-1, :], py[:-2, :], out=tmp[1:-1, :])
        out[1:-1, :] += tmp[1:-1, :]
        out[-1, :] -= py[-2, :]
        return out

    def dual_ascent(self, p, bar, sigma, eps):
        """In-place: gradient ascent, Huber shrinkage, unit-ball projection."""
        gx, gy = self.grad_into(bar)
        p0, p1 = p[0], p[1]
        inv = 1.0 / (1.0 + sigma * eps)
        scale = sigma * inv
        if eps > 0.0:
            p0 *= inv
            p1 *= inv
        np.multiply(gx, scale, out=self.tmp)
        p0 += self.tmp
        np.multiply(gy, scale, out=self.tmp)
        p1 += self.tmp
        nrm = self.nrm
        np.multiply(p0, p0, out=nrm)
        np.multiply(p1, p1, out=self.tmp)
        nrm += self.tmp
        np.sqrt(nrm, out=nrm)
        np.maximum(nrm, 1.0, out=nrm)
        p0 /= nrm
        p1 /= nrm


def pd_solve(i1: np.ndarray, i2: np.ndarray, mask: np.ndarray,
             init_flow: FlowField, init_u: np.ndarray,
             params: SolverParams) -> tuple[FlowField, np.ndarray]:
    """Single-level solve: warping loop around the primal-dual iteration.

    Each warp resamples ``i2`` by the current flow, re-linearizes the
    brightness residual there and runs ``pd_iters`` primal-dual steps on
    the convex model.  The masked L1 data term is handled by the exact
    per-pixel proximal step along the residual's coefficient direction
    (image gradient and illumination scale); the Huber regularizers are
    dualized.  Flow components are optionally median filtered between
    warps to suppress warping outliers.
    """
    i1 = check_grid(i1, "i1")
    i2 = check_grid(i2, "i2")
    mask = check_mask(mask)
    check_same_shape(i1, i2, "i1", "i2")
    check_same_shape(i1, mask, "i1", "mask")
    check_same_shape(i1, init_flow.vx, "i1", "init_flow")
    init_u = check_grid(init_u, "init_u")
    check_same_shape(i1, init_u, "i1", "init_u")

    beta = params.illum_scale
    lam = params.data_weight
    tau = sigma = 1.0 / np.sqrt(GRAD_NORM_SQ)
    lam_tau = lam * tau
    with_illum = beta > 0.0
    eps_f = params.huber_eps_flow
    eps_i = params.huber_eps_illum

    vx = init_flow.vx.copy()
    vy = init_flow.vy.copy()
    u = init_u.copy()
    active = mask.astype(np.float64)
    ws = _PdWorkspace(i1.shape)
    new_vx = np.empty_like(vx)
    new_vy = np.empty_like(vy)
    new_u = np.empty_like(u)

    for warp_idx in range(params.warps):
        if warp_idx > 0 and params.median_flow_filter:
            vx = ndimage.median_filter(vx, size=3, mode="nearest")
            vy = ndimage.median_filter(vy, size=3, mode="nearest")

        i2w = warp_bilinear(i2, FlowField(vx, vy))
        i_t = i2w - i1
        gx, gy = _symmetric_gradient(i1, i2w)
        # Residual constant so rho = const + gx*vx + gy*vy - beta*u.
        const = i_t - gx * vx - gy * vy
        gsq = gx * gx + gy * gy + beta * beta
        threshold = lam_tau * gsq
        # masked reciprocal: one fused multiply turns the clipped residual
        # into the prox step, and masked-out pixels get a zero step
        step_scale = active / np.where(gsq > 0.0, gsq, 1.0)

        p_vx = np.zeros((2,) + i1.shape)
        p_vy = np.zeros((2,) + i1.shape)
        p_u = np.zeros((2,) + i1.shape)
        vx_bar, vy_bar, u_bar = vx.copy(), vy.copy(), u.copy()

        for _ in range(params.pd_iters):
            ws.dual_ascent(p_vx, vx_bar, sigma, eps_f)
            np.multiply(ws.div_into(p_vx[0], p_vx[1]), tau, out=new_vx)
            new_vx += vx
            ws.dual_ascent(p_vy, vy_bar, sigma, eps_f)
            np.multiply(ws.div_into(p_vy[0], p_vy[1]), tau, out=new_vy)
            new_vy += vy
            if with_illum:
                ws.dual_ascent(p_u, u_bar, sigma, eps_i)
                np.multiply(ws.div_into(p_u[0], p_u[1]), tau, out=new_u)
                new_u += u

            # Exact per-pixel prox of the masked L1 data term along the
            # coefficient direction (gx, gy, -beta); the three threshold
            # cases collapse into one clipped expression.
            rho = ws.rho
            np.multiply(gx, new_vx, out=rho)
            np.multiply(gy, new_vy, out=ws.tmp)
            rho += ws.tmp
            rho += const
            if with_illum:
                np.multiply(new_u, beta, out=ws.tmp)
                rho -= ws.tmp
            step = ws.step
            np.clip(rho, -threshold, threshold, out=step)
            step /= gsq_safe
            step *= active
            np.multiply(step, gx, out=ws.tmp)
            new_vx -= ws.tmp
            np.multiply(step, gy, out=ws.tmp)
            new_vy -= ws.tmp
            if with_illum:
                np.multiply(step, beta, out=ws.tmp)
                new_u += ws.tmp

            # extrapolate into the bar buffers, then recycle the old primal
            # arrays as the next iteration's scratch
            np.multiply(new_vx, 2.0, out=vx_bar)
            vx_bar -= vx
            np.multiply(new_vy, 2.0, out=vy_bar)
            vy_bar -= vy
            vx, new_vx = new_vx, vx
            vy, new_vy = new_vy, vy
            if with_illum:
                np.multiply(new_u, 2.0, out=u_bar)
                u_bar -= u
                u, new_u = new_u, u

    return FlowField(vx.copy(), vy.copy()), u.copy()


def _auto_levels(shape: tuple[int, int], scale: float) -> int:
    n = 1
    while True:
        next_min = round(min(shape) * scale ** n)
        if next_min < MIN_PYRAMID_DIM:
            return n
        n += 1


def _level_shape(shape: tuple[int, int], scale: float, level: int) -> tuple[int, int]:
    return (max(1, int(round(shape[0] * scale ** level))),
            max(1, int(round(shape[1] * scale ** level))))


def _resize_bilinear(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Center-aligned bilinear resize used for flow/illumination upsampling."""
    if a.shape == tuple(shape):
        return a.copy()
    h, w = a.shape
    out_h, out_w = shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    coords = np.stack(np.meshgrid(ys, xs, indexing="ij"))
    return ndimage.map_coordinates(a, coords, order=1, mode="nearest")


def coarse_to_fine(i1: np.ndarray, i2: np.ndarray, mask: np.ndarray,
                   params: SolverParams) -> FlowResult:
    """Pyramid flow estimation for one aligned pair.

    Images are downsampled by exact area averaging, masks by strict AND
    so no unreliable pixel ever reaches a coarse data term.  The flow
    from each level seeds the next finer one, with magnitudes rescaled
    by the actual per-axis size ratio.  The reported energy is the final
    objective with the data residual measured at the returned flow.
    """
    i1 = check_grid(i1, "i1")
    i2 = check_grid(i2, "i2")
    mask = check_mask(mask)
    check_same_shape(i1, i2, "i1", "i2")
    check_same_shape(i1, mask, "i1", "mask")

    scale = params.pyramid_scale
    if params.levels == "auto":
        levels = _auto_levels(i1.shape, scale)
    else:
        levels = int(params.levels)
        if min(_level_shape(i1.shape, scale, levels - 1)) < 2:
            raise InvalidParameterError(
                f"{levels} levels would shrink {i1.shape} below 2 px")

    shapes = [_level_shape(i1.shape, scale, k) for k in range(levels)]
    # Images: cascaded construction, so the accumulated box kernels act as
    # a proper low-pass for deep pyramids.  Masks: strict AND over the
    # full-resolution footprint (cascading ANDs would inflate the false
    # border by up to a pixel per level).
    pyr_i1, pyr_i2 = [i1], [i2]
    for s in shapes[1:]:
        pyr_i1.append(area_resample(pyr_i1[-1], s))
        pyr_i2.append(area_resample(pyr_i2[-1], s))
    pyr_mask = [mask] + [downsample_mask_strict(mask, s) for s in shapes[1:]]

    coarse_params = params
    if not params.illum_coarse_levels:
        coarse_params = replace(params, illum_scale=0.0)

    flow = FlowField.zeros(shapes[-1])
    u = np.zeros(shapes[-1])
    for k in range(levels - 1, -1, -1):
        level_params = params if k == 0 else coarse_params
        flow, u = pd_solve(pyr_i1[k], pyr_i2[k], pyr_mask[k], flow, u, level_params)
        if k > 0:
            src_h, src_w = shapes[k]
            dst_h, dst_w = shapes[k - 1]
            flow = FlowField(
                _resize_bilinear(flow.vx, (dst_h, dst_w)) * (dst_w / src_w),
                _resize_bilinear(flow.vy, (dst_h, dst_w)) * (dst_h / src_h))
            u = _resize_bilinear(u, (dst_h, dst_w))

    warped = warp_bilinear(i2, flow)
    i_t = warped - i1
    grad_i = _symmetric_gradient(i1, warped)
    final_energy = energy(u, flow, flow, grad_i, i_t, mask, params)

    ys, xs = np.nonzero(mask)
    if xs.size:
        center = (float(xs.mean()), float(ys.mean()))
        dtheta, v_avg = estimate_rotation(flow, mask, center)
    else:
        center = ((i1.shape[1] - 1) / 2.0, (i1.shape[0] - 1) / 2.0)
        dtheta, v_avg = 0.0, (0.0, 0.0)

    return FlowResult(
        flow=flow, illumination=u, warped=warped,
        warped_compensated=warped - params.illum_scale * u,
        energy=final_energy, delta_theta_avg=dtheta, v_avg=v_avg,
        rotation_center=center)


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def estimate_rotation(flow: FlowField, mask: np.ndarray,
                      center: tuple[float, float]) -> tuple[float, tuple[float, float]]:
    """Average in-plane rotation and translation implied by the flow.

    Compares the polar angle of each masked pixel before and after
    displacement, relative to ``center``; pixels closer than 2 px to the
    center are excluded from the angle average (angular singularity).
    """
    mask = check_mask(mask)
    if not mask.any():
        raise DegenerateInputError("mask is empty")
    h, w = flow.shape
    cx, cy = center
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xr = xx - cx
    yr = yy - cy
    include = mask & (np.hypot(xr, yr) >= CENTER_EXCLUSION_PX)
    if not include.any():
        raise DegenerateInputError("all masked pixels fall inside the center exclusion")
    dtheta = _wrap_angle(np.arctan2(yr + flow.vy, xr + flow.vx) - np.arctan2(yr, xr))
    v_avg = (float(flow.vx[mask].mean()), float(flow.vy[mask].mean()))
    return float(dtheta[include].mean()), v_avg


def rigid_resample(image: np.ndarray, theta: float, shift: tuple[float, float],
                   center: tuple[float, float]) -> np.ndarray:
    """Resample ``image`` at the rigid map ``R_theta (x - c) + c + shift``."""
    h, w = image.shape
    cx, cy = center
    tx, ty = shift
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    c, s = np.cos(theta), np.sin(theta)
    sample_x = cx + tx + c * dx - s * dy
    sample_y = cy + ty + s * dx + c * dy
    return ndimage.map_coordinates(np.asarray(image, dtype=np.float64),
                                   np.stack([sample_y, sample_x]),
                                   order=1, mode="nearest")


def rerun_with_registration(i1: np.ndarray, i2: np.ndarray, mask: np.ndarray,
                            result: FlowResult,
                            params: SolverParams) -> FlowResult:
    """Second flow pass after rigidly registering ``i2`` onto ``i1``.

    The average rotation and translation of ``result`` are removed from
    ``i2`` by resampling, the flow is re-estimated, and the rigid map is
    composed back so the returned flow still points into the original
    ``i2``.  The returned rotation/translation averages describe the
    residual after the rigid correction; the removed part is recorded in
    ``rigid_theta`` / ``rigid_shift``.
    """
    theta = result.delta_theta_avg
    shift = result.v_avg
    center = result.rotation_center
    i2_registered = rigid_resample(i2, theta, shift, center)
    second = coarse_to_fine(i1, i2_registered, mask, params)

    h, w = i1.shape
    cx, cy = center
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    wx = xx + second.flow.vx
    wy = yy + second.flow.vy
    c, s = np.cos(theta), np.sin(theta)
    comp = FlowField(
        cx + shift[0] + c * (wx - cx) - s * (wy - cy) - xx,
        cy + shift[1] + s * (wx - cx) + c * (wy - cy) - yy)

    warped = warp_bilinear(i2, comp)
    i_t = warped - i1
    grad_i = _symmetric_gradient(i1, warped)
    final_energy = energy(second.illumination, comp, comp, grad_i, i_t, mask, params)
    return FlowResult(
        flow=comp, illumination=second.illumination, warped=warped,
        warped_compensated=warped - params.illum_scale * second.illumination,
        energy=final_energy, delta_theta_avg=second.delta_theta_avg,
        v_avg=second.v_avg, rotation_center=center,
        rigid_theta=theta, rigid_shift=(float(shift[0]), float(shift[1])))
