"""Lattice types and element-wise / differential operators.

All 2-D fields are plain ``float64`` numpy arrays indexed ``[y, x]``
(row-major); binary masks are boolean arrays of the same shape.  The
operators here are the shared vocabulary of the preprocessing, solver
and strain modules: forward-difference gradient, its negative adjoint
(divergence), bilinear sampling/warping, and exact area resampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_grid, check_same_shape

__all__ = [
    "FlowField",
    "gradient_forward",
    "divergence",
    "bilinear_sample",
    "warp_bilinear",
    "area_resample",
    "downsample_mask_strict",
]


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field in pixel units.

    ``vx``/``vy`` are the x- and y-components on the reference lattice:
    a point at ``(x, y)`` in the first image corresponds to
    ``(x + vx, y + vy)`` in the second.
    """

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        check_grid(self.vx, "vx")
        check_grid(self.vy, "vy")
        check_same_shape(self.vx, self.vy, "vx", "vy")

    @property
    def shape(self) -> tuple[int, int]:
        return self.vx.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "FlowField":
        return cls(np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64))


def gradient_forward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward-difference gradient with Neumann (zero-difference) boundary.

    Returns ``(gx, gy)`` where ``gx[y, x] = g[y, x+1] - g[y, x]`` on all
    but the last column (zero there) and analogously for ``gy`` in the
    last row.  This discretization keeps the operator norm bound
    ``||grad||^2 <= 8`` used for the solver step sizes.
    """
    g = np.asarray(g, dtype=np.float64)
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    gx[:, :-1] = g[:, 1:] - g[:, :-1]
    gy[:-1, :] = g[1:, :] - g[:-1, :]
    return gx, gy


def divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient_forward`.

    Satisfies ``<grad a, p> = -<a, div p>`` exactly for every pair of
    fields; the last column of ``px`` and last row of ``py`` are ignored
    because the forward gradient never writes there.
    """
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    check_same_shape(px, py, "px", "py")
    out = np.zeros_like(px)
    out[:, 0] += px[:, 0]
    out[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    out[:, -1] -= px[:, -2]
    out[0, :] += py[0, :]
    out[1:-1, :] += py[1:-1, :] - py[:-2, :]
    out[-1, :] -= py[-2, :]
    return out


def bilinear_sample(g: np.ndarray, x, y):
    """Bilinear interpolation of ``g`` at real coordinates, clamped to the domain.

    ``x``/``y`` may be scalars or arrays of identical shape.  Coordinates
    outside ``[0, W-1] x [0, H-1]`` are clamped, so the sample is always
    a convex combination of valid pixels; exact at integer coordinates.
    """
    g = np.asarray(g, dtype=np.float64)
    h, w = g.shape
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.minimum(x0, w - 2) if w > 1 else np.zeros_like(x0)
    y0 = np.minimum(y0, h - 2) if h > 1 else np.zeros_like(y0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = g[y0, x0] * (1.0 - fx) + g[y0, x1] * fx
    bot = g[y1, x0] * (1.0 - fx) + g[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    if np.isscalar(x) or out.ndim == 0:
        return float(out)
    return out


def warp_bilinear(g: np.ndarray, flow: FlowField) -> np.ndarray:
    """Resample ``g`` at ``(x + vx, y + vy)`` with bilinear interpolation.

    Out-of-domain coordinates clamp to the border (same contract as
    :func:`bilinear_sample`).
    """
    h, w = g.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([yy + flow.vy, xx + flow.vx])
    return ndimage.map_coordinates(np.asarray(g, dtype=np.float64), coords,
                                   order=1, mode="nearest")


def _box_means_1d(values: np.ndarray, out_n: int) -> np.ndarray:
    """Exact box means along the last axis onto ``out_n`` cells.

    Treats each input sample as constant over a unit cell; the cumulative
    integral is then piecewise linear, so fractional cell edges are exact.
    """
    in_n = values.shape[-1]
    if out_n == in_n:
        return values.copy()
    scale = in_n / out_n
    edges = np.arange(out_n + 1, dtype=np.float64) * scale
    edges[-1] = in_n  # guard against rounding past the domain
    cum = np.concatenate(
        [np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
    idx = np.minimum(np.floor(edges).astype(np.intp), in_n)
    frac = edges - idx
    lo = cum[..., idx]
    hi = cum[..., np.minimum(idx + 1, in_n)]
    at_edges = lo + frac * (hi - lo)
    return np.diff(at_edges, axis=-1) / scale


def area_resample(values: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Area-weighted (box) downsample or resample to ``out_shape``.

    Each output pixel is the exact mean of the input over its rectangular
    footprint, with fractional cell boundaries handled analytically.
    Integer reduction factors reduce to plain block means.
    """
    values = np.asarray(values, dtype=np.float64)
    out_h, out_w = out_shape
    h, w = values.shape
    if out_h == h and out_w == w:
        return values.copy()
    if h % out_h == 0 and w % out_w == 0:
        fy, fx = h // out_h, w // out_w
        return values.reshape(out_h, fy, out_w, fx).mean(axis=(1, 3))
    tmp = _box_means_1d(values, out_w)
    return np.ascontiguousarray(_box_means_1d(tmp.T, out_h).T)


def downsample_mask_strict(mask: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Strict-AND mask coarsening: true iff the whole footprint is true.

    Conservative by construction so masked-out pixels never leak data
    into coarse levels.
    """
    frac = area_resample(mask.astype(np.float64), out_shape)
    return frac >= 1.0 - 1e-9
