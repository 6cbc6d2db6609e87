"""Synthetic image pairs with exact ground truth.

Verification data for the solver and strain pipeline: procedural
wood-like textures, analytic displacement fields with closed-form
values at any real coordinate, rendered second images that are exactly
consistent with the declared flow (up to interpolation), optional
illumination stains and noise, and endpoint-error metrics.

Ground truth uses the backward-warping convention of the solver: the
flow maps first-image coordinates into the second image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from scipy.ndimage import gaussian_filter

from ._validation import check_mask, check_same_shape
from .errors import DegenerateInputError, InvalidParameterError
from .grids import FlowField, warp_bilinear

__all__ = [
    "AnalyticFlow",
    "RectStain",
    "RenderedPair",
    "SynthCase",
    "wood_texture",
    "render_pair",
    "endpoint_error",
    "compose_flows",
    "case_names",
    "build_case",
]

INVERSE_MAP_ITERS = 60


@dataclass(frozen=True)
class AnalyticFlow:
    """Displacement field with a closed form at any real coordinate.

    All components superpose, so a case can combine e.g. a crack step
    with a background stretch.  ``center`` defaults to the image center
    at evaluation time.
    """

    kind: str
    dx: float = 0.0
    dy: float = 0.0
    angle: float = 0.0
    stretch_x: float = 0.0
    stretch_y: float = 0.0
    shear: float = 0.0
    step: float = 0.0
    step_at: float = 0.0
    step_width: float = 2.0
    center: tuple[float, float] | None = None

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AnalyticFlow":
        return cls(kind="translation", dx=dx, dy=dy)

    @classmethod
    def rotation(cls, angle: float, center=None) -> "AnalyticFlow":
        return cls(kind="rotation", angle=angle, center=center)

    @classmethod
    def uniform_stretch(cls, s: float, center=None) -> "AnalyticFlow":
        return cls(kind="uniform_stretch", stretch_x=s, stretch_y=s, center=center)

    @classmethod
    def stretch(cls, sx: float, sy: float, center=None) -> "AnalyticFlow":
        return cls(kind="stretch", stretch_x=sx, stretch_y=sy, center=center)

    @classmethod
    def shear_x(cls, k: float, center=None) -> "AnalyticFlow":
        return cls(kind="shear", shear=k, center=center)

    @classmethod
    def crack_step(cls, step: float, at: float, width: float = 2.0,
                   background_stretch_y: float = 0.0) -> "AnalyticFlow":
        """Vertical-displacement step of ``step`` px across the line y=at."""
        if width <= 0:
            raise InvalidParameterError("step width must be positive")
        return cls(kind="crack_step", step=step, step_at=at, step_width=width,
                   stretch_y=background_stretch_y)

    def _center_for(self, shape: tuple[int, int]) -> tuple[float, float]:
        if self.center is not None:
            return self.center
        h, w = shape
        return ((w - 1) / 2.0, (h - 1) / 2.0)

    def evaluate(self, x, y, shape: tuple[int, int]):
        """Flow components at real coordinates (arrays or scalars)."""
        cx, cy = self._center_for(shape)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        dxr = x - cx
        dyr = y - cy
        vx = np.full_like(x, self.dx)
        vy = np.full_like(y, self.dy)
        if self.angle != 0.0:
            c, s = np.cos(self.angle), np.sin(self.angle)
            vx = vx + (c * dxr - s * dyr) - dxr
            vy = vy + (s * dxr + c * dyr) - dyr
        if self.stretch_x != 0.0:
            vx = vx + self.stretch_x * dxr
        if self.stretch_y != 0.0:
            vy = vy + self.stretch_y * dyr
        if self.shear != 0.0:
            vx = vx + self.shear * dyr
        if self.step != 0.0:
            ramp = np.clip((y - self.step_at) / self.step_width + 0.5, 0.0, 1.0)
            vy = vy + self.step * ramp
        return vx, vy

    def field(self, shape: tuple[int, int]) -> FlowField:
        """Sampled ground-truth flow on the pixel lattice."""
        yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        vx, vy = self.evaluate(xx, yy, shape)
        return FlowField(vx, vy)

    def max_displacement(self, shape: tuple[int, int]) -> float:
        return float(self.field(shape).magnitude().max())


@dataclass(frozen=True)
class RectStain:
    """Additive piecewise-constant brightness change on the second image."""

    amplitude: float
    x0: int
    y0: int
    x1: int
    y1: int

    def evaluate(self, x, y):
        inside = ((x >= self.x0) & (x < self.x1)
                  & (y >= self.y0) & (y < self.y1))
        return self.amplitude * inside.astype(np.float64)


@dataclass
class RenderedPair:
    i1: np.ndarray
    i2: np.ndarray
    true_flow: FlowField
    true_illum: np.ndarray


def wood_texture(width: int, height: int, seed: int) -> np.ndarray:
    """Wood-like test texture in [0, 1]: curved band structure plus detail.

    Deterministic for a given seed; bands come from distance rings of a
    far-away random center with a smoothly perturbed phase, topped with
    band-limited noise at two scales so every pyramid level keeps
    contrast.
    """
    if width <= 0 or height <= 0:
        raise InvalidParameterError("texture dimensions must be positive")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    span = max(width, height)
    direction = rng.uniform(0.0, 2.0 * np.pi)
    dist = rng.uniform(1.5, 3.0) * span
    cx = (width - 1) / 2.0 + dist * np.cos(direction)
    cy = (height - 1) / 2.0 + dist * np.sin(direction)
    period = rng.uniform(24.0, 48.0)
    phase_noise = gaussian_filter(rng.standard_normal((height, width)), 8.0) * 6.0
    rings = np.sin(2.0 * np.pi * (np.hypot(xx - cx, yy - cy) + phase_noise) / period)
    blobs = gaussian_filter(rng.standard_normal((height, width)), span / 16.0)
    mid = gaussian_filter(rng.standard_normal((height, width)), 3.0)
    fine = gaussian_filter(rng.standard_normal((height, width)), 1.0)

    def _unit(a):
        lo, hi = a.min(), a.max()
        return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)

    tex = (0.35 * _unit(rings) + 0.25 * _unit(blobs)
           + 0.25 * _unit(mid) + 0.15 * _unit(fine))
    return _unit(tex)


def _inverse_map(flow: AnalyticFlow, shape: tuple[int, int]):
    """Fixed-point inversion of x + v(x): returns source coords per target pixel.

    Converges geometrically while the displacement-gradient magnitude
    stays below one, which all catalog fields satisfy.
    """
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    px, py = xx.copy(), yy.copy()
    for _ in range(INVERSE_MAP_ITERS):
        vx, vy = flow.evaluate(px, py, shape)
        px = xx - vx
        py = yy - vy
    return px, py


def render_pair(texture: np.ndarray, flow: AnalyticFlow | None,
                illum: RectStain | None = None, noise_sigma: float = 0.0,
                noise_seed: int = 0) -> RenderedPair:
    """Render a ground-truth-consistent image pair from a texture.

    The second image is the texture pulled through the inverse of the
    declared motion, so warping it by the ground-truth flow reproduces
    the first image at interior pixels up to interpolation error.  The
    returned illumination truth is the stain as seen from the first
    image's frame (sampled at the displaced position).
    """
    shape = texture.shape
    if flow is None:
        flow = AnalyticFlow.translation(0.0, 0.0)
    true_flow = flow.field(shape)
    if flow.max_displacement(shape) == 0.0:
        i2 = texture.copy()
    else:
        sx, sy = _inverse_map(flow, shape)
        # Cubic-spline sampling: the rendered pair is then consistent with
        # a smooth underlying scene, so solver-side bilinear warping is the
        # only interpolation error left in round trips.
        i2 = ndimage.map_coordinates(texture, np.stack([sy, sx]), order=3,
                                     mode="nearest")
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    if illum is not None:
        i2 = i2 + illum.evaluate(xx, yy)
        true_illum = illum.evaluate(xx + true_flow.vx, yy + true_flow.vy)
    else:
        true_illum = np.zeros(shape)
    i1 = texture.copy()
    if noise_sigma > 0.0:
        rng = np.random.default_rng(noise_seed)
        i1 = i1 + rng.normal(0.0, noise_sigma, shape)
        i2 = i2 + rng.normal(0.0, noise_sigma, shape)
    return RenderedPair(i1=i1, i2=i2, true_flow=true_flow, true_illum=true_illum)


def endpoint_error(estimated: FlowField, truth: FlowField,
                   mask: np.ndarray) -> tuple[float, float]:
    """Mean and 95th-percentile Euclidean flow error over the mask."""
    mask = check_mask(mask)
    check_same_shape(estimated.vx, truth.vx, "estimated", "truth")
    check_same_shape(estimated.vx, mask, "flow", "mask")
    if not mask.any():
        raise DegenerateInputError("mask is empty")
    err = np.hypot(estimated.vx - truth.vx, estimated.vy - truth.vy)[mask]
    return float(err.mean()), float(np.percentile(err, 95.0))


def compose_flows(first: FlowField, second: FlowField) -> FlowField:
    """Flow of applying ``first`` then ``second``: v1(x) + v2(x + v1(x))."""
    check_same_shape(first.vx, second.vx, "first", "second")
    return FlowField(first.vx + warp_bilinear(second.vx, first),
                     first.vy + warp_bilinear(second.vy, first))


@dataclass
class SynthCase:
    """One catalog entry: rendered pair plus everything the pipeline needs."""

    name: str
    i1: np.ndarray
    i2: np.ndarray
    mask: np.ndarray
    data_mask: np.ndarray
    true_flow: FlowField
    true_illum: np.ndarray
    delta_rh: float
    description: str


def _inset_mask(shape: tuple[int, int], inset: int) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[inset:shape[0] - inset, inset:shape[1] - inset] = True
    return m


_CATALOG: dict[str, dict] = {
    "shift-0.5px": dict(size=256, flow=AnalyticFlow.translation(0.5, 0.0),
                        desc="half-pixel horizontal shift"),
    "shift-3.25px": dict(size=256, flow=AnalyticFlow.translation(3.25, -1.5),
                         desc="multi-pixel diagonal shift"),
    "stretch-1pct": dict(size=512, flow=AnalyticFlow.uniform_stretch(0.01),
                         desc="1 percent uniform stretch about the center"),
    "rot-1deg": dict(size=256, flow=AnalyticFlow.rotation(np.deg2rad(1.0)),
                     desc="1 degree rotation about the center"),
    "rot-2deg": dict(size=256, flow=AnalyticFlow.rotation(np.deg2rad(2.0)),
                     desc="2 degree rotation about the center"),
    "crack-1.5px": dict(size=256,
                        flow=AnalyticFlow.crack_step(1.5, at=128.0, width=2.0,
                                                     background_stretch_y=0.01),
                        desc="1.5 px vertical-displacement crack over a 2 px band "
                             "on a 0.1 percent-per-RH background stretch"),
    "stain-0.1": dict(size=256, flow=AnalyticFlow.translation(1.0, 0.5),
                      stain=RectStain(0.1, 72, 88, 168, 176),
                      desc="brightness stain of 0.1 on a shifted pair"),
}
DEFAULT_DELTA_RH = 10.0


def case_names() -> list[str]:
    return sorted(_CATALOG)


def build_case(name: str, seed: int = 7, size: int | None = None) -> SynthCase:
    """Instantiate a named catalog case deterministically."""
    if name not in _CATALOG:
        raise InvalidParameterError(
            f"unknown synthetic case {name!r}; available: {', '.join(case_names())}")
    spec = _CATALOG[name]
    n = size or spec["size"]
    flow = spec["flow"]
    if flow.kind == "crack_step":
        flow = replace(flow, step_at=n / 2.0)
    texture = wood_texture(n, n, seed)
    rendered = render_pair(texture, flow, spec.get("stain"), noise_sigma=0.0)
    inset = max(8, int(np.ceil(flow.max_displacement((n, n)))) + 6)
    mask = _inset_mask((n, n), inset)
    data_mask = _inset_mask((n, n), inset + 4)
    return SynthCase(name=name, i1=rendered.i1, i2=rendered.i2, mask=mask,
                     data_mask=data_mask, true_flow=rendered.true_flow,
                     true_illum=rendered.true_illum, delta_rh=DEFAULT_DELTA_RH,
                     description=spec["desc"])
