"""Strain tensor fields and humidity-normalized deformation coefficients.

The flow field is differentiated (central differences inside, one-sided
at the borders, all on the undeformed frame) into the linearized strain
entries and the finite-strain normal entries.  Normalizing a normal
strain by the humidity change gives a dense coefficient field; profiles
of that field, averaged along the strain direction inside the data
mask, are the quantity reported per specimen, together with variance
and a crack-exclusion rule for the finite-strain variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_grid, check_mask, check_same_shape
from .errors import DegenerateInputError, InvalidParameterError
from .grids import FlowField

__all__ = [
    "StrainFields",
    "CoefficientProfile",
    "small_strain",
    "green_strain",
    "compute_strain",
    "k_fields",
    "masked_axis_profile",
    "k_profile",
    "k_endpoint",
    "detect_cracks",
    "coefficient_profile",
    "projection_error",
]

DEFAULT_CRACK_FACTOR = 10.0
DEFAULT_MIN_COUNT = 10
DEFAULT_MIN_SPAN = 10


@dataclass
class StrainFields:
    """Dense strain tensors derived from a flow field.

    ``eps11``/``eps22``/``gamma12`` are the linearized entries; ``E11``/
    ``E22`` the finite normal entries and ``eps1``/``eps2`` the stretches
    ``sqrt(1 + 2 E_ii) - 1``.  ``clamped`` flags pixels where the square
    root argument had to be clamped at zero (typically crack outliers).
    """

    eps11: np.ndarray
    eps22: np.ndarray
    gamma12: np.ndarray
    E11: np.ndarray
    E22: np.ndarray
    eps1: np.ndarray
    eps2: np.ndarray
    clamped: np.ndarray


@dataclass
class CoefficientProfile:
    """1-D profile of a deformation coefficient along one axis.

    ``axis`` names the strain direction ("y" profiles run over x
    positions, averaging along y).  ``k_green`` is None for endpoint
    profiles, which only exist in the linearized variant.
    """

    axis: str
    positions: np.ndarray
    k_small: np.ndarray
    k_green: np.ndarray | None
    n_averaged: np.ndarray
    mean_small: float
    var_small: float
    mean_green: float | None
    var_green: float | None
    crack_positions: list[tuple[int, int]]

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise InvalidParameterError(f"axis must be 'x' or 'y', got {self.axis!r}")
        if np.any(self.n_averaged <= 0):
            raise InvalidParameterError("every reported position needs n_averaged > 0")


def _flow_derivatives(flow: FlowField):
    """All four displacement derivatives; central inside, one-sided at edges."""
    dvx_dy, dvx_dx = np.gradient(flow.vx)
    dvy_dy, dvy_dx = np.gradient(flow.vy)
    return dvx_dx, dvx_dy, dvy_dx, dvy_dy


def small_strain(flow: FlowField) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linearized strain entries (eps11, eps22, gamma12) of the flow."""
    dvx_dx, dvx_dy, dvy_dx, dvy_dy = _flow_derivatives(flow)
    return dvx_dx, dvy_dy, dvx_dy + dvy_dx


def green_strain(flow: FlowField):
    """Finite normal strain entries and the derived stretches.

    Returns ``(E11, E22, eps1, eps2, clamped)``; the stretch square-root
    argument is clamped at zero and such pixels flagged instead of
    raising, so crack outliers stay diagnosable.
    """
    dvx_dx, dvx_dy, dvy_dx, dvy_dy = _flow_derivatives(flow)
    e11 = dvx_dx + 0.5 * (dvx_dx ** 2 + dvy_dx ** 2)
    e22 = dvy_dy + 0.5 * (dvx_dy ** 2 + dvy_dy ** 2)
    arg1 = 1.0 + 2.0 * e11
    arg2 = 1.0 + 2.0 * e22
    clamped = (arg1 < 0.0) | (arg2 < 0.0)
    eps1 = np.sqrt(np.maximum(arg1, 0.0)) - 1.0
    eps2 = np.sqrt(np.maximum(arg2, 0.0)) - 1.0
    return e11, e22, eps1, eps2, clamped


def compute_strain(flow: FlowField) -> StrainFields:
    """Both strain tensors of one flow field."""
    eps11, eps22, gamma12 = small_strain(flow)
    e11, e22, eps1, eps2, clamped = green_strain(flow)
    return StrainFields(eps11=eps11, eps22=eps22, gamma12=gamma12,
                        E11=e11, E22=e22, eps1=eps1, eps2=eps2, clamped=clamped)


def k_fields(strain: StrainFields, delta_rh: float,
             variant: str = "small") -> tuple[np.ndarray, np.ndarray]:
    """Dense coefficient fields (kx, ky): normal strain per percent RH change."""
    if delta_rh == 0:
        raise InvalidParameterError("delta_rh must be nonzero")
    if variant == "small":
        return strain.eps11 / delta_rh, strain.eps22 / delta_rh
    if variant == "green":
        return strain.eps1 / delta_rh, strain.eps2 / delta_rh
    raise InvalidParameterError(f"variant must be 'small' or 'green', got {variant!r}")


def masked_axis_profile(k: np.ndarray, mask: np.ndarray, axis: str,
                        min_count: int = DEFAULT_MIN_COUNT):
    """Masked mean of ``k`` along the strain axis.

    For axis "y" the mean runs down each column, producing one value per
    x position; positions with fewer than ``min_count`` masked pixels are
    dropped.  Returns ``(positions, values, counts)``.
    """
    k = check_grid(k, "k")
    mask = check_mask(mask)
    check_same_shape(k, mask, "k", "mask")
    if axis not in ("x", "y"):
        raise InvalidParameterError(f"axis must be 'x' or 'y', got {axis!r}")
    red_axis = 0 if axis == "y" else 1
    counts = mask.sum(axis=red_axis)
    sums = np.where(mask, k, 0.0).sum(axis=red_axis)
    keep = counts >= max(1, min_count)
    positions = np.nonzero(keep)[0]
    if positions.size == 0:
        raise DegenerateInputError(
            f"no position has {min_count} masked pixels for the {axis} profile")
    return positions, sums[keep] / counts[keep], counts[keep].astype(int)


def k_profile(k: np.ndarray, mask: np.ndarray, axis: str,
              min_count: int = DEFAULT_MIN_COUNT) -> CoefficientProfile:
    """Single-variant coefficient profile from a dense k field."""
    positions, values, counts = masked_axis_profile(k, mask, axis, min_count)
    return CoefficientProfile(
        axis=axis, positions=positions, k_small=values, k_green=None,
        n_averaged=counts, mean_small=float(values.mean()),
        var_small=float(values.var()), mean_green=None, var_green=None,
        crack_positions=[])


def _longest_true_run(col: np.ndarray) -> tuple[int, int]:
    """(start, stop) of the longest contiguous True run; stop is inclusive."""
    idx = np.nonzero(col)[0]
    if idx.size == 0:
        return -1, -2
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate([[0], breaks + 1])
    stops = np.concatenate([breaks, [idx.size - 1]])
    lengths = stops - starts
    best = int(np.argmax(lengths))
    return int(idx[starts[best]]), int(idx[stops[best]])


def k_endpoint(flow: FlowField, mask: np.ndarray, delta_rh: float, axis: str,
               min_span: int = DEFAULT_MIN_SPAN) -> CoefficientProfile:
    """Endpoint (telescoped) coefficient profile.

    Per column (axis "y"), the displacement difference across the longest
    contiguous masked run divided by the span and the humidity change:
    exactly the mean of the forward-difference strains over the run, but
    insensitive to the interior distribution.
    """
    if delta_rh == 0:
        raise InvalidParameterError("delta_rh must be nonzero")
    mask = check_mask(mask)
    check_same_shape(flow.vx, mask, "flow", "mask")
    if axis not in ("x", "y"):
        raise InvalidParameterError(f"axis must be 'x' or 'y', got {axis!r}")
    comp = flow.vy if axis == "y" else flow.vx
    work_mask = mask if axis == "y" else mask.T
    work = comp if axis == "y" else comp.T

    positions, values, spans = [], [], []
    for pos in range(work.shape[1]):
        a, b = _longest_true_run(work_mask[:, pos])
        if b - a < min_span:
            continue
        positions.append(pos)
        values.append((work[b, pos] - work[a, pos]) / ((b - a) * delta_rh))
        spans.append(b - a)
    if not positions:
        raise DegenerateInputError(
            f"no position has a contiguous masked run of at least {min_span} px")
    values = np.asarray(values)
    return CoefficientProfile(
        axis=axis, positions=np.asarray(positions, dtype=int), k_small=values,
        k_green=None, n_averaged=np.asarray(spans, dtype=int),
        mean_small=float(values.mean()), var_small=float(values.var()),
        mean_green=None, var_green=None, crack_positions=[])


def detect_cracks(strain_field: np.ndarray, profiles, delta_rh: float,
                  crack_factor: float = DEFAULT_CRACK_FACTOR) -> np.ndarray:
    """Mark strain outliers an order of magnitude above the profile level.

    The threshold is ``crack_factor`` times the largest absolute
    profile coefficient converted back to a strain via ``delta_rh``.
    """
    strain_field = check_grid(strain_field, "strain_field")
    peak = 0.0
    for profile in profiles:
        if profile.k_small.size:
            peak = max(peak, float(np.abs(profile.k_small).max()))
    threshold = crack_factor * peak * abs(delta_rh)
    return np.abs(strain_field) > threshold


def coefficient_profile(flow: FlowField, mask: np.ndarray, delta_rh: float,
                        axis: str, *, crack_factor: float = DEFAULT_CRACK_FACTOR,
                        min_count: int = DEFAULT_MIN_COUNT,
                        strain: StrainFields | None = None,
                        crack_mask: np.ndarray | None = None) -> CoefficientProfile:
    """Full two-variant profile with crack exclusion for the finite variant.

    The linearized profile is taken over the whole mask (its endpoint
    character makes it robust to interior discontinuities); crack pixels
    are then removed from the mask before the finite-strain averaging.
    A precomputed ``crack_mask`` (e.g. the union over both axes) may be
    supplied; otherwise cracks are detected from this axis's strain.
    """
    if strain is None:
        strain = compute_strain(flow)
    kx_s, ky_s = k_fields(strain, delta_rh, "small")
    kx_g, ky_g = k_fields(strain, delta_rh, "green")
    k_small_field = ky_s if axis == "y" else kx_s
    k_green_field = ky_g if axis == "y" else kx_g
    strain_field = strain.eps22 if axis == "y" else strain.eps11

    positions, small_vals, counts = masked_axis_profile(
        k_small_field, mask, axis, min_count)
    base = CoefficientProfile(
        axis=axis, positions=positions, k_small=small_vals, k_green=None,
        n_averaged=counts, mean_small=float(small_vals.mean()),
        var_small=float(small_vals.var()), mean_green=None, var_green=None,
        crack_positions=[])

    if crack_mask is None:
        crack_mask = detect_cracks(strain_field, [base], delta_rh, crack_factor)
    cracks_in_mask = crack_mask & mask
    green_mask = mask & ~crack_mask

    red_axis = 0 if axis == "y" else 1
    green_counts = green_mask.sum(axis=red_axis)
    green_sums = np.where(green_mask, k_green_field, 0.0).sum(axis=red_axis)
    keep = np.zeros(green_counts.shape, dtype=bool)
    keep[positions] = True
    keep &= green_counts >= 1
    positions = np.nonzero(keep)[0]
    if positions.size == 0:
        raise DegenerateInputError("crack exclusion removed every profile position")
    small_by_pos = np.full(green_counts.shape, np.nan)
    small_by_pos[base.positions] = base.k_small
    counts_by_pos = np.zeros(green_counts.shape, dtype=int)
    counts_by_pos[base.positions] = base.n_averaged

    green_vals = green_sums[keep] / green_counts[keep]
    small_vals = small_by_pos[positions]
    ys, xs = np.nonzero(cracks_in_mask)
    crack_positions = [(int(x), int(y)) for x, y in zip(xs, ys)]
    return CoefficientProfile(
        axis=axis, positions=positions, k_small=small_vals,
        k_green=green_vals, n_averaged=counts_by_pos[positions],
        mean_small=float(small_vals.mean()), var_small=float(small_vals.var()),
        mean_green=float(green_vals.mean()), var_green=float(green_vals.var()),
        crack_positions=crack_positions)


def projection_error(radius_mm: float, delta_y_mm: float) -> float:
    """Worst-case apparent shortening when one side tilts out of plane.

    ``radius_mm`` is the segment length, ``delta_y_mm`` the perpendicular
    length change pulling it out of the scan plane.
    """
    if radius_mm <= 0:
        raise InvalidParameterError("radius must be positive")
    if abs(delta_y_mm) > radius_mm:
        raise InvalidParameterError(
            f"|delta_y| = {abs(delta_y_mm)} exceeds the segment length {radius_mm}")
    return float(radius_mm * (1.0 - np.cos(np.arcsin(delta_y_mm / radius_mm))))
