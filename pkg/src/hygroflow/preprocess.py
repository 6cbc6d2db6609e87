"""Specimen segmentation, alignment and data-mask generation.

Turns raw scans of one specimen face at several humidity states into a
stack of aligned grayscale images plus object masks and an eroded
optimization mask, all sharing one pixel frame.  The steps: reduce to a
working resolution with a black guard border, segment the face in the
HSV value channel (automatic threshold, median cleanup, connected
components with hole filling), de-rotate the rectangular reference
state, translate every state onto a common centroid and crop to the
union of the masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._validation import check_grid, check_mask, check_same_shape
from .errors import DegenerateInputError, InvalidParameterError, SegmentationError
from .grids import area_resample

__all__ = [
    "SpecimenScan",
    "SegmentedScan",
    "AlignedState",
    "AlignedPair",
    "to_working_resolution",
    "value_channel",
    "otsu_threshold",
    "median_filter_mask",
    "label_components",
    "segment_object",
    "centroid_orientation",
    "rotate_about",
    "derotate",
    "erode_diamond",
    "align_and_crop",
    "make_pair",
    "segment_scan",
]

OTSU_BINS = 256


@dataclass
class SpecimenScan:
    """One raw scan: RGB raster in [0, 1], acquisition dpi and humidity state."""

    image: np.ndarray  # (H, W, 3) float in [0, 1]
    dpi: float
    humidity: float  # relative humidity in percent
    face_id: str
    state_id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InvalidParameterError(
                f"scan image must be (H, W, 3), got {self.image.shape}")
        if self.dpi <= 0:
            raise InvalidParameterError(f"dpi must be positive, got {self.dpi}")
        if not 0.0 <= self.humidity <= 100.0:
            raise InvalidParameterError(
                f"humidity must be in [0, 100] percent, got {self.humidity}")


@dataclass
class SegmentedScan:
    """Working-resolution value channel with the specimen's object mask."""

    gray: np.ndarray
    mask: np.ndarray
    dpi: float
    humidity: float
    face_id: str
    state_id: str
    threshold: float = 0.0


@dataclass
class AlignedState:
    """One humidity state after alignment and cropping to the common frame."""

    state_id: str
    humidity: float
    gray: np.ndarray
    mask: np.ndarray
    data_mask: np.ndarray
    dpi: float
    shift: tuple[int, int] = (0, 0)  # integer (dx, dy) applied before cropping
    crop_origin: tuple[int, int] = (0, 0)  # (x0, y0) of the crop in the padded frame
    derotation: float = 0.0  # radians removed from this state (reference only)


@dataclass
class AlignedPair:
    """Aligned image pair ready for flow estimation.

    ``delta_rh`` is the humidity change of the second state relative to
    the first (``RH_1 - RH_0``), so positive strain under humidification
    yields a positive coefficient downstream.
    """

    i1: np.ndarray
    i2: np.ndarray
    mask1: np.ndarray
    mask2: np.ndarray
    data_mask: np.ndarray
    delta_rh: float
    dpi: float
    face_id: str = ""
    state_ids: tuple[str, str] = ("", "")

    def __post_init__(self):
        check_grid(self.i1, "i1")
        check_grid(self.i2, "i2")
        for name in ("mask1", "mask2", "data_mask"):
            setattr(self, name, check_mask(getattr(self, name), name))
            check_same_shape(self.i1, getattr(self, name), "i1", name)
        check_same_shape(self.i1, self.i2, "i1", "i2")
        if self.delta_rh == 0:
            raise InvalidParameterError("delta_rh must be nonzero")
        if np.any(self.data_mask & ~(self.mask1 & self.mask2)):
            raise InvalidParameterError("data_mask must be contained in mask1 & mask2")


def to_working_resolution(scan: SpecimenScan, target_dpi: float,
                          border_px: int = 8) -> np.ndarray:
    """Area-average the scan down to ``target_dpi`` and add a black border.

    The guard border keeps the specimen away from the image edge, which
    the segmentation relies on to identify the connected background.
    """
    if target_dpi > scan.dpi:
        raise InvalidParameterError(
            f"target_dpi {target_dpi} exceeds scan dpi {scan.dpi}")
    if target_dpi <= 0:
        raise InvalidParameterError("target_dpi must be positive")
    h, w, _ = scan.image.shape
    out_h = max(1, int(round(h * target_dpi / scan.dpi)))
    out_w = max(1, int(round(w * target_dpi / scan.dpi)))
    channels = [area_resample(scan.image[:, :, c], (out_h, out_w)) for c in range(3)]
    small = np.stack(channels, axis=-1)
    if border_px > 0:
        small = np.pad(small, ((border_px, border_px), (border_px, border_px), (0, 0)))
    return small


def value_channel(rgb: np.ndarray) -> np.ndarray:
    """HSV value channel: per-pixel max over R, G, B, in [0, 1]."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InvalidParameterError(f"expected (H, W, 3) raster, got {rgb.shape}")
    return np.max(rgb.astype(np.float64), axis=2)


def _otsu_split_index(hist: np.ndarray) -> int:
    """Index of the bin after which the between-class variance is maximal.

    Statistics are taken over bin indices: counts and index sums are
    integer-exact in float64, so the argmax is reproducible bit for bit
    (and identical to using bin centers, which are affine in the index).
    Ties resolve to the lowest bin.
    """
    hist = np.asarray(hist, dtype=np.float64)
    idx = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    mass0 = np.cumsum(hist * idx)
    mu0 = np.divide(mass0, w0, out=np.zeros_like(mass0), where=w0 > 0)
    mu1 = np.divide(mass0[-1] - mass0, w1, out=np.zeros_like(mass0), where=w1 > 0)
    var_between = w0 * w1 * (mu0 - mu1) ** 2
    var_between[(w0 == 0) | (w1 == 0)] = -np.inf
    return int(np.argmax(var_between))


def otsu_threshold(g: np.ndarray) -> float:
    """Automatic threshold maximizing between-class variance on 256 bins.

    Returns the center of the winning bin; pixels with values at or
    below it form the dark class.
    """
    g = check_grid(g, "image")
    lo, hi = float(g.min()), float(g.max())
    if lo == hi:
        raise DegenerateInputError("cannot threshold a constant image")
    hist, edges = np.histogram(g, bins=OTSU_BINS, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return float(centers[_otsu_split_index(hist)])


def median_filter_mask(m: np.ndarray, radius: int) -> np.ndarray:
    """Majority vote in a (2r+1)^2 window, clipped at the image boundary.

    Ties (possible only in clipped boundary windows) resolve to false.
    """
    if radius < 1:
        raise InvalidParameterError(f"radius must be >= 1, got {radius}")
    m = check_mask(m)
    size = 2 * radius + 1
    kernel = np.ones((size, size))
    true_count = ndimage.correlate(m.astype(np.float64), kernel, mode="constant", cval=0.0)
    window = ndimage.correlate(np.ones_like(m, dtype=np.float64), kernel,
                               mode="constant", cval=0.0)
    return 2.0 * true_count > window


def label_components(m: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected component labeling; labels 1..count, background 0."""
    m = check_mask(m)
    labels, count = ndimage.label(m, structure=np.ones((3, 3), dtype=bool))
    return labels, int(count)


def segment_object(bw: np.ndarray) -> np.ndarray:
    """Select the specimen face from a thresholded image with a guard border.

    The false region touching the image border is the background; every
    other false region is a hole and is merged with the foreground
    before the largest 8-connected component is returned.
    """
    bw = check_mask(bw)
    inv_labels, _ = label_components(~bw)
    border = np.concatenate([inv_labels[0, :], inv_labels[-1, :],
                             inv_labels[:, 0], inv_labels[:, -1]])
    border_ids = np.unique(border[border > 0])
    background = np.isin(inv_labels, border_ids)
    fg_labels, n = label_components(~background)
    if n == 0:
        raise SegmentationError("no foreground component found")
    counts = np.bincount(fg_labels.ravel())
    counts[0] = 0
    return fg_labels == int(np.argmax(counts))


def centroid_orientation(m: np.ndarray) -> tuple[float, float, float]:
    """Centroid and major-axis orientation from image moments.

    Returns ``(cx, cy, theta)`` with theta in (-pi/2, pi/2], measured in
    image coordinates (x right, y down).
    """
    m = check_mask(m)
    ys, xs = np.nonzero(m)
    if xs.size == 0:
        raise DegenerateInputError("mask is empty")
    cx = float(xs.mean())
    cy = float(ys.mean())
    dx = xs - cx
    dy = ys - cy
    mu20 = float(np.dot(dx, dx))
    mu02 = float(np.dot(dy, dy))
    mu11 = float(np.dot(dx, dy))
    theta = 0.5 * np.arctan2(2.0 * mu11, mu20 - mu02)
    return cx, cy, float(theta)


def rotate_about(image: np.ndarray, theta: float, center: tuple[float, float],
                 *, nearest: bool = False) -> np.ndarray:
    """Rotate image content by ``theta`` about ``center`` (out-of-frame fills 0)."""
    h, w = image.shape
    cx, cy = center
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    c, s = np.cos(-theta), np.sin(-theta)
    sample_x = cx + c * dx - s * dy
    sample_y = cy + s * dx + c * dy
    order = 0 if nearest else 1
    return ndimage.map_coordinates(image.astype(np.float64),
                                   np.stack([sample_y, sample_x]),
                                   order=order, mode="constant", cval=0.0)


def derotate(image: np.ndarray, mask: np.ndarray,
             theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Remove the rotation ``theta`` about the mask centroid.

    The image is resampled bilinearly, the mask with nearest neighbor.
    Only intended for the reference (still rectangular) state.
    """
    if abs(theta) >= np.pi / 4:
        raise InvalidParameterError(
            f"|theta| must be below pi/4 for de-rotation, got {theta}")
    image = check_grid(image)
    mask = check_mask(mask)
    check_same_shape(image, mask, "image", "mask")
    if theta == 0.0:
        return image.copy(), mask.copy()
    cx, cy, _ = centroid_orientation(mask)
    out_img = rotate_about(image, -theta, (cx, cy))
    out_mask = rotate_about(mask.astype(np.float64), -theta, (cx, cy),
                            nearest=True) > 0.5
    return out_img, out_mask


def erode_diamond(m: np.ndarray, radius: int) -> np.ndarray:
    """Morphological erosion with an L1-ball stencil (preserves square corners)."""
    if radius < 0:
        raise InvalidParameterError(f"radius must be >= 0, got {radius}")
    m = check_mask(m)
    if radius == 0:
        return m.copy()
    span = np.arange(-radius, radius + 1)
    se = (np.abs(span[:, None]) + np.abs(span[None, :])) <= radius
    return ndimage.binary_erosion(m, structure=se, border_value=0)


def segment_scan(scan: SpecimenScan, *, working_dpi: float = 150.0,
                 border_px: int = 8, median_radius: int = 1) -> SegmentedScan:
    """Full single-scan segmentation: resample, threshold, clean, select object."""
    rgb = to_working_resolution(scan, working_dpi, border_px=border_px)
    gray = value_channel(rgb)
    threshold = otsu_threshold(gray)
    bw = gray > threshold
    if median_radius >= 1:
        bw = median_filter_mask(bw, median_radius)
    mask = segment_object(bw)
    return SegmentedScan(gray=gray, mask=mask, dpi=working_dpi,
                         humidity=scan.humidity, face_id=scan.face_id,
                         state_id=scan.state_id, threshold=threshold)


def _translate_int(a: np.ndarray, dx: int, dy: int, fill) -> np.ndarray:
    out = np.full_like(a, fill)
    h, w = a.shape
    src_x0, src_x1 = max(0, -dx), min(w, w - dx)
    src_y0, src_y1 = max(0, -dy), min(h, h - dy)
    if src_x0 >= src_x1 or src_y0 >= src_y1:
        return out
    out[src_y0 + dy:src_y1 + dy, src_x0 + dx:src_x1 + dx] = a[src_y0:src_y1, src_x0:src_x1]
    return out


def align_and_crop(scans: list[SegmentedScan], *, margin: int = 4,
                   erosion_radius: int = 5,
                   derotate_reference: bool = True) -> list[AlignedState]:
    """Align all states of one face on the centroid and crop to the mask union.

    The first scan is the reference: it is de-rotated onto the axes and
    its centroid defines the common center.  All translations are whole
    pixels; sub-pixel residuals are left for the flow field to absorb.
    Each state's data mask is the diamond erosion of its object mask.
    """
    if len(scans) < 2:
        raise InvalidParameterError("alignment needs at least two scans of one face")
    faces = {s.face_id for s in scans}
    if len(faces) > 1:
        raise InvalidParameterError(f"scans mix faces: {sorted(faces)}")
    shapes = {s.gray.shape for s in scans}
    if len(shapes) > 1:
        raise InvalidParameterError(
            "scans must share working-resolution dimensions; re-run segmentation "
            f"with a common frame (got {sorted(shapes)})")

    grays = [s.gray for s in scans]
    masks = [s.mask for s in scans]
    derotation = 0.0
    if derotate_reference:
        _, _, theta = centroid_orientation(masks[0])
        grays[0], masks[0] = derotate(grays[0], masks[0], theta)
        derotation = theta

    centroids = [centroid_orientation(m)[:2] for m in masks]
    cx_ref, cy_ref = centroids[0]
    shifts = [(int(round(cx_ref - cx)), int(round(cy_ref - cy)))
              for cx, cy in centroids]
    grays = [_translate_int(g, dx, dy, 0.0) for g, (dx, dy) in zip(grays, shifts)]
    masks = [_translate_int(m, dx, dy, False) for m, (dx, dy) in zip(masks, shifts)]

    union = np.logical_or.reduce(masks)
    ys, xs = np.nonzero(union)
    if xs.size == 0:
        raise SegmentationError("all object masks are empty after alignment")
    h, w = union.shape
    x0 = max(0, int(xs.min()) - margin)
    x1 = min(w, int(xs.max()) + margin + 1)
    y0 = max(0, int(ys.min()) - margin)
    y1 = min(h, int(ys.max()) + margin + 1)

    states = []
    for scan, gray, mask, shift in zip(scans, grays, masks, shifts):
        gray_c = np.ascontiguousarray(gray[y0:y1, x0:x1])
        mask_c = np.ascontiguousarray(mask[y0:y1, x0:x1])
        states.append(AlignedState(
            state_id=scan.state_id, humidity=scan.humidity, gray=gray_c,
            mask=mask_c, data_mask=erode_diamond(mask_c, erosion_radius),
            dpi=scan.dpi, shift=shift, crop_origin=(x0, y0),
            derotation=derotation if scan is scans[0] else 0.0))
    return states


def make_pair(ref: AlignedState, other: AlignedState, face_id: str = "") -> AlignedPair:
    """Combine two aligned states into the flow solver's input pair."""
    if other.humidity == ref.humidity:
        raise InvalidParameterError(
            f"states {ref.state_id!r} and {other.state_id!r} have equal humidity; "
            "delta_rh would be zero")
    return AlignedPair(
        i1=ref.gray, i2=other.gray, mask1=ref.mask, mask2=other.mask,
        data_mask=ref.data_mask & other.data_mask,
        delta_rh=other.humidity - ref.humidity, dpi=ref.dpi,
        face_id=face_id, state_ids=(ref.state_id, other.state_id))
