"""Flow and strain visualization (color wheel, heatmaps, profile plots)."""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import hsv_to_rgb
from matplotlib.figure import Figure
from PIL import Image

from .grids import FlowField
from .strain import CoefficientProfile

__all__ = [
    "flow_to_rgb",
    "save_flow_png",
    "save_profile_plot",
    "save_heatmap",
]


def flow_to_rgb(flow: FlowField, max_magnitude: float | None = None):
    """Standard flow color wheel: hue = direction, brightness = magnitude.

    Returns ``(rgb, max_magnitude)`` with rgb float in [0, 1]; magnitudes
    are normalized by ``max_magnitude`` (the field's own maximum when not
    given) so the scale can be recorded alongside the image.
    """
    mag = flow.magnitude()
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    norm = mag / max_magnitude if max_magnitude > 0 else np.zeros_like(mag)
    angle = np.arctan2(flow.vy, flow.vx)
    hue = (angle + np.pi) / (2.0 * np.pi)
    hsv = np.stack([hue, np.ones_like(hue), np.clip(norm, 0.0, 1.0)], axis=-1)
    return hsv_to_rgb(hsv), max_magnitude


def save_flow_png(path, flow: FlowField,
                  max_magnitude: float | None = None) -> float:
    rgb, used_max = flow_to_rgb(flow, max_magnitude)
    Image.fromarray(np.round(rgb * 255.0).astype(np.uint8), mode="RGB").save(
        path, format="PNG")
    return used_max


def save_profile_plot(path, profile: CoefficientProfile,
                      mm_per_px: float | None = None, title: str = "") -> None:
    """Coefficient profile vs position with a mean +- std band per variant."""
    fig = Figure(figsize=(7.0, 4.0))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    pos = profile.positions.astype(np.float64)
    unit = "px"
    if mm_per_px is not None:
        pos = pos * mm_per_px
        unit = "mm"
    variants = [("linearized", profile.k_small, profile.mean_small,
                 profile.var_small, "tab:blue")]
    if profile.k_green is not None:
        variants.append(("finite", profile.k_green, profile.mean_green,
                         profile.var_green, "tab:orange"))
    for label, values, mean, var, color in variants:
        std = float(np.sqrt(var))
        ax.plot(pos, values, color=color, lw=1.2, label=label)
        ax.axhline(mean, color=color, ls="--", lw=0.8)
        ax.fill_between([pos[0], pos[-1]], mean - std, mean + std,
                        color=color, alpha=0.15)
    for x, _ in profile.crack_positions:
        marker = x * (mm_per_px or 1.0) if profile.axis == "y" else None
        if marker is not None:
            ax.axvline(marker, color="tab:red", lw=0.4, alpha=0.4)
    ax.set_xlabel(f"position [{unit}]")
    ax.set_ylabel("k [1/%RH]")
    ax.set_title(title or f"k_{profile.axis} profile")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def save_heatmap(path, field: np.ndarray, title: str = "",
                 symmetric: bool = True) -> None:
    fig = Figure(figsize=(5.5, 4.5))
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    if symmetric:
        lim = float(np.abs(field).max()) or 1.0
        im = ax.imshow(field, cmap="RdBu_r", vmin=-lim, vmax=lim)
    else:
        im = ax.imshow(field, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
