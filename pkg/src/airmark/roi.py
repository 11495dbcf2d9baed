"""Contextual region-of-interest reduction.

Horizon detection scores each candidate split row by the luminance
contrast between the region above and below, normalized by the pooled
standard deviation, so the result is invariant to global brightness
scaling. Cropping keeps a small margin below the detected row; the
trapezoid confines labeling to the pavement area ahead of the camera.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCrop, InvalidTrapezoid, NoHorizon
from .imaging import BinaryMask, ImageRGB, luminance

MIN_MEAN_SEPARATION = 0.05
CROP_MARGIN_FRAC = 0.02
MIN_CROP_ROWS = 8


@dataclass(frozen=True)
class Trapezoid:
    """Four (x, y) vertices in pixel-center coordinates.

    Order: bottom-left, bottom-right, top-right, top-left. The top edge
    must sit above the bottom edge and the outline must not self-intersect.
    """

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) != 4:
            raise InvalidTrapezoid(f"need 4 vertices, got {len(self.vertices)}")


@dataclass
class RoiResult:
    horizon_row: int | None
    crop_top_row: int
    roi_mask: BinaryMask


def default_trapezoid(width: int, height: int) -> Trapezoid:
    """Full-width bottom edge, central 40% top edge at 55% of height."""
    return Trapezoid(
        vertices=(
            (0.0, height - 1.0),
            (width - 1.0, height - 1.0),
            (0.7 * (width - 1), 0.55 * (height - 1)),
            (0.3 * (width - 1), 0.55 * (height - 1)),
        )
    )


def trapezoid_from_fractions(fracs, width: int, height: int) -> Trapezoid:
    """Build a trapezoid from eight numbers: four (x, y) pairs as fractions."""
    pts = [(float(fx) * (width - 1), float(fy) * (height - 1)) for fx, fy in fracs]
    return Trapezoid(vertices=tuple(pts))


def detect_horizon(img: ImageRGB) -> int:
    """Best split row in [0.1H, 0.9H] by normalized above/below contrast.

    Returns the smallest argmax row on exact ties; raises NoHorizon when no
    candidate separates the region means by at least 0.05.
    """
    h, w = img.height, img.width
    if h < 20:
        raise NoHorizon(f"image height {h} too small")
    lum = luminance(img).data
    row_sum = lum.sum(axis=1)
    row_sq = (lum * lum).sum(axis=1)
    cum = np.concatenate([[0.0], np.cumsum(row_sum)])
    cum_sq = np.concatenate([[0.0], np.cumsum(row_sq)])
    total, total_sq = cum[-1], cum_sq[-1]

    lo = max(1, int(round(0.1 * h)))
    hi = min(h - 1, int(round(0.9 * h)))
    rows = np.arange(lo, hi + 1)
    n_above = rows.astype(np.float64) * w
    n_below = h * w - n_above
    mean_above = cum[rows] / n_above
    mean_below = (total - cum[rows]) / n_below
    var_above = np.maximum(cum_sq[rows] / n_above - mean_above**2, 0.0)
    var_below = np.maximum((total_sq - cum_sq[rows]) / n_below - mean_below**2, 0.0)
    pooled = np.sqrt((n_above * var_above + n_below * var_below) / (n_above + n_below))
    sep = np.abs(mean_above - mean_below)
    if sep.max() < MIN_MEAN_SEPARATION:
        raise NoHorizon(f"max mean separation {sep.max():.4f} below threshold")
    score = sep / (pooled + 1e-6)
    return int(rows[int(np.argmax(score))])


def crop_below_horizon(img: ImageRGB, horizon_row: int) -> tuple[ImageRGB, int]:
    """Keep rows >= horizon_row + margin, margin = round(0.02 * height)."""
    if not 0 <= horizon_row < img.height:
        raise ValueError(f"horizon_row {horizon_row} outside [0, {img.height})")
    margin = int(round(CROP_MARGIN_FRAC * img.height))
    top = horizon_row + margin
    if img.height - top < MIN_CROP_ROWS:
        raise DegenerateCrop(f"only {img.height - top} rows below row {top}")
    cropped = ImageRGB.from_array(img.data[top:].copy())
    return cropped, top


def _validate_trapezoid(trap: Trapezoid, width: int, height: int) -> np.ndarray:
    pts = np.asarray(trap.vertices, dtype=np.float64)
    if np.any(pts[:, 0] < 0) or np.any(pts[:, 0] > width - 1):
        raise InvalidTrapezoid("x vertex outside image bounds")
    if np.any(pts[:, 1] < 0) or np.any(pts[:, 1] > height - 1):
        raise InvalidTrapezoid("y vertex outside image bounds")
    area = 0.0
    for i in range(4):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % 4]
        area += x0 * y1 - x1 * y0
    if abs(area) < 1e-9:
        raise InvalidTrapezoid("zero-area trapezoid")
    if _segments_cross(pts[0], pts[1], pts[2], pts[3]) or _segments_cross(
        pts[1], pts[2], pts[3], pts[0]
    ):
        raise InvalidTrapezoid("self-intersecting outline")
    return pts


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    return (
        orient(a, b, c) * orient(a, b, d) < 0
        and orient(c, d, a) * orient(c, d, b) < 0
    )


def trapezoid_mask(width: int, height: int, trap: Trapezoid | None = None) -> BinaryMask:
    """Rasterize: foreground where the pixel center is inside or on the outline.

    Inside-ness uses the even-odd crossing rule evaluated at every pixel
    center; points exactly on an edge segment are included.
    """
    if trap is None:
        trap = default_trapezoid(width, height)
    pts = _validate_trapezoid(trap, width, height)

    ys, xs = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    inside = np.zeros((height, width), dtype=bool)
    on_edge = np.zeros((height, width), dtype=bool)
    eps = 1e-9
    for i in range(4):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % 4]
        crosses = (y0 > ys) != (y1 > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (ys - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xs < x_at)
        # boundary: collinear and within the segment's bounding box
        cross_prod = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        seg_len = max(np.hypot(x1 - x0, y1 - y0), eps)
        in_box = (
            (xs >= min(x0, x1) - eps)
            & (xs <= max(x0, x1) + eps)
            & (ys >= min(y0, y1) - eps)
            & (ys <= max(y0, y1) + eps)
        )
        on_edge |= (np.abs(cross_prod) / seg_len <= eps) & in_box
    return BinaryMask.from_array(inside | on_edge)


def reduce_roi(img: ImageRGB, trap: Trapezoid | None = None) -> RoiResult:
    """Horizon crop and trapezoid mask combined; total over any input.

    NoHorizon falls back to no crop, a degenerate crop likewise; the
    returned mask is full-frame with rows above the crop cleared.
    """
    horizon: int | None
    try:
        horizon = detect_horizon(img)
    except NoHorizon:
        horizon = None
    crop_top = 0
    if horizon is not None:
        try:
            _, crop_top = crop_below_horizon(img, horizon)
        except DegenerateCrop:
            crop_top = 0
    mask = trapezoid_mask(img.width, img.height, trap)
    if crop_top > 0:
        mask.data[:crop_top] = False
    return RoiResult(horizon_row=horizon, crop_top_row=crop_top, roi_mask=mask)
