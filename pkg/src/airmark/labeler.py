"""Marking-line extraction: color thresholding, seed discovery, traversal.

A frame is reduced to a binary candidate map by an HSV band (yellow for
taxiways, white for runways), seeds are planted at the bottom of each
sizable connected component, and each seed is walked by probing a
fixed-radius circle of pixels around the current point: foreground ring
pixels are grouped into angular clusters, the cluster closest to the
current heading wins, and its centroid becomes the next vertex. The walk
halts when nothing lies ahead, the frame edge is reached, the step budget
runs out, or it curls back onto itself.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, OutOfBounds, SeedNotForeground
from .imaging import BinaryMask, ImageRGB, hsv_planes
from .roi import RoiResult, Trapezoid, default_trapezoid, reduce_roi

Polyline = list[tuple[int, int]]

OVERLAY_COLOR = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class ColorBand:
    """HSV membership box; hue is a no-op for the white band ([0, 360])."""

    name: str
    h_lo: float
    h_hi: float
    s_lo: float
    s_hi: float
    v_lo: float
    v_hi: float


YELLOW_BAND = ColorBand("yellow", h_lo=40.0, h_hi=70.0, s_lo=0.35, s_hi=1.0, v_lo=0.35, v_hi=1.0)
WHITE_BAND = ColorBand("white", h_lo=0.0, h_hi=360.0, s_lo=0.0, s_hi=0.20, v_lo=0.70, v_hi=1.0)

DEFAULT_BANDS = {"taxiway": YELLOW_BAND, "runway": WHITE_BAND}


@dataclass(frozen=True)
class TraversalParams:
    radius: int = 10
    cone_half_angle: float = 100.0
    max_steps: int = 500
    min_seed_area: int = 30
    revisit_radius: float | None = None  # defaults to radius / 2
    cluster_gap: float = 30.0

    def effective_revisit(self) -> float:
        return self.radius / 2.0 if self.revisit_radius is None else self.revisit_radius


@dataclass
class AnnotationRecord:
    frame_id: str
    category: str
    probability: float | None
    band: str
    polylines: list[Polyline]
    crop_top_row: int
    trapezoid: Trapezoid
    mask_foreground: int
    mask: BinaryMask | None = field(default=None, repr=False, compare=False)


def threshold_color(img: ImageRGB, roi_mask: BinaryMask, band: ColorBand) -> BinaryMask:
    """Foreground = ROI pixels whose HSV falls inside the band."""
    if (img.width, img.height) != (roi_mask.width, roi_mask.height):
        raise DimensionMismatch(
            f"image {img.width}x{img.height} vs mask {roi_mask.width}x{roi_mask.height}"
        )
    h, s, v = hsv_planes(img)
    hit = (
        (h >= band.h_lo)
        & (h <= band.h_hi)
        & (s >= band.s_lo)
        & (s <= band.s_hi)
        & (v >= band.v_lo)
        & (v <= band.v_hi)
        & roi_mask.data
    )
    return BinaryMask.from_array(hit)


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def find_seeds(mask: BinaryMask, params: TraversalParams) -> list[tuple[int, int]]:
    """One seed per 4-connected component of sufficient area.

    The seed is the component's lowest pixel (leftmost on ties); seeds are
    returned ordered left to right.
    """
    labeled, n = ndimage.label(mask.data, structure=_FOUR_CONN)
    if n == 0:
        return []
    ys, xs = np.nonzero(labeled)
    ids = labeled[ys, xs]
    counts = np.bincount(ids, minlength=n + 1)
    seeds = []
    for k in range(1, n + 1):
        if counts[k] < params.min_seed_area:
            continue
        sel = ids == k
        yk = ys[sel]
        bottom = yk.max()
        x_at = xs[sel][yk == bottom].min()
        seeds.append((int(x_at), int(bottom)))
    seeds.sort()
    return seeds


def midpoint_circle(radius: int) -> np.ndarray:
    """Integer (dx, dy) offsets of the midpoint circle of the given radius."""
    pts = set()
    x, y, d = 0, radius, 1 - radius
    while x <= y:
        for ox, oy in ((x, y), (y, x)):
            pts.update({(ox, oy), (-ox, oy), (ox, -oy), (-ox, -oy)})
        if d < 0:
            d += 2 * x + 3
        else:
            d += 2 * (x - y) + 5
            y -= 1
        x += 1
    return np.array(sorted(pts), dtype=np.intp)


def _wrap_angle(a: np.ndarray | float) -> np.ndarray | float:
    return (a + 180.0) % 360.0 - 180.0


def _angular_clusters(angles: np.ndarray, gap: float) -> list[np.ndarray]:
    """Indices of ring pixels grouped by angular proximity (circular)."""
    order = np.argsort(angles, kind="stable")
    sorted_a = angles[order]
    if sorted_a.size == 1:
        return [order]
    splits = np.nonzero(np.diff(sorted_a) > gap)[0]
    groups = np.split(order, splits + 1)
    # wrap-around: merge the last group into the first when they adjoin
    if len(groups) > 1 and (sorted_a[0] + 360.0) - sorted_a[-1] <= gap:
        groups[0] = np.concatenate([groups[-1], groups[0]])
        groups.pop()
    return groups


def circledat_traverse(
    mask: BinaryMask, seed: tuple[int, int], params: TraversalParams | None = None
) -> Polyline:
    """Walk a marking from a seed by circular pixel discovery.

    Starts heading straight up. Each step probes the radius-R ring, keeps
    clusters whose mean angle lies within the forward cone, advances to the
    rounded centroid of the least-deviating cluster, and re-aims along the
    actual step taken. Stops on: no candidate ahead, out of bounds, step
    budget, or a new point landing within the revisit radius of any earlier
    vertex.
    """
    if params is None:
        params = TraversalParams()
    data = mask.data
    h, w = data.shape
    sx, sy = int(seed[0]), int(seed[1])
    if not (0 <= sx < w and 0 <= sy < h) or not data[sy, sx]:
        raise SeedNotForeground(f"seed ({sx}, {sy}) is not foreground")
    ring = midpoint_circle(params.radius)
    revisit = params.effective_revisit()
    pts: Polyline = [(sx, sy)]
    arr = np.array([[sx, sy]], dtype=np.float64)
    heading = -90.0  # straight up (y axis points down)
    px, py = sx, sy
    for _ in range(params.max_steps):
        qx = px + ring[:, 0]
        qy = py + ring[:, 1]
        ok = (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
        qx, qy = qx[ok], qy[ok]
        fg = data[qy, qx]
        qx, qy = qx[fg], qy[fg]
        if qx.size == 0:
            break
        angles = np.degrees(np.arctan2(qy - py, qx - px))
        best = None
        for group in _angular_clusters(angles, params.cluster_gap):
            rad = np.radians(angles[group])
            mean_angle = np.degrees(np.arctan2(np.sin(rad).mean(), np.cos(rad).mean()))
            dev = abs(float(_wrap_angle(mean_angle - heading)))
            if dev <= params.cone_half_angle and (best is None or dev < best[0]):
                best = (dev, group)
        if best is None:
            break
        group = best[1]
        nx = int(np.rint(qx[group].mean()))
        ny = int(np.rint(qy[group].mean()))
        if not (0 <= nx < w and 0 <= ny < h):
            break
        if np.min(np.hypot(arr[:, 0] - nx, arr[:, 1] - ny)) < revisit:
            break
        heading = float(np.degrees(np.arctan2(ny - py, nx - px)))
        pts.append((nx, ny))
        arr = np.vstack([arr, [nx, ny]])
        px, py = nx, ny
    return pts


def label_frame(
    img: ImageRGB,
    category: str,
    frame_id: str,
    *,
    trapezoid: Trapezoid | None = None,
    params: TraversalParams | None = None,
    bands: dict[str, ColorBand] | None = None,
    probability: float | None = None,
    roi: RoiResult | None = None,
) -> AnnotationRecord:
    """ROI-reduce, threshold with the category's band, trace every seed.

    Polylines shorter than two points are dropped; coordinates are in
    full-frame pixel space.
    """
    if params is None:
        params = TraversalParams()
    band = (bands or DEFAULT_BANDS)[category]
    if roi is None:
        roi = reduce_roi(img, trapezoid)
    thresh = threshold_color(img, roi.roi_mask, band)
    polylines = []
    for seed in find_seeds(thresh, params):
        line = circledat_traverse(thresh, seed, params)
        if len(line) >= 2:
            polylines.append(line)
    return AnnotationRecord(
        frame_id=frame_id,
        category=category,
        probability=probability,
        band=band.name,
        polylines=polylines,
        crop_top_row=roi.crop_top_row,
        trapezoid=trapezoid or default_trapezoid(img.width, img.height),
        mask_foreground=thresh.foreground_count(),
        mask=thresh,
    )


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    points = []
    dx, sx = abs(x1 - x0), 1 if x0 < x1 else -1
    dy, sy = -abs(y1 - y0), 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        points.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return points


def render_overlay(img: ImageRGB, record: AnnotationRecord) -> ImageRGB:
    """Copy of the frame with each polyline drawn as 3 px wide red segments."""
    out = img.data.copy()
    h, w = img.height, img.width
    for line in record.polylines:
        for (x, y) in line:
            if not (0 <= x < w and 0 <= y < h):
                raise OutOfBounds(f"polyline point ({x}, {y}) outside {w}x{h}")
        for (x0, y0), (x1, y1) in zip(line, line[1:]):
            for (x, y) in _bresenham(x0, y0, x1, y1):
                out[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2] = OVERLAY_COLOR
    return ImageRGB.from_array(out)


def _record_payload(record: AnnotationRecord) -> dict:
    return {
        "frame": record.frame_id,
        "category": record.category,
        "probability": record.probability,
        "band": record.band,
        "polylines": [[[int(x), int(y)] for (x, y) in line] for line in record.polylines],
        "roi": {
            "crop_top_row": record.crop_top_row,
            "trapezoid": [[float(x), float(y)] for (x, y) in record.trapezoid.vertices],
        },
        "mask_foreground": record.mask_foreground,
    }


def export_annotation(record: AnnotationRecord, fmt: str = "json") -> bytes:
    """Serialize coordinates: canonical JSON or frame,polyline,idx,x,y CSV."""
    if fmt == "json":
        text = json.dumps(_record_payload(record), sort_keys=True, separators=(",", ":"))
        return (text + "\n").encode("utf-8")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["frame", "polyline", "idx", "x", "y"])
        for li, line in enumerate(record.polylines):
            for pi, (x, y) in enumerate(line):
                writer.writerow([record.frame_id, li, pi, x, y])
        return buf.getvalue().encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}")


def parse_annotation(data: bytes) -> AnnotationRecord:
    """Inverse of the JSON export (mask is not serialized)."""
    obj = json.loads(data.decode("utf-8"))
    return AnnotationRecord(
        frame_id=obj["frame"],
        category=obj["category"],
        probability=obj["probability"],
        band=obj["band"],
        polylines=[[(int(x), int(y)) for x, y in line] for line in obj["polylines"]],
        crop_top_row=int(obj["roi"]["crop_top_row"]),
        trapezoid=Trapezoid(vertices=tuple((float(x), float(y)) for x, y in obj["roi"]["trapezoid"])),
        mask_foreground=int(obj["mask_foreground"]),
    )


def with_overrides(params: TraversalParams, overrides: dict | None) -> TraversalParams:
    return replace(params, **overrides) if overrides else params
