"""Deterministic synthetic airfield scenes with exact ground truth.

Each scene is a sky band over a pavement wedge converging to a single
vanishing point on the horizon, with land either side. Two edge lines and
a dashed centerline are drawn in the marking color family of the category
(white for runways, yellow for taxiways) from a start row in the lower
part of the frame down to the bottom edge; distant markings are left
unresolved. Ground truth (category, horizon row, marking mask, centerline
and edge-line polylines) is taken from the marking geometry before wear,
tire marks, or noise touch the rendered pixels.

Geometry notes:
  * The camera sits on the centerline, so the dashed centerline runs
    vertically through the vanishing-point column while the edge lines
    converge with perspective slants.
  * Marking columns are snapped to whole pixels, so pre-noise marking
    coverage is 0 or 1 per pixel and the 0.5-coverage mask rule is exact.
  * The centerline dash pattern is the height-scaled standard stripe
    (16 px stripe / 4 px gap at 225 rows) anchored at the bottom row, and
    the band start row snaps to the half-period grid; a radius-10 circular
    probe stepping up the centerline then always lands on stripe pixels,
    never inside a gap.
  * The marking start row sits below both the default trapezoid's top edge
    and any plausible horizon crop, so the stock ROI keeps the markings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IoFailure
from .imaging import BinaryMask, ImageRGB, decode_pgm, encode_pgm, encode_ppm, hsv_to_rgb
from .labeler import Polyline

MASK64 = (1 << 64) - 1

MARKING_START_FRAC = 0.60
PAVEMENT_EXTRA_FRAC = 0.06
WEAR_FADE = 0.5


def splitmix64(x: int) -> int:
    """One splitmix64 scramble step; derives per-frame seeds."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SceneSpec:
    category: str
    width: int
    height: int
    horizon_frac: float
    sky_albedo: float
    pavement_albedo: float
    edge_offsets: tuple[float, float]  # left / right, fractions of width
    dash_len: int
    dash_gap: int
    line_width: int
    vp_x_frac: float
    marking_wear: float
    tire_mark_count: int
    noise_sigma: float
    seed: int


@dataclass
class GroundTruth:
    category: str
    horizon_row: int
    marking_mask: BinaryMask
    centerlines: list[Polyline]
    edge_lines: list[Polyline]


def sample_scene_spec(
    category: str,
    width: int,
    height: int,
    rng: np.random.Generator,
    clean: bool = False,
) -> SceneSpec:
    """Draw a scene from the given generator.

    Field draw order: horizon_frac U(0.15, 0.55); sky_albedo U(0.6, 0.95);
    pavement_albedo U(0.2, min(0.5, sky_albedo - 0.25)); edge offsets
    U(0.16, 0.25) left then right; line_width in {3, 4, 5}; vp_x_frac
    U(0.42, 0.58); marking_wear U(0, 1); tire_mark_count in {0..3};
    noise_sigma U(0, 0.05); seed 63-bit. Dash length/gap are the fixed
    height-scaled stripe pattern, not sampled. With clean=True the
    degradation fields are forced to zero after drawing, so the same rng
    yields the same geometry either way.
    """
    if width < 64 or height < 36:
        raise ValueError(f"scene dimensions {width}x{height} below 64x36")
    if category not in ("runway", "taxiway"):
        raise ValueError(f"unknown category {category!r}")
    horizon_frac = float(rng.uniform(0.15, 0.55))
    sky_albedo = float(rng.uniform(0.6, 0.95))
    # keep the sky brighter than the pavement so intensity contrast is real
    pavement_albedo = float(rng.uniform(0.2, min(0.5, sky_albedo - 0.25)))
    edge_left = float(rng.uniform(0.16, 0.25))
    edge_right = float(rng.uniform(0.16, 0.25))
    line_width = int(rng.integers(3, 6))
    vp_x_frac = float(rng.uniform(0.42, 0.58))
    marking_wear = float(rng.uniform(0.0, 1.0))
    tire_mark_count = int(rng.integers(0, 4))
    noise_sigma = float(rng.uniform(0.0, 0.05))
    seed = int(rng.integers(0, 1 << 63))
    if clean:
        marking_wear, tire_mark_count, noise_sigma = 0.0, 0, 0.0
    return SceneSpec(
        category=category,
        width=width,
        height=height,
        horizon_frac=horizon_frac,
        sky_albedo=sky_albedo,
        pavement_albedo=pavement_albedo,
        edge_offsets=(edge_left, edge_right),
        dash_len=max(4, int(round(16 * height / 225))),
        dash_gap=max(1, int(round(4 * height / 225))),
        line_width=line_width,
        vp_x_frac=vp_x_frac,
        marking_wear=marking_wear,
        tire_mark_count=tire_mark_count,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def marking_start_row(height: int, horizon_row: int) -> int:
    margin = int(round(0.02 * height))
    raw = max(int(round(MARKING_START_FRAC * (height - 1))), horizon_row + margin + 8)
    # snap the band start onto the stripe half-period grid (counted from the
    # bottom row) so probe landings stay aligned with dashes
    return (height - 1) - ((height - 1 - raw) // 10) * 10


def _line_x(x_bottom: float, vp_x: float, horizon_row: int, height: int, rows: np.ndarray):
    t = (rows - horizon_row) / float(height - 1 - horizon_row)
    return vp_x + (x_bottom - vp_x) * t


def generate_scene(spec: SceneSpec) -> tuple[ImageRGB, GroundTruth]:
    """Render the scene and its exact labels; pure function of the spec."""
    rng = np.random.default_rng(spec.seed)
    w, h = spec.width, spec.height
    horizon_row = int(round(spec.horizon_frac * (h - 1)))
    y_start = marking_start_row(h, horizon_row)

    # render-time draws, in order: sky tint, marking color, land color,
    # pavement texture, tire marks, pixel noise
    sky_hue = float(rng.uniform(200.0, 230.0))
    sky_sat = float(rng.uniform(0.18, 0.30))
    if spec.category == "runway":
        mark_hsv = (float(rng.uniform(0, 360)), float(rng.uniform(0.0, 0.08)), float(rng.uniform(0.88, 0.96)))
    else:
        mark_hsv = (float(rng.uniform(52, 58)), float(rng.uniform(0.72, 0.85)), float(rng.uniform(0.82, 0.92)))
    land_hsv = (float(rng.uniform(95, 125)), float(rng.uniform(0.35, 0.55)), float(rng.uniform(0.26, 0.36)))
    texture_sigma = float(rng.uniform(0.005, 0.02))
    texture = rng.normal(0.0, 1.0, (h, w))

    img = np.empty((h, w, 3))

    # sky: vertical value gradient down to the horizon
    for y in range(horizon_row):
        frac = y / max(1, horizon_row - 1)
        v = spec.sky_albedo * (0.82 + 0.18 * frac)
        img[y] = hsv_to_rgb(sky_hue, sky_sat, v)

    # ground: land base, pavement wedge on top
    img[horizon_row:] = hsv_to_rgb(*land_hsv)
    rows = np.arange(horizon_row, h)
    vp_x = spec.vp_x_frac * (w - 1)
    eo_l, eo_r = spec.edge_offsets
    pav_l = _line_x((eo_l - PAVEMENT_EXTRA_FRAC) * (w - 1), vp_x, horizon_row, h, rows)
    pav_r = _line_x((1.0 - eo_r + PAVEMENT_EXTRA_FRAC) * (w - 1), vp_x, horizon_row, h, rows)
    cols = np.arange(w)[None, :]
    wedge = (cols >= np.ceil(pav_l)[:, None]) & (cols <= np.floor(pav_r)[:, None])
    shade = spec.pavement_albedo * (0.9 + 0.1 * ((rows - horizon_row) / max(1, h - 1 - horizon_row)))
    pav = np.broadcast_to(shade[:, None], wedge.shape) + texture_sigma * texture[horizon_row:]
    ground = img[horizon_row:]
    for ch in range(3):
        ground[:, :, ch] = np.where(wedge, pav, ground[:, :, ch])

    # markings: two edge lines plus a dashed centerline, columns snapped
    mark_rows = np.arange(y_start, h)
    period = spec.dash_len + spec.dash_gap
    is_dash = ((h - 1 - mark_rows) % period) < spec.dash_len
    x_left = _line_x(eo_l * (w - 1), vp_x, horizon_row, h, mark_rows)
    x_right = _line_x((1.0 - eo_r) * (w - 1), vp_x, horizon_row, h, mark_rows)
    x_center = np.full(mark_rows.size, vp_x)

    alpha = np.zeros((h, w), dtype=bool)

    def paint(xc: np.ndarray, row_sel: np.ndarray) -> np.ndarray:
        """Mark integer columns [round(xc - w/2), +line_width); returns centers."""
        xl = np.rint(xc - spec.line_width / 2.0).astype(int)
        for k in range(spec.line_width):
            c = xl + k
            ok = row_sel & (c >= 0) & (c < w)
            alpha[mark_rows[ok], c[ok]] = True
        return xl + spec.line_width // 2

    all_rows = np.ones(mark_rows.size, dtype=bool)
    cx_left = paint(x_left, all_rows)
    cx_right = paint(x_right, all_rows)
    cx_center = paint(x_center, is_dash)

    edge_lines = [
        [(int(x), int(y)) for x, y in zip(cx_left, mark_rows)],
        [(int(x), int(y)) for x, y in zip(cx_right, mark_rows)],
    ]
    centerlines: list[Polyline] = []
    run: Polyline = []
    for x, y, on in zip(cx_center, mark_rows, is_dash):
        if on:
            run.append((int(x), int(y)))
        elif run:
            centerlines.append(run)
            run = []
    if run:
        centerlines.append(run)

    truth = GroundTruth(
        category=spec.category,
        horizon_row=horizon_row,
        marking_mask=BinaryMask.from_array(alpha.copy()),
        centerlines=centerlines,
        edge_lines=edge_lines,
    )

    # degrade the rendered pixels only; truth stays clean
    mark_rgb = np.array(hsv_to_rgb(*mark_hsv))
    pav_rgb = np.full(3, spec.pavement_albedo)
    drawn = mark_rgb + WEAR_FADE * spec.marking_wear * (pav_rgb - mark_rgb)
    img[alpha] = drawn

    for _ in range(spec.tire_mark_count):
        tx = float(rng.uniform(0.3, 0.7)) * (w - 1)
        ty = int(rng.uniform(0.6, 0.85) * (h - 1))
        tlen = int(rng.uniform(0.1, 0.3) * h)
        twidth = int(rng.integers(3, 9))
        slant = float(rng.uniform(-0.3, 0.3))
        darkness = float(rng.uniform(0.3, 0.55))
        for y in range(ty, min(h, ty + tlen)):
            xc = int(round(tx + slant * (y - ty)))
            x0, x1 = max(0, xc - twidth // 2), min(w, xc + (twidth + 1) // 2)
            img[y, x0:x1] *= 1.0 - darkness

    if spec.noise_sigma > 0:
        img += rng.normal(0.0, spec.noise_sigma, (h, w, 3))

    np.clip(img, 0.0, 1.0, out=img)
    return ImageRGB.from_array(img), truth


def truth_payload(truth: GroundTruth, mask_path: str) -> dict:
    return {
        "category": truth.category,
        "horizon_row": truth.horizon_row,
        "centerlines": [[[int(x), int(y)] for x, y in line] for line in truth.centerlines],
        "edge_lines": [[[int(x), int(y)] for x, y in line] for line in truth.edge_lines],
        "mask": mask_path,
    }


def load_truth(path: Path) -> GroundTruth:
    """Read a truth record (and its mask) back from a corpus tree."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    mask = decode_pgm((Path(path).parent.parent / obj["mask"]).read_bytes())
    return GroundTruth(
        category=obj["category"],
        horizon_row=int(obj["horizon_row"]),
        marking_mask=mask,
        centerlines=[[(int(x), int(y)) for x, y in line] for line in obj["centerlines"]],
        edge_lines=[[(int(x), int(y)) for x, y in line] for line in obj["edge_lines"]],
    )


def generate_corpus(
    n_runway: int,
    n_taxiway: int,
    width: int,
    height: int,
    seed: int,
    out_dir: str | Path,
    clean: bool = False,
) -> dict:
    """Write frames, truth records, and a manifest under out_dir.

    Layout: {runway,taxiway}/<stem>.ppm, truth/<stem>.json,
    truth/<stem>.mask.pgm, manifest.json. Per-frame seeds come from
    splitmix64(seed XOR global frame index), so any frame can be
    regenerated independently and the tree is a pure function of the
    arguments.
    """
    if n_runway < 1 or n_taxiway < 1:
        raise ValueError("need at least one frame per category")
    root = Path(out_dir)
    try:
        for sub in ("runway", "taxiway", "truth"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        frames = []
        plan = [("runway", i) for i in range(n_runway)] + [("taxiway", i) for i in range(n_taxiway)]
        for index, (category, local) in enumerate(plan):
            frame_seed = splitmix64((seed ^ index) & MASK64)
            rng = np.random.default_rng(frame_seed)
            spec = sample_scene_spec(category, width, height, rng, clean=clean)
            img, truth = generate_scene(spec)
            stem = f"{category}_{local:04d}"
            frame_rel = f"{category}/{stem}.ppm"
            truth_rel = f"truth/{stem}.json"
            mask_rel = f"truth/{stem}.mask.pgm"
            (root / frame_rel).write_bytes(encode_ppm(img))
            (root / mask_rel).write_bytes(encode_pgm(truth.marking_mask))
            (root / truth_rel).write_text(
                json.dumps(truth_payload(truth, mask_rel), sort_keys=True, separators=(",", ":"))
                + "\n",
                encoding="utf-8",
            )
            frames.append(
                {"id": stem, "category": category, "frame": frame_rel, "truth": truth_rel, "mask": mask_rel}
            )
        manifest = {
            "width": width,
            "height": height,
            "seed": seed,
            "clean": clean,
            "n_runway": n_runway,
            "n_taxiway": n_taxiway,
            "frames": frames,
        }
        (root / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest
