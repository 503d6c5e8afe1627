"""Seeded generator of microsurgery-like scenes with exact label masks.

Each scene composes, in depth order: two tubular vessels confined to the
left and right halves, two elongated rotated-rectangle holders entering
from the side edges, one thin arc (needle, 1-2 px wide), and one long
quadratic curve (wire, 1-2 px wide) spanning the image. Later primitives
overwrite earlier mask labels, so the thin structures sit on top of the
instruments they cross. Images render each class in a characteristic
color under a mild illumination gradient plus additive Gaussian noise.

Scene i of a spec is a pure function of (spec.seed, i): geometry draws
consume the stream first, rendering draws afterwards, all unconditional,
so the stream layout never depends on drawn values.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigurationError, DataError, LabelError
from .rng import Rng, derive_seed

CLASS_NAMES = ("BG", "LAV", "RAV", "LNH", "RNH", "ND", "WR")

CLASS_COLORS = np.array([
    [60, 95, 90],     # background: teal surgical field
    [225, 205, 185],  # LAV: pale vessel
    [235, 185, 180],  # RAV: pink vessel
    [90, 95, 105],    # LNH: dark steel
    [150, 155, 165],  # RNH: light steel
    [210, 220, 235],  # ND: bright needle
    [30, 35, 60],     # WR: dark wire
], dtype=np.float64)

NOISE_SIGMA = 8.0  # additive Gaussian, on the 0..255 scale


@dataclass
class SceneSpec:
    """Geometry ranges (in pixels at 64x64; lengths scale with size) and
    the sparsity bands the generated split is expected to satisfy."""

    seed: int = 0
    height: int = 64
    width: int = 64
    vessel_radius: tuple = (3.0, 5.5)
    holder_half_width: tuple = (1.8, 3.2)
    holder_length: tuple = (28.0, 52.0)
    needle_radius: tuple = (3.5, 8.0)
    needle_span: tuple = (1.3, 2.6)       # radians of arc
    thin_paint_radius: tuple = (0.62, 0.95)
    wire_band_pct: tuple = (1.5, 4.5)     # split-level pixel-fraction bands
    needle_band_pct: tuple = (0.1, 0.8)

    def __post_init__(self):
        if not (16 <= self.height <= 256 and 16 <= self.width <= 256):
            raise ConfigurationError(
                f"scene size must be within 16..256, got {self.height}x{self.width}"
            )

    @property
    def scale(self):
        return min(self.height, self.width) / 64.0


@dataclass
class LabeledScene:
    image: np.ndarray  # uint8 (H, W, 3)
    mask: np.ndarray   # uint8 (H, W), values 0..6
    thin_overlap: bool = False  # any needle/wire pixel drawn over an instrument


def _bezier(p0, p1, p2, spacing=0.25):
    """Sample a quadratic Bezier densely (about one point per `spacing` px)."""
    p0, p1, p2 = (np.asarray(p, dtype=np.float64) for p in (p0, p1, p2))
    approx_len = np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
    n = max(8, int(approx_len / spacing))
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2


def _arc(center, radius, theta0, span, spacing=0.25):
    n = max(8, int(abs(span) * radius / spacing))
    theta = theta0 + np.linspace(0.0, span, n)
    cy, cx = center
    return np.stack([cy + radius * np.sin(theta),
                     cx + radius * np.cos(theta)], axis=1)


def _paint_points(shape, points, radius):
    """Boolean mask of pixels whose centers lie within `radius` of any
    sample point; integer pixel coordinates are the centers."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    pts = np.asarray(points, dtype=np.float64)
    half = int(np.ceil(radius + 0.75))
    offs = np.arange(-half, half + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    base = np.round(pts).astype(np.int64)
    rows = base[:, 0, None] + oy.reshape(-1)[None, :]
    cols = base[:, 1, None] + ox.reshape(-1)[None, :]
    d2 = (rows - pts[:, 0, None]) ** 2 + (cols - pts[:, 1, None]) ** 2
    ok = ((d2 <= radius * radius)
          & (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w))
    out[rows[ok], cols[ok]] = True
    return out


def _rect_mask(shape, center, angle, half_len, half_wid):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy = yy - center[0]
    dx = xx - center[1]
    along = dx * np.cos(angle) + dy * np.sin(angle)
    across = -dx * np.sin(angle) + dy * np.cos(angle)
    return (np.abs(along) <= half_len) & (np.abs(across) <= half_wid)


def generate_scene(spec: SceneSpec, index: int) -> LabeledScene:
    """Deterministic scene `index` of the spec's stream."""
    rng = Rng(derive_seed(spec.seed, index))
    h, w = spec.height, spec.width
    s = spec.scale
    u = lambda lo, hi: float(rng.uniform(lo, hi)[0])
    mask = np.zeros((h, w), dtype=np.uint8)

    # vessels: vertical-ish tubes, one per half
    for cls, x_lo, x_hi in ((1, 0.05, 0.42), (2, 0.58, 0.95)):
        p0 = (u(-0.05, 0.15) * h, u(x_lo, x_hi) * w)
        p1 = (u(0.30, 0.70) * h, u(x_lo - 0.04, x_hi + 0.04) * w)
        p2 = (u(0.85, 1.05) * h, u(x_lo, x_hi) * w)
        radius = u(*spec.vessel_radius) * s
        mask[_paint_points((h, w), _bezier(p0, p1, p2), radius)] = cls

    # needle holders: rotated rectangles entering from the side edges
    for cls, from_left in ((3, True), (4, False)):
        entry_y = u(0.15, 0.85) * h
        angle = u(-0.55, 0.55)
        length = u(*spec.holder_length) * s
        half_wid = u(*spec.holder_half_width) * s
        if from_left:
            center = (entry_y + np.sin(angle) * length / 2,
                      np.cos(angle) * length / 2 - 2.0 * s)
        else:
            angle = np.pi - angle
            center = (entry_y + np.sin(angle) * length / 2,
                      (w - 1) + np.cos(angle) * length / 2 + 2.0 * s)
        mask[_rect_mask((h, w), center, angle, length / 2, half_wid)] = cls

    instruments = mask > 0

    # needle: a short thin arc in the central region
    nd_center = (u(0.25, 0.75) * h, u(0.25, 0.75) * w)
    nd_radius = u(*spec.needle_radius) * s
    nd_theta0 = u(0.0, 2 * np.pi)
    nd_span = u(*spec.needle_span)
    nd_paint = u(*spec.thin_paint_radius)
    nd_mask = _paint_points((h, w), _arc(nd_center, nd_radius, nd_theta0, nd_span),
                            nd_paint)
    mask[nd_mask] = 5

    # wire: one long quadratic curve spanning the image left to right
    wr_p0 = (u(0.05, 0.95) * h, u(0.0, 0.08) * w)
    wr_p2 = (u(0.05, 0.95) * h, u(0.92, 1.0) * w)
    wr_p1 = (u(-0.2, 1.2) * h, u(0.30, 0.70) * w)
    wr_paint = u(*spec.thin_paint_radius)
    wr_mask = _paint_points((h, w), _bezier(wr_p0, wr_p1, wr_p2), wr_paint)
    mask[wr_mask] = 6

    # guarantee the thin classes are nonempty even in degenerate layouts
    for cls, m, pts in ((5, nd_mask, nd_center), (6, wr_mask, wr_p1)):
        if not (mask == cls).any():
            r = min(h - 1, max(0, int(round(pts[0]))))
            c = min(w - 1, max(0, int(round(pts[1]))))
            mask[r, c] = cls

    thin_overlap = bool((instruments & (nd_mask | wr_mask)).any())

    # rendering: per-scene color jitter, illumination plane, pixel noise
    jitter = rng.uniform(-10.0, 10.0, 7 * 3).reshape(7, 3)
    colors = np.clip(CLASS_COLORS + jitter, 0, 255)
    gx = u(-0.22, 0.22)
    gy = u(-0.22, 0.22)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    illum = 1.0 + gx * (xx / w - 0.5) + gy * (yy / h - 0.5)
    noise = rng.normal(h * w * 3, std=NOISE_SIGMA).reshape(h, w, 3)
    img = colors[mask] * illum[..., None] + noise
    image = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return LabeledScene(image=image, mask=mask, thin_overlap=thin_overlap)


def dataset_stats(masks, num_classes=7):
    """Per-class pixel fractions (percent) over a whole split."""
    counts = np.zeros(num_classes, dtype=np.int64)
    total = 0
    for m in masks:
        m = np.asarray(m)
        counts += np.bincount(m.reshape(-1), minlength=num_classes)[:num_classes]
        total += m.size
    fractions = 100.0 * counts / max(total, 1)
    return {name: float(f) for name, f in zip(CLASS_NAMES, fractions)}


# ----------------------------------------------------------------------
# dataset I/O


def _image_path(root, name):
    return os.path.join(root, f"{name}.png")


def _mask_path(root, name):
    return os.path.join(root, f"{name}_mask.png")


def write_mask_png(path, mask):
    """8-bit indexed-palette PNG with palette index = class id."""
    pal = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    palette = np.zeros((256, 3), dtype=np.uint8)
    palette[:7] = CLASS_COLORS.astype(np.uint8)
    pal.putpalette(palette.reshape(-1).tolist())
    pal.save(path)


def write_scene(root, index, scene: LabeledScene):
    """PNG pair: `NNNNN.png` (RGB) and `NNNNN_mask.png` (palette indexed)."""
    name = f"{index:05d}"
    Image.fromarray(scene.image, mode="RGB").save(_image_path(root, name))
    write_mask_png(_mask_path(root, name), scene.mask)
    return name


def read_scene(root, name) -> LabeledScene:
    ipath, mpath = _image_path(root, name), _mask_path(root, name)
    for p in (ipath, mpath):
        if not os.path.exists(p):
            raise DataError(f"missing scene file {p}")
    image = np.asarray(Image.open(ipath).convert("RGB"))
    mask_img = Image.open(mpath)
    if mask_img.mode != "P":
        raise LabelError(f"{mpath} is not an indexed-palette PNG")
    mask = np.asarray(mask_img)
    if mask.max() > 6:
        raise LabelError(
            f"{mpath} contains palette index {int(mask.max())} outside 0..6"
        )
    return LabeledScene(image=image, mask=mask.astype(np.uint8))


def write_dataset(root, spec: SceneSpec, count, split=0.81):
    """Generate `count` scenes, write them plus manifest.json; returns the
    manifest dict. Split assignment is sequential: the first
    floor(count*split) scenes train, the rest validate."""
    os.makedirs(root, exist_ok=True)
    names = [write_scene(root, i, generate_scene(spec, i))
             for i in range(count)]
    n_train = int(count * split)
    manifest = {
        "spec": asdict(spec),
        "class_names": list(CLASS_NAMES),
        "palette": CLASS_COLORS.astype(int).tolist(),
        "count": count,
        "split": split,
        "train": names[:n_train],
        "val": names[n_train:],
    }
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def read_manifest(root):
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise DataError(f"no manifest.json under {root}")
    with open(path) as f:
        return json.load(f)


def load_split(root, which):
    """All scenes of a manifest split as a list of LabeledScene."""
    manifest = read_manifest(root)
    if which not in ("train", "val"):
        raise ConfigurationError(f"split must be 'train' or 'val', got {which!r}")
    return [read_scene(root, name) for name in manifest[which]]
