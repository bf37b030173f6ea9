"""Procedural shapes world: attribute scenes, deterministic rendering,
caption grammar and oracle edit masks.

Every scene is a tuple over closed vocabularies plus a jitter seed for
sub-pixel placement. render() is a pure function of (scene, resolution)
and also returns the ground-truth region partition used by oracle masks
and background metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .blob import read_tensor, write_tensor

SHAPES = ["circle", "square", "triangle", "star"]
FILL_COLORS = ["red", "blue", "green", "yellow", "purple", "orange", "cyan", "magenta"]
SIZES = ["small", "medium", "large"]
POSITIONS = [
    "top-left", "top-center", "top-right",
    "center-left", "center", "center-right",
    "bottom-left", "bottom-center", "bottom-right",
]
BACKGROUNDS = ["white", "black", "gray", "brown", "pink", "olive", "teal", "beige"]
ACCESSORIES = ["none", "border", "dot"]

ATTRIBUTES: dict[str, list[str]] = {
    "shape": SHAPES,
    "fill_color": FILL_COLORS,
    "size": SIZES,
    "position": POSITIONS,
    "background": BACKGROUNDS,
    "accessory": ACCESSORIES,
}

# RGB in [0,1]; fill and background palettes are disjoint and chosen so any
# fill stays visible on any background.
_FILL_RGB = {
    "red": (220, 40, 40), "blue": (40, 80, 220), "green": (40, 180, 70),
    "yellow": (230, 220, 50), "purple": (140, 60, 200), "orange": (240, 140, 30),
    "cyan": (60, 200, 220), "magenta": (220, 60, 180),
}
_BG_RGB = {
    "white": (245, 245, 245), "black": (20, 20, 20), "gray": (128, 128, 128),
    "brown": (120, 80, 50), "pink": (250, 200, 210), "olive": (110, 115, 40),
    "teal": (25, 110, 110), "beige": (225, 210, 170),
}
# Accessories are two-tone (black + white bands) so they contrast with any
# fill or background color.
_ACC_DARK = (15, 15, 15)
_ACC_LIGHT = (240, 240, 240)

_RADII = {"small": 3.2, "medium": 4.6, "large": 6.0}  # at base resolution 32
_BASE_RES = 32
_SUPERSAMPLE = 4
JITTER_PIXELS = 2.0

RESOLUTIONS = (32, 64)


@dataclass(frozen=True)
class Scene:
    shape: str
    fill_color: str
    size: str
    position: str
    background: str
    accessory: str
    jitter_seed: int

    def __post_init__(self) -> None:
        for name, values in ATTRIBUTES.items():
            if getattr(self, name) not in values:
                raise ValueError(f"unknown {name} {getattr(self, name)!r}")

    def attributes(self) -> dict[str, str]:
        return {name: getattr(self, name) for name in ATTRIBUTES}

    def to_dict(self) -> dict:
        d = self.attributes()
        d["jitter_seed"] = self.jitter_seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(**{k: d[k] for k in (*ATTRIBUTES, "jitter_seed")})


def sample_scene(rng: np.random.Generator) -> Scene:
    """Uniform over the attribute product; deterministic given the generator state."""
    picks = {name: values[int(rng.integers(len(values)))] for name, values in ATTRIBUTES.items()}
    return Scene(jitter_seed=int(rng.integers(2**31 - 1)), **picks)


def edit_scene(scene: Scene, attribute: str, value: str) -> Scene:
    if attribute not in ATTRIBUTES:
        raise ValueError(f"unknown attribute {attribute!r}")
    if value not in ATTRIBUTES[attribute]:
        raise ValueError(f"unknown {attribute} value {value!r}")
    return replace(scene, **{attribute: value})


# ---------------------------------------------------------------------------
# rendering


def _grid_coords(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    # supersampled pixel-center coordinates in base-32 units
    n = resolution * _SUPERSAMPLE
    step = _BASE_RES / n
    axis = (np.arange(n) + 0.5) * step
    return np.meshgrid(axis, axis, indexing="xy")


def _inside_shape(shape: str, xs: np.ndarray, ys: np.ndarray, cx: float, cy: float, radius: float) -> np.ndarray:
    dx, dy = xs - cx, ys - cy
    if shape == "circle":
        return dx * dx + dy * dy <= radius * radius
    if shape == "square":
        h = radius * 0.9
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    if shape == "triangle":
        r = radius * 1.2
        angles = np.deg2rad([90.0, 210.0, 330.0])
        verts = [(r * np.cos(a), -r * np.sin(a)) for a in angles]
        return _inside_convex(verts, dx, dy)
    if shape == "star":
        ro, ri = radius * 1.3, radius * 0.55
        outer = [np.deg2rad(90.0 + 72.0 * k) for k in range(5)]
        inner = [np.deg2rad(126.0 + 72.0 * k) for k in range(5)]
        o = [(ro * np.cos(a), -ro * np.sin(a)) for a in outer]
        i = [(ri * np.cos(a), -ri * np.sin(a)) for a in inner]
        inside = _inside_convex(i, dx, dy)  # inner pentagon
        for k in range(5):
            tri = [o[k], i[k], i[(k - 1) % 5]]
            inside |= _inside_convex(tri, dx, dy)
        return inside
    raise ValueError(f"unknown shape {shape!r}")


def _inside_convex(verts: list[tuple[float, float]], dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    n = len(verts)
    area2 = sum(
        verts[k][0] * verts[(k + 1) % n][1] - verts[(k + 1) % n][0] * verts[k][1]
        for k in range(n)
    )
    inside = np.ones_like(dx, dtype=bool)
    for k in range(n):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % n]
        cross = (x2 - x1) * (dy - y1) - (y2 - y1) * (dx - x1)
        inside &= (cross >= 0) if area2 > 0 else (cross <= 0)
    return inside


def _downsample(mask_or_img: np.ndarray, resolution: int) -> np.ndarray:
    n = resolution
    s = _SUPERSAMPLE
    if mask_or_img.ndim == 2:
        return mask_or_img.reshape(n, s, n, s).mean(axis=(1, 3))
    return mask_or_img.reshape(mask_or_img.shape[0], n, s, n, s).mean(axis=(2, 4))


def _center(scene: Scene) -> tuple[float, float]:
    idx = POSITIONS.index(scene.position)
    row, col = divmod(idx, 3)
    cell = _BASE_RES / 3.0
    cx, cy = (col + 0.5) * cell, (row + 0.5) * cell
    rng = np.random.default_rng(scene.jitter_seed)
    jx, jy = rng.uniform(-JITTER_PIXELS, JITTER_PIXELS, size=2)
    return cx + jx, cy + jy


def render(scene: Scene, resolution: int = 32) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Render a scene to an image in [-1, 1] of shape (3, r, r) plus the
    {foreground, background, accessory} partition masks (bool, (r, r))."""
    if resolution not in RESOLUTIONS:
        raise ValueError(f"resolution must be one of {RESOLUTIONS}, got {resolution}")
    xs, ys = _grid_coords(resolution)
    cx, cy = _center(scene)
    radius = _RADII[scene.size]

    shape_in = _inside_shape(scene.shape, xs, ys, cx, cy, radius)
    acc_in = np.zeros_like(shape_in)
    acc_dark = np.zeros_like(shape_in)
    acc_light = np.zeros_like(shape_in)
    if scene.accessory == "border":
        band1 = _inside_shape(scene.shape, xs, ys, cx, cy, radius + 1.2) & ~shape_in
        band2 = _inside_shape(scene.shape, xs, ys, cx, cy, radius + 2.4) & ~shape_in & ~band1
        acc_dark, acc_light = band1, band2
        acc_in = band1 | band2
    elif scene.accessory == "dot":
        dd = (xs - cx) ** 2 + (ys - cy) ** 2
        core = dd <= 1.1**2
        ring = (dd <= 2.2**2) & ~core
        acc_dark, acc_light = core, ring
        acc_in = core | ring

    canvas = np.empty((3,) + xs.shape, dtype=np.float64)
    for c in range(3):
        canvas[c] = _BG_RGB[scene.background][c] / 255.0
        canvas[c][shape_in] = _FILL_RGB[scene.fill_color][c] / 255.0
        canvas[c][acc_dark] = _ACC_DARK[c] / 255.0
        canvas[c][acc_light] = _ACC_LIGHT[c] / 255.0

    image = (2.0 * _downsample(canvas, resolution) - 1.0).astype(np.float32)

    cov_shape = _downsample(shape_in.astype(np.float64), resolution)
    cov_acc = _downsample(acc_in.astype(np.float64), resolution)
    accessory = cov_acc > 0.5
    foreground = (cov_shape > 0.5) & ~accessory
    background = ~(foreground | accessory)
    masks = {"foreground": foreground, "background": background, "accessory": accessory}
    return image, masks


# regions a change of each attribute is allowed to touch
_GOVERNED_REGIONS = {
    "shape": ("foreground", "accessory"),
    "size": ("foreground", "accessory"),
    "position": ("foreground", "accessory"),
    "fill_color": ("foreground",),
    "background": ("background",),
    "accessory": ("accessory",),
}


def oracle_mask(src: Scene, tgt: Scene, resolution: int = 32) -> np.ndarray:
    """Ground-truth mask of pixels an edit src->tgt is allowed to change:
    the union, over differing attributes, of their governing regions in
    both renders."""
    if src.jitter_seed != tgt.jitter_seed:
        raise ValueError("oracle_mask requires scenes sharing jitter_seed")
    _, masks_src = render(src, resolution)
    _, masks_tgt = render(tgt, resolution)
    out = np.zeros((resolution, resolution), dtype=bool)
    for name in ATTRIBUTES:
        if getattr(src, name) != getattr(tgt, name):
            for region in _GOVERNED_REGIONS[name]:
                out |= masks_src[region]
                out |= masks_tgt[region]
    return out


# ---------------------------------------------------------------------------
# caption grammar

DETAILED_TEMPLATE = "a {size} {fill_color} {shape} with {accessory} at the {position} on a {background} background"
SHORT_TEMPLATE = "a {fill_color} {shape}"


def caption(scene: Scene, style: str = "detailed") -> str:
    if style == "detailed":
        return DETAILED_TEMPLATE.format(**scene.attributes())
    if style == "short":
        return SHORT_TEMPLATE.format(**scene.attributes())
    raise ValueError(f"unknown caption style {style!r}")


def parse_caption(text: str) -> dict[str, str]:
    """Invert the detailed caption template back to its attribute dict."""
    words = text.strip().lower().split()
    if len(words) != 13:
        raise ValueError(f"not a detailed caption (expected 13 words, got {len(words)}): {text!r}")
    glue = {0: "a", 4: "with", 6: "at", 7: "the", 9: "on", 10: "a", 12: "background"}
    for idx, expected in glue.items():
        if words[idx] != expected:
            raise ValueError(f"caption word {idx} is {words[idx]!r}, expected {expected!r}: {text!r}")
    attrs = {
        "size": words[1], "fill_color": words[2], "shape": words[3],
        "accessory": words[5], "position": words[8], "background": words[11],
    }
    for name, value in attrs.items():
        if value not in ATTRIBUTES[name]:
            raise ValueError(f"unknown {name} {value!r} in caption {text!r}")
    return attrs


def scene_from_caption(text: str, jitter_seed: int = 0) -> Scene:
    return Scene(jitter_seed=jitter_seed, **parse_caption(text))


# ---------------------------------------------------------------------------
# datasets


def build_dataset(seed: int, count: int, resolution: int = 32) -> tuple[np.ndarray, list[Scene]]:
    """Deterministic dataset: (images (N,3,r,r) float32, scenes)."""
    rng = np.random.default_rng(seed)
    scenes = [sample_scene(rng) for _ in range(count)]
    images = np.stack([render(s, resolution)[0] for s in scenes])
    return images, scenes


def save_dataset(out_dir: str | Path, seed: int, count: int, resolution: int = 32) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, scenes = build_dataset(seed, count, resolution)
    write_tensor(out_dir / "images.tbe", images)
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for i, scene in enumerate(scenes):
            fh.write(json.dumps({"index": i, **scene.to_dict()}) + "\n")
    with open(out_dir / "meta.json", "w") as fh:
        json.dump({"seed": seed, "count": count, "resolution": resolution}, fh, indent=2)
    return out_dir


def load_dataset(in_dir: str | Path) -> tuple[np.ndarray, list[Scene]]:
    in_dir = Path(in_dir)
    images = read_tensor(in_dir / "images.tbe")
    scenes = []
    with open(in_dir / "manifest.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            rec.pop("index", None)
            scenes.append(Scene.from_dict(rec))
    return images, scenes
