"""
Parametric shape families used to synthesise paired sketches and photos.

A category is a ShapeSpec (family plus base geometry and colour). An instance
is a jittered placement of that shape; it is rendered once as a photo (filled,
textured, on a shaded background) and once as a sketch (dark outline strokes
on white, with per-vertex stroke jitter).
"""

from dataclasses import dataclass

import numpy as np

try:
    from PIL import Image, ImageDraw  # type: ignore
except ImportError:  # pragma: no cover - reported by data.imageio
    Image = ImageDraw = None  # type: ignore[assignment]

FAMILIES: tuple[str, ...] = (
    "ellipse",
    "rectangle",
    "triangle",
    "diamond",
    "pentagon",
    "hexagon",
    "star5",
    "star7",
    "cross",
    "annulus",
    "arrow",
    "trapezoid",
)


@dataclass(frozen=True)
class ShapeSpec:
    category_id: int
    name: str
    family: str
    aspect: float
    rotation: float
    stroke_width: int
    fill_color: tuple[float, float, float]
    texture_seed: int

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"Unknown shape family {self.family!r}")
        if not 0.4 <= self.aspect <= 1.0:
            raise ValueError(f"aspect {self.aspect} outside [0.4, 1.0]")
        if not 1 <= self.stroke_width <= 3:
            raise ValueError(f"stroke_width {self.stroke_width} outside [1, 3]")


@dataclass(frozen=True)
class Placement:
    center: tuple[float, float]
    radius: float
    rotation: float
    aspect_jitter: float
    brightness: float


def make_shape_spec(category_id: int, rng: np.random.Generator) -> ShapeSpec:
    family = FAMILIES[category_id % len(FAMILIES)]
    generation = category_id // len(FAMILIES)
    aspect = 1.0 if generation == 0 else float(rng.uniform(0.55, 0.9))
    return ShapeSpec(
        category_id=category_id,
        name=f"{family}-{generation}" if generation else family,
        family=family,
        aspect=aspect,
        rotation=float(rng.uniform(-np.pi / 8, np.pi / 8)) if generation else 0.0,
        stroke_width=int(rng.integers(1, 3)),
        fill_color=tuple(float(c) for c in rng.uniform(0.15, 0.85, size=3)),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
    )


def make_placement(size: int, rng: np.random.Generator) -> Placement:
    return Placement(
        center=(
            float(size / 2 + rng.uniform(-0.08, 0.08) * size),
            float(size / 2 + rng.uniform(-0.08, 0.08) * size),
        ),
        radius=float(size * rng.uniform(0.28, 0.38)),
        rotation=float(rng.uniform(-0.25, 0.25)),
        aspect_jitter=float(rng.uniform(0.9, 1.1)),
        brightness=float(rng.uniform(0.85, 1.15)),
    )


def _regular(count: int, offset: float = -np.pi / 2) -> np.ndarray:
    angles = offset + 2 * np.pi * np.arange(count) / count
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _star(points: int, inner: float = 0.45) -> np.ndarray:
    radii = np.where(np.arange(2 * points) % 2 == 0, 1.0, inner)
    return _regular(2 * points) * radii[:, None]


def unit_outline(family: str) -> list[np.ndarray]:
    """Closed polygons in unit coordinates; later polygons are holes."""

    if family == "ellipse":
        return [_regular(40)]
    if family == "rectangle":
        return [np.array([[-1.0, -0.7], [1.0, -0.7], [1.0, 0.7], [-1.0, 0.7]])]
    if family == "triangle":
        return [_regular(3)]
    if family == "diamond":
        return [np.array([[0.0, -1.0], [0.65, 0.0], [0.0, 1.0], [-0.65, 0.0]])]
    if family == "pentagon":
        return [_regular(5)]
    if family == "hexagon":
        return [_regular(6, 0.0)]
    if family == "star5":
        return [_star(5)]
    if family == "star7":
        return [_star(7, 0.6)]
    if family == "cross":
        w = 0.33
        return [
            np.array(
                [
                    [-w, -1], [w, -1], [w, -w], [1, -w], [1, w], [w, w],
                    [w, 1], [-w, 1], [-w, w], [-1, w], [-1, -w], [-w, -w],
                ],
                dtype=float,
            )
        ]
    if family == "annulus":
        return [_regular(40), _regular(40) * 0.5]
    if family == "arrow":
        return [
            np.array(
                [[-1, -0.3], [0.2, -0.3], [0.2, -0.75], [1, 0], [0.2, 0.75], [0.2, 0.3], [-1, 0.3]],
                dtype=float,
            )
        ]
    if family == "trapezoid":
        return [np.array([[-0.5, -0.7], [0.5, -0.7], [1.0, 0.7], [-1.0, 0.7]])]
    raise ValueError(f"Unknown shape family {family!r}")


def place_outline(spec: ShapeSpec, placement: Placement) -> list[np.ndarray]:
    angle = spec.rotation + placement.rotation
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    stretch = np.array([1.0, spec.aspect * placement.aspect_jitter])
    center = np.asarray(placement.center)
    return [(poly * stretch) @ rot.T * placement.radius + center for poly in unit_outline(spec.family)]


def _polygon_mask(polygons: list[np.ndarray], size: int) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    for index, poly in enumerate(polygons):
        draw.polygon([tuple(p) for p in poly], fill=0 if index else 255)
    return np.asarray(canvas, dtype=np.float64) / 255.0


def render_photo(spec: ShapeSpec, placement: Placement, size: int, rng: np.random.Generator) -> np.ndarray:
    """Filled, textured shape over a shaded background; (size, size, 3) in [0, 1]."""

    ys, xs = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.35, 0.75, size=3)
    tilt = rng.uniform(-0.25, 0.25, size=2)
    background = base[None, None, :] + (tilt[0] * xs + tilt[1] * ys)[:, :, None]
    background = background + rng.normal(0.0, 0.03, size=(size, size, 3))

    texture_rng = np.random.default_rng([spec.texture_seed, int(placement.center[0] * 1000)])
    shading = 1.0 - 0.25 * (xs + ys)[:, :, None]
    fill = np.asarray(spec.fill_color)[None, None, :] * placement.brightness * shading
    fill = fill + texture_rng.normal(0.0, 0.05, size=(size, size, 3))

    mask = _polygon_mask(place_outline(spec, placement), size)[:, :, None]
    return np.clip(mask * fill + (1.0 - mask) * background, 0.0, 1.0)


def render_sketch(spec: ShapeSpec, placement: Placement, size: int, rng: np.random.Generator) -> np.ndarray:
    """Dark outline strokes on white with vertex jitter; (size, size) in [0, 1]."""

    canvas = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(canvas)
    ink = int(rng.integers(0, 60))
    for poly in place_outline(spec, placement):
        jittered = poly + rng.normal(0.0, 0.012 * size, size=poly.shape)
        points = [tuple(p) for p in jittered] + [tuple(jittered[0])]
        draw.line(points, fill=ink, width=spec.stroke_width)
    return np.asarray(canvas, dtype=np.float64) / 255.0


__all__ = [
    "FAMILIES",
    "Placement",
    "ShapeSpec",
    "make_placement",
    "make_shape_spec",
    "place_outline",
    "render_photo",
    "render_sketch",
    "unit_outline",
]
