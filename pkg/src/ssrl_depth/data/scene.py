"""Procedural two-domain scenes with analytic ray-cast depth.

Camera frame: x right, y down, z forward. A pixel (row ``v``, column ``u``)
casts the ray ``((u + 0.5 - cx) / f, (v + 0.5 - cy) / f, 1)`` from the
origin, so the ray parameter at a hit equals its z-depth.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

Style = Literal["source", "target"]

SKY_COLOR = np.array([0.70, 0.80, 0.95])
_TO_LIGHT = np.array([-0.3, -1.0, -0.5]) / np.linalg.norm([-0.3, -1.0, -0.5])


class InvalidSceneError(ValueError):
    """Raised when a scene description cannot be rendered."""


@dataclass(frozen=True)
class Camera:
    focal: float
    cx: float
    cy: float
    height: int
    width: int


@dataclass(frozen=True)
class Plane:
    """Infinite plane ``normal . X == offset``."""

    normal: tuple[float, float, float]
    offset: float
    albedo: tuple[float, float, float]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its center and full edge lengths."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    albedo: tuple[float, float, float]

    @property
    def z_range(self) -> tuple[float, float]:
        return self.center[2] - self.size[2] / 2, self.center[2] + self.size[2] / 2


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float]

    @property
    def z_range(self) -> tuple[float, float]:
        return self.center[2] - self.radius, self.center[2] + self.radius


Primitive = Union[Plane, Box, Sphere]


@dataclass(frozen=True)
class StyleParams:
    """Appearance corruption applied to target-style renders."""

    noise_sigma: float = 0.02
    color_shift: float = 0.1
    texture_freq: float = 0.6
    texture_amp: float = 0.35
    vignette: float = 0.35
    haze_distance: float = 60.0


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    camera: Camera
    planes: tuple[Plane, ...] = ()
    objects: tuple[Union[Box, Sphere], ...] = ()
    d_min: float = 1.0
    d_max: float = 80.0
    style: StyleParams = field(default_factory=StyleParams)

    def validate(self) -> None:
        cam = self.camera
        if not np.isfinite(cam.focal) or cam.focal <= 0:
            raise InvalidSceneError(f"degenerate camera: focal length {cam.focal}")
        if cam.height < 1 or cam.width < 1:
            raise InvalidSceneError(f"image size must be positive, got {cam.height}x{cam.width}")
        if not 0 < self.d_min < self.d_max:
            raise InvalidSceneError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        for obj in self.objects:
            lo, hi = obj.z_range
            if lo <= self.d_min or hi >= self.d_max:
                raise InvalidSceneError(f"object {obj} leaves the depth range ({self.d_min}, {self.d_max})")


def pixel_rays(camera: Camera) -> np.ndarray:
    """Ray directions with unit z component, shape ``(H, W, 3)``."""
    v, u = np.meshgrid(np.arange(camera.height, dtype=np.float64),
                       np.arange(camera.width, dtype=np.float64), indexing="ij")
    x = (u + 0.5 - camera.cx) / camera.focal
    y = (v + 0.5 - camera.cy) / camera.focal
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def _intersect_plane(rays: np.ndarray, plane: Plane) -> tuple[np.ndarray, np.ndarray]:
    n = np.asarray(plane.normal, dtype=np.float64)
    denom = rays @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = plane.offset / denom
    t = np.where(np.isfinite(t) & (t > 0), t, np.inf)
    normals = np.broadcast_to(n, rays.shape)
    return t, normals


def _intersect_box(rays: np.ndarray, box: Box) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(box.center, dtype=np.float64)
    half = np.asarray(box.size, dtype=np.float64) / 2
    lo, hi = c - half, c + half
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / rays
        t2 = hi / rays
    # Zero direction component: the slab is either everything or nothing.
    parallel = rays == 0
    inside = (lo <= 0) & (hi >= 0)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    enter = t_near.max(axis=-1)
    leave = t_far.min(axis=-1)
    hit = (enter <= leave) & (enter > 0)
    t = np.where(hit, enter, np.inf)
    axis = t_near.argmax(axis=-1)
    normals = np.zeros_like(rays)
    comp = np.take_along_axis(rays, axis[..., None], axis=-1)[..., 0]
    np.put_along_axis(normals, axis[..., None], -np.sign(comp)[..., None], axis=-1)
    return t, normals


def _intersect_sphere(rays: np.ndarray, sphere: Sphere) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(sphere.center, dtype=np.float64)
    a = np.einsum("...k,...k->...", rays, rays)
    b = rays @ c
    disc = b * b - a * (c @ c - sphere.radius ** 2)
    root = np.sqrt(np.maximum(disc, 0.0))
    t_near = (b - root) / a
    t = np.where((disc >= 0) & (t_near > 0), t_near, np.inf)
    points = rays * np.where(np.isfinite(t), t, 0.0)[..., None]
    normals = (points - c) / sphere.radius
    return t, normals


def _intersect(rays: np.ndarray, prim: Primitive) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(prim, Plane):
        return _intersect_plane(rays, prim)
    if isinstance(prim, Box):
        return _intersect_box(rays, prim)
    if isinstance(prim, Sphere):
        return _intersect_sphere(rays, prim)
    raise InvalidSceneError(f"unknown primitive {prim!r}")


def ray_cast(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Nearest hit per pixel.

    Returns ``(depth, hit_index, normals, rays)``; ``hit_index`` is -1 where
    the ray escapes. Depth is capped at ``d_max``.
    """
    spec.validate()
    rays = pixel_rays(spec.camera)
    prims: list[Primitive] = [*spec.planes, *spec.objects]
    best = np.full(rays.shape[:2], np.inf)
    index = np.full(rays.shape[:2], -1, dtype=np.int64)
    normals = np.zeros_like(rays)
    for i, prim in enumerate(prims):
        t, n = _intersect(rays, prim)
        closer = t < best
        best = np.where(closer, t, best)
        index = np.where(closer, i, index)
        normals = np.where(closer[..., None], n, normals)
    depth = np.minimum(best, spec.d_max)
    return depth, index, normals, rays


def _texture(points: np.ndarray, freq: float, phase: float) -> np.ndarray:
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    w = 2 * np.pi * freq
    return np.sin(w * x + phase) * np.sin(w * z + 0.7 * y - phase)


def render_scene(spec: SceneSpec, style: Style) -> tuple[np.ndarray, np.ndarray]:
    """Render ``spec`` as ``(rgb (3, H, W) in [0, 1], depth (1, H, W))``.

    Geometry and therefore depth are independent of ``style``; only the
    appearance changes.
    """
    if style not in ("source", "target"):
        raise ValueError(f"style must be 'source' or 'target', got {style!r}")
    depth, index, normals, rays = ray_cast(spec)
    prims: list[Primitive] = [*spec.planes, *spec.objects]
    params = spec.style

    albedo = np.broadcast_to(SKY_COLOR, rays.shape).copy()
    for i, prim in enumerate(prims):
        mask = index == i
        albedo[mask] = prim.albedo

    hit = index >= 0
    facing = np.where((np.einsum("...k,...k->...", normals, rays) > 0)[..., None], -normals, normals)
    shade = 0.35 + 0.65 * np.clip(facing @ _TO_LIGHT, 0.0, None)
    color = np.where(hit[..., None], albedo * shade[..., None], SKY_COLOR)

    rng = np.random.default_rng([spec.seed, 0x7A3])
    if style == "target":
        phase = rng.uniform(0, 2 * np.pi)
        points = rays * depth[..., None]
        tex = 1.0 + params.texture_amp * _texture(points, params.texture_freq, phase)
        color = np.where(hit[..., None], color * tex[..., None], color)

    haze = 1.0 - np.exp(-depth / params.haze_distance)
    color = color * (1 - haze[..., None]) + SKY_COLOR * haze[..., None]

    if style == "target":
        h, w = depth.shape
        shift = rng.uniform(-params.color_shift, params.color_shift, size=3)
        v, u = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
        vign = 1.0 - params.vignette * (u ** 2 + v ** 2) / 2
        color = color * vign[..., None] + shift
        color = color + rng.normal(0.0, params.noise_sigma, size=color.shape)

    rgb = np.clip(color, 0.0, 1.0).transpose(2, 0, 1)
    return np.ascontiguousarray(rgb), depth[None]


def default_camera(height: int, width: int) -> Camera:
    return Camera(focal=0.6 * width, cx=width / 2, cy=0.4 * height, height=height, width=width)


def sample_scene(seed: int, scene_id: int, height: int, width: int, d_min: float = 1.0,
                 d_max: float = 80.0, style: StyleParams | None = None) -> SceneSpec:
    """Draw a street-like scene: floor, optional back wall, a few objects."""
    rng = np.random.default_rng([seed, scene_id])
    camera = default_camera(height, width)
    cam_height = rng.uniform(1.4, 1.9)
    planes = [Plane((0.0, 1.0, 0.0), cam_height, tuple(rng.uniform(0.25, 0.55, 3)))]
    if rng.random() < 0.5:
        wall = rng.uniform(0.45 * d_max, 0.95 * d_max)
        planes.append(Plane((0.0, 0.0, 1.0), wall, tuple(rng.uniform(0.3, 0.8, 3))))

    z_hi = min(45.0, 0.55 * d_max)
    objects: list[Union[Box, Sphere]] = []
    for _ in range(rng.integers(2, 6)):
        z = rng.uniform(max(6.0, d_min + 3.0), z_hi)
        x = z * rng.uniform(-0.7, 0.7)
        albedo = tuple(rng.uniform(0.15, 0.95, 3))
        if rng.random() < 0.6:
            size = (rng.uniform(1.0, 3.0), rng.uniform(1.0, 3.5), rng.uniform(1.0, 3.0))
            objects.append(Box((x, cam_height - size[1] / 2, z), size, albedo))
        else:
            r = rng.uniform(0.5, 1.5)
            objects.append(Sphere((x, cam_height - r, z), r, albedo))
    return SceneSpec(seed=int(seed) * 1_000_003 + int(scene_id), camera=camera, planes=tuple(planes),
                     objects=tuple(objects), d_min=d_min, d_max=d_max,
                     style=style if style is not None else StyleParams())
