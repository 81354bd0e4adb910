"""Procedural part-labeled block objects and an exact analytic renderer for them.

Objects are built from boxes, spheres and capped cylinders, each carrying a part
class id.  Class 0 is reserved for background.  The world "up" axis is +y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraView, rays_for_view

TEMPLATES = {
    "chair": ["background", "leg", "seat", "back", "arm"],
    "table": ["background", "leg", "top", "shelf"],
}

# albedos are drawn per part from this shared palette, independent of the class
PALETTE = np.array([
    [0.80, 0.25, 0.20],
    [0.25, 0.55, 0.80],
    [0.30, 0.70, 0.30],
    [0.85, 0.70, 0.25],
    [0.55, 0.35, 0.70],
    [0.60, 0.45, 0.30],
    [0.35, 0.35, 0.40],
    [0.85, 0.50, 0.65],
])

LIGHT_DIR = np.array([0.35, 0.85, 0.40]) / np.linalg.norm([0.35, 0.85, 0.40])
AMBIENT = 0.35
DEPTH_MISS = np.inf


@dataclass
class Primitive:
    kind: str  # "box" | "sphere" | "cylinder"
    center: np.ndarray
    size: np.ndarray  # box: half extents; sphere: [r]; cylinder: [r, half height] along local y
    albedo: np.ndarray
    class_id: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))  # local-to-world

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.size = np.atleast_1d(np.asarray(self.size, dtype=np.float64))
        self.albedo = np.asarray(self.albedo, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        if self.kind not in ("box", "sphere", "cylinder"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if np.any(self.size <= 0):
            raise ValueError("primitive sizes must be positive")
        if self.class_id < 1:
            raise ValueError("class id 0 is reserved for background")

    def max_extent(self) -> float:
        """Largest distance from the world origin of any point on the primitive."""
        if self.kind == "sphere":
            return float(np.linalg.norm(self.center) + self.size[0])
        if self.kind == "box":
            corners = np.array(np.meshgrid(*[[-s, s] for s in self.size])).reshape(3, -1).T
        else:
            r, hh = self.size
            ang = np.linspace(0, 2 * np.pi, 721)
            ring = np.stack([r * np.cos(ang), np.zeros_like(ang), r * np.sin(ang)], axis=1)
            corners = np.concatenate([ring + [0, hh, 0], ring - [0, hh, 0]])
        world = corners @ self.rotation.T + self.center
        return float(np.linalg.norm(world, axis=1).max())


@dataclass
class PartScene:
    primitives: list[Primitive]
    seed: int
    template: str

    @property
    def class_ids(self) -> set[int]:
        return {p.class_id for p in self.primitives}

    @property
    def num_classes(self) -> int:
        return len(TEMPLATES[self.template])


def make_block_object(template: str, seed: int, arms: bool | None = None) -> PartScene:
    """Randomized chair or table made of blocks; identical for identical seeds."""
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}")
    rng = np.random.default_rng(seed)
    builder = _chair if template == "chair" else _table
    prims = builder(rng, arms)
    return PartScene(prims, seed, template)


def _colors(rng, n):
    return PALETTE[rng.choice(len(PALETTE), size=n, replace=False)]


def _chair(rng, arms):
    sx = rng.uniform(0.38, 0.48)  # seat half width
    sz = rng.uniform(0.34, 0.42)  # seat half depth
    st = rng.uniform(0.05, 0.08)  # seat half thickness
    seat_y = rng.uniform(-0.12, 0.0)
    floor = rng.uniform(-0.62, -0.55)
    top = rng.uniform(0.5, 0.62)
    leg_r = rng.uniform(0.06, 0.085)
    back_t = rng.uniform(0.05, 0.07)
    has_arms = bool(rng.random() < 0.5) if arms is None else arms
    leg_c, seat_c, back_c, arm_c = _colors(rng, 4)

    prims = []
    leg_top = seat_y - st
    leg_hh = (leg_top - floor) / 2
    for x in (-1, 1):
        for z in (-1, 1):
            prims.append(Primitive("cylinder", [x * (sx - leg_r), floor + leg_hh, z * (sz - leg_r)],
                                   [leg_r, leg_hh], leg_c, 1))
    prims.append(Primitive("box", [0.0, seat_y, 0.0], [sx, st, sz], seat_c, 2))
    back_bottom = seat_y + st
    prims.append(Primitive("box", [0.0, (back_bottom + top) / 2, -sz + back_t],
                           [sx, (top - back_bottom) / 2, back_t], back_c, 3))
    if has_arms:
        aw = rng.uniform(0.05, 0.07)
        ah = rng.uniform(0.18, 0.26)
        for x in (-1, 1):
            prims.append(Primitive("box", [x * (sx - aw), back_bottom + ah / 2, 0.0],
                                   [aw, ah / 2, sz], arm_c, 4))
    return prims


def _table(rng, shelf):
    tx = rng.uniform(0.55, 0.7)
    tz = rng.uniform(0.35, 0.5)
    tt = rng.uniform(0.04, 0.07)
    top_y = rng.uniform(0.2, 0.35)
    floor = rng.uniform(-0.55, -0.45)
    leg_r = rng.uniform(0.05, 0.08)
    has_shelf = bool(rng.random() < 0.5) if shelf is None else shelf
    leg_c, top_c, shelf_c = _colors(rng, 3)
    prims = []
    leg_hh = (top_y - tt - floor) / 2
    for x in (-1, 1):
        for z in (-1, 1):
            prims.append(Primitive("cylinder", [x * (tx - 2 * leg_r), floor + leg_hh, z * (tz - 2 * leg_r)],
                                   [leg_r, leg_hh], leg_c, 1))
    prims.append(Primitive("box", [0.0, top_y, 0.0], [tx, tt, tz], top_c, 2))
    if has_shelf:
        prims.append(Primitive("box", [0.0, floor + 0.25, 0.0], [tx - 2 * leg_r, 0.03, tz - 2 * leg_r], shelf_c, 3))
    return prims


# ---------------------------------------------------------------- intersection


def _intersect_box(o, d, half):
    # slab method; o, d in local frame, shape [N, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=1)
    t_far = tmax.min(axis=1)
    hit = (t_near <= t_far) & (t_near > 1e-9)
    t = np.where(hit, t_near, np.inf)
    axis = tmin.argmax(axis=1)
    normal = np.zeros_like(o)
    rows = np.arange(o.shape[0])
    normal[rows, axis] = -np.sign(d[rows, axis])
    return t, normal


def _intersect_sphere(o, d, r):
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    t = np.where((disc >= 0) & (t > 1e-9), t, np.inf)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    return t, p / r


def _intersect_cylinder(o, d, r, hh):
    # side surface of x^2 + z^2 = r^2 with |y| <= hh, plus the two caps
    a = d[:, 0] ** 2 + d[:, 2] ** 2
    b = o[:, 0] * d[:, 0] + o[:, 2] * d[:, 2]
    c = o[:, 0] ** 2 + o[:, 2] ** 2 - r * r
    disc = b * b - a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t_side = (-b - np.sqrt(disc)) / a
    y_side = o[:, 1] + t_side * d[:, 1]
    side_ok = (disc >= 0) & (a > 1e-15) & (t_side > 1e-9) & (np.abs(y_side) <= hh)
    t_side = np.where(side_ok, t_side, np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        cap_y = np.where(o[:, 1] > 0, hh, -hh)
        t_cap = (cap_y - o[:, 1]) / d[:, 1]
        px = o[:, 0] + t_cap * d[:, 0]
        pz = o[:, 2] + t_cap * d[:, 2]
    with np.errstate(invalid="ignore"):
        cap_ok = np.isfinite(t_cap) & (t_cap > 1e-9) & (px * px + pz * pz <= r * r)
    t_cap = np.where(cap_ok, t_cap, np.inf)

    use_cap = t_cap < t_side
    t = np.where(use_cap, t_cap, t_side)
    p = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    n_side = np.stack([p[:, 0], np.zeros_like(t), p[:, 2]], axis=1) / r
    n_cap = np.zeros_like(p)
    n_cap[:, 1] = np.sign(cap_y)
    normal = np.where(use_cap[:, None], n_cap, n_side)
    return t, normal


def intersect(prim: Primitive, origins: np.ndarray, dirs: np.ndarray):
    """Hit distance (``inf`` on miss) and world-space outward normal for flat ray arrays."""
    R = prim.rotation
    o = (origins - prim.center) @ R
    d = dirs @ R
    if prim.kind == "box":
        t, n = _intersect_box(o, d, prim.size)
    elif prim.kind == "sphere":
        t, n = _intersect_sphere(o, d, prim.size[0])
    else:
        t, n = _intersect_cylinder(o, d, prim.size[0], prim.size[1])
    return t, n @ R.T


def trace(scene: PartScene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit over all primitives: ``(rgb, class id, depth)`` per ray."""
    n = origins.shape[0]
    depth = np.full(n, DEPTH_MISS)
    label = np.zeros(n, dtype=np.uint8)
    rgb = np.ones((n, 3))
    for prim in scene.primitives:
        t, normal = intersect(prim, origins, dirs)
        closer = t < depth
        if not closer.any():
            continue
        depth[closer] = t[closer]
        label[closer] = prim.class_id
        shade = AMBIENT + (1.0 - AMBIENT) * np.clip(normal[closer] @ LIGHT_DIR, 0.0, None)
        rgb[closer] = prim.albedo[None, :] * shade[:, None]
    return rgb, label, depth


def reference_render(scene: PartScene, view: CameraView):
    """Exact per-pixel ``(rgb [H,W,3], mask [H,W] uint8, depth [H,W])``; misses are white, 0, ``inf``."""
    origins, dirs = rays_for_view(view)
    rgb, label, depth = trace(scene, origins.reshape(-1, 3), dirs.reshape(-1, 3))
    h, w = view.height, view.width
    return rgb.reshape(h, w, 3), label.reshape(h, w), depth.reshape(h, w)
