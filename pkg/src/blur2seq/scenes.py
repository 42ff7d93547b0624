"""Sprite scenes, instant-frame rendering, and blur synthesis by temporal averaging.

A blurry image is modeled as the camera response applied to the time
average of instant frames over the exposure. Scenes here are a canvas
background plus a handful of sprites, each following a continuous path
p(t) for t in [0, 1]; a sprite's direction flag flips the path to
p(1 - t). Rendering composites sprites with alpha-over in list order,
sampling textures bilinearly at sub-pixel positions.

All path and accumulation math runs in float64; returned images are
float32 in [0, 1]. Frame averaging sums middle-out in symmetric pairs so
that reversing a frame sequence leaves the synthesized blur bitwise
unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class LinearPath:
    """Straight-line translation from start to end, (x, y) pixel coordinates."""
    start: tuple[float, float]
    end: tuple[float, float]
    kind: str = "linear"

    def position(self, t):
        x = self.start[0] + t * (self.end[0] - self.start[0])
        y = self.start[1] + t * (self.end[1] - self.start[1])
        return x, y

    def angle(self, t):
        return 0.0


@dataclass(frozen=True)
class ArcPath:
    """Circular arc about a fixed center, angles in radians."""
    center: tuple[float, float]
    radius: float
    theta0: float
    theta1: float
    kind: str = "arc"

    def position(self, t):
        th = self.theta0 + t * (self.theta1 - self.theta0)
        return self.center[0] + self.radius * math.cos(th), self.center[1] + self.radius * math.sin(th)

    def angle(self, t):
        return 0.0


@dataclass(frozen=True)
class SpinPath:
    """In-place rotation of the sprite about its own center."""
    pos: tuple[float, float]
    angle0: float
    angle1: float
    kind: str = "spin"

    def position(self, t):
        return self.pos

    def angle(self, t):
        return self.angle0 + t * (self.angle1 - self.angle0)


_PATH_KINDS = {"linear": LinearPath, "arc": ArcPath, "spin": SpinPath}


def path_from_json(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind not in _PATH_KINDS:
        raise ValueError(f"unknown path kind {kind!r}")
    for key in ("start", "end", "center", "pos"):
        if key in d:
            d[key] = tuple(float(v) for v in d[key])
    return _PATH_KINDS[kind](**d)


def path_to_json(p):
    out = {"kind": p.kind}
    for key, val in vars(p).items():
        if key == "kind":
            continue
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


def path_displacement(p, samples=64):
    """Max displacement of the path over [0, 1], in pixels."""
    ts = np.linspace(0.0, 1.0, samples)
    pts = np.array([p.position(t) for t in ts])
    x0, y0 = p.position(0.0)
    return float(np.max(np.hypot(pts[:, 0] - x0, pts[:, 1] - y0)))


# ---------------------------------------------------------------------------
# sprite textures

def make_texture(recipe):
    """Render a small RGBA texture (float32, [h, w, 4]) from a recipe dict.

    Kinds: disc (radius, color, feather, optional shade), square (size,
    color), ring (radius, thickness, color), array (verbatim data).
    """
    kind = recipe["kind"]
    if kind == "array":
        arr = np.asarray(recipe["data"], dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ValueError("array texture must be [h, w, 4] RGBA")
        return arr
    color = np.asarray(recipe["color"], dtype=np.float32)
    if kind == "disc":
        r = float(recipe["radius"])
        feather = float(recipe.get("feather", 1.0))
        shade = float(recipe.get("shade", 0.0))
        n = int(math.ceil(2 * r + 2 * feather + 1))
        c = (n - 1) / 2.0
        yy, xx = np.mgrid[0:n, 0:n]
        dist = np.hypot(yy - c, xx - c)
        alpha = np.clip((r - dist) / max(feather, 1e-6) + 0.5, 0.0, 1.0)
        tex = np.empty((n, n, 4), dtype=np.float32)
        rgb = np.broadcast_to(color, (n, n, 3)).copy()
        if shade:
            # radial brightness falloff gives the flat disc some texture
            rgb *= (1.0 - shade * np.clip(dist / max(r, 1e-6), 0.0, 1.0))[..., None]
        tex[..., :3] = rgb
        tex[..., 3] = alpha
        return tex
    if kind == "square":
        size = int(recipe["size"])
        tex = np.empty((size, size, 4), dtype=np.float32)
        tex[..., :3] = color
        tex[..., 3] = 1.0
        return tex
    if kind == "ring":
        r = float(recipe["radius"])
        th = float(recipe.get("thickness", 2.0))
        feather = float(recipe.get("feather", 1.0))
        n = int(math.ceil(2 * r + th + 2 * feather + 1))
        c = (n - 1) / 2.0
        yy, xx = np.mgrid[0:n, 0:n]
        dist = np.hypot(yy - c, xx - c)
        band = th / 2.0 - np.abs(dist - r)
        alpha = np.clip(band / max(feather, 1e-6) + 0.5, 0.0, 1.0)
        tex = np.empty((n, n, 4), dtype=np.float32)
        tex[..., :3] = color
        tex[..., 3] = alpha
        return tex
    raise ValueError(f"unknown texture kind {kind!r}")


@dataclass
class SpriteMotion:
    """A textured sprite moving along a path; reversed means p(1 - t)."""
    texture: np.ndarray                  # [h, w, 4] RGBA float32
    path: object                         # LinearPath | ArcPath | SpinPath
    reversed: bool = False
    recipe: dict | None = None           # texture recipe, kept for serialization

    def placement(self, t):
        te = 1.0 - t if self.reversed else t
        x, y = self.path.position(te)
        return x, y, self.path.angle(te)

    def to_json(self):
        d = {"path": path_to_json(self.path),
             "direction": "reversed" if self.reversed else "forward"}
        if self.recipe is not None:
            d["texture"] = self.recipe
        else:
            d["texture"] = {"kind": "array", "data": self.texture.tolist()}
        return d

    @classmethod
    def from_json(cls, d):
        recipe = d["texture"]
        return cls(texture=make_texture(recipe),
                   path=path_from_json(d["path"]),
                   reversed=d.get("direction", "forward") == "reversed",
                   recipe=None if recipe.get("kind") == "array" else recipe)


# ---------------------------------------------------------------------------
# backgrounds

def make_background(recipe, height, width):
    kind = recipe["kind"]
    if kind == "flat":
        bg = np.empty((height, width, 3), dtype=np.float32)
        bg[:] = np.asarray(recipe["color"], dtype=np.float32)
        return bg
    if kind == "noise":
        # low-res seeded noise upsampled bilinearly: smooth but textured
        rng = np.random.default_rng(int(recipe.get("seed", 0)))
        cells = int(recipe.get("cells", 8))
        lo = float(recipe.get("lo", 0.1))
        hi = float(recipe.get("hi", 0.9))
        coarse = rng.uniform(lo, hi, size=(cells, cells, 3))
        yy = np.linspace(0, cells - 1, height)
        xx = np.linspace(0, cells - 1, width)
        y0 = np.clip(np.floor(yy).astype(int), 0, cells - 2)
        x0 = np.clip(np.floor(xx).astype(int), 0, cells - 2)
        fy = (yy - y0)[:, None, None]
        fx = (xx - x0)[None, :, None]
        a = coarse[y0][:, x0]
        b = coarse[y0][:, x0 + 1]
        c = coarse[y0 + 1][:, x0]
        d = coarse[y0 + 1][:, x0 + 1]
        bg = (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx)
        return bg.astype(np.float32)
    if kind == "array":
        bg = np.asarray(recipe["data"], dtype=np.float32)
        if bg.shape != (height, width, 3):
            raise ValueError(f"array background shape {bg.shape} does not match canvas ({height}, {width}, 3)")
        return bg
    raise ValueError(f"unknown background kind {kind!r}")


# ---------------------------------------------------------------------------
# scene

@dataclass
class SceneSpec:
    """Canvas background plus up to 8 moving sprites."""
    height: int
    width: int
    background: np.ndarray               # [H, W, 3] float32
    objects: list[SpriteMotion] = field(default_factory=list)
    background_recipe: dict | None = None

    def __post_init__(self):
        if not 0 <= len(self.objects) <= 8:
            raise ValueError(f"scene supports 0..8 objects, got {len(self.objects)}")

    @property
    def n(self):
        return len(self.objects)

    def with_directions(self, flags):
        """Copy of the scene with each object's direction flag XORed by ``flags``."""
        if len(flags) != self.n:
            raise ValueError(f"need {self.n} flags, got {len(flags)}")
        objs = [replace(o, reversed=o.reversed ^ bool(f)) for o, f in zip(self.objects, flags)]
        return SceneSpec(self.height, self.width, self.background, objs, self.background_recipe)

    def to_json(self):
        if self.background_recipe is not None:
            bg = self.background_recipe
        else:
            bg = {"kind": "array", "data": self.background.tolist()}
        return {"canvas": [self.height, self.width],
                "background": bg,
                "objects": [o.to_json() for o in self.objects]}

    @classmethod
    def from_json(cls, d):
        h, w = int(d["canvas"][0]), int(d["canvas"][1])
        bg_recipe = d["background"]
        return cls(height=h, width=w,
                   background=make_background(bg_recipe, h, w),
                   objects=[SpriteMotion.from_json(o) for o in d.get("objects", [])],
                   background_recipe=None if bg_recipe.get("kind") == "array" else bg_recipe)

    def swept_alpha(self, times):
        """Per-object union of alpha supports over the given sample times."""
        masks = []
        for k in range(self.n):
            acc = np.zeros((self.height, self.width), dtype=bool)
            for t in times:
                a = _sprite_alpha(self.objects[k], t, self.height, self.width)
                acc |= a > 0.0
            masks.append(acc)
        return masks

    def has_overlap(self, times):
        """True when any two sprites' swept areas intersect at the sampled times."""
        masks = self.swept_alpha(times)
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                if np.any(masks[i] & masks[j]):
                    return True
        return False


# ---------------------------------------------------------------------------
# rendering

def _sprite_patch(sprite, t, height, width):
    """Bilinear RGBA resampling of the sprite at time t; returns (rgb, alpha, y0, x0)."""
    tex = sprite.texture
    th, tw = tex.shape[:2]
    cx, cy, ang = sprite.placement(t)
    radius = 0.5 * math.hypot(th, tw)
    y0 = max(int(math.floor(cy - radius - 1)), 0)
    y1 = min(int(math.ceil(cy + radius + 2)), height)
    x0 = max(int(math.floor(cx - radius - 1)), 0)
    x1 = min(int(math.ceil(cx + radius + 2)), width)
    if y0 >= y1 or x0 >= x1:
        return None
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = yy - cy
    dx = xx - cx
    if ang:
        ca, sa = math.cos(ang), math.sin(ang)
        u = dx * ca + dy * sa + (tw - 1) / 2.0
        v = -dx * sa + dy * ca + (th - 1) / 2.0
    else:
        u = dx + (tw - 1) / 2.0
        v = dy + (th - 1) / 2.0
    patch = _bilinear_rgba(tex, v, u)
    return patch[..., :3], patch[..., 3], y0, x0


def _bilinear_rgba(tex, v, u):
    """Sample an RGBA texture at float coords (v rows, u cols); outside is transparent."""
    th, tw = tex.shape[:2]
    v0 = np.floor(v).astype(np.int64)
    u0 = np.floor(u).astype(np.int64)
    fv = v - v0
    fu = u - u0
    out = np.zeros(v.shape + (4,), dtype=np.float64)
    for dv, du, wgt in ((0, 0, (1 - fv) * (1 - fu)), (0, 1, (1 - fv) * fu),
                        (1, 0, fv * (1 - fu)), (1, 1, fv * fu)):
        vi = v0 + dv
        ui = u0 + du
        ok = (vi >= 0) & (vi < th) & (ui >= 0) & (ui < tw)
        vi_c = np.clip(vi, 0, th - 1)
        ui_c = np.clip(ui, 0, tw - 1)
        out += (wgt * ok)[..., None] * tex[vi_c, ui_c]
    return out


def _sprite_alpha(sprite, t, height, width):
    patch = _sprite_patch(sprite, t, height, width)
    alpha = np.zeros((height, width), dtype=np.float64)
    if patch is not None:
        _, a, y0, x0 = patch
        alpha[y0:y0 + a.shape[0], x0:x0 + a.shape[1]] = a
    return alpha


def _render_instant(scene, t):
    """Float64 composite of the scene at time t (alpha-over, list order)."""
    img = scene.background.astype(np.float64, copy=True)
    for sprite in scene.objects:
        patch = _sprite_patch(sprite, t, scene.height, scene.width)
        if patch is None:
            continue
        rgb, alpha, y0, x0 = patch
        h, w = alpha.shape
        region = img[y0:y0 + h, x0:x0 + w]
        region *= (1.0 - alpha)[..., None]
        region += alpha[..., None] * rgb
    return img


def render_frame(scene, t):
    """Instant image at time t in [0, 1], float32 in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return np.clip(_render_instant(scene, t), 0.0, 1.0).astype(np.float32)


def sample_times(frames, supersample):
    """The midpoint sample times for each frame segment, [frames, supersample]."""
    i = np.arange(frames, dtype=np.float64)[:, None]
    j = np.arange(supersample, dtype=np.float64)[None, :]
    return (i + (j + 0.5) / supersample) / frames


def render_sequence(scene, frames=7, supersample=8):
    """Render the exposure as ``frames`` images, each the average of
    ``supersample`` instants over its time segment."""
    if frames < 1 or supersample < 1:
        raise ValueError("frames and supersample must be positive")
    times = sample_times(frames, supersample)
    seq = []
    for i in range(frames):
        acc = np.zeros((scene.height, scene.width, 3), dtype=np.float64)
        for j in range(supersample):
            acc += _render_instant(scene, times[i, j])
        seq.append(np.clip(acc / supersample, 0.0, 1.0).astype(np.float32))
    return seq


def synthesize_blur(frames, gamma=1.0):
    """Average a frame sequence and apply the gamma response.

    The sum is taken middle-out over symmetric pairs so reversing the
    sequence gives a bitwise-identical result.
    """
    if not frames:
        raise ValueError("frame sequence is empty")
    t = len(frames)
    acc = np.zeros(frames[0].shape, dtype=np.float64)
    if t % 2:
        acc += frames[t // 2]
    for i in range(t // 2):
        acc += frames[i].astype(np.float64) + frames[t - 1 - i].astype(np.float64)
    y = np.clip(acc / t, 0.0, 1.0)
    if gamma != 1.0:
        y = np.power(y, 1.0 / gamma)
    return y.astype(np.float32)


# ---------------------------------------------------------------------------
# ready-made scenes

def two_ball_scene(size=64, delta=12.0, red_y=None, green_y=None, radius=5.0):
    """Two balls crossing horizontally in opposite lanes, the classic
    ambiguity demonstration scene. Non-overlapping by construction."""
    red_y = size * 0.3 if red_y is None else red_y
    green_y = size * 0.7 if green_y is None else green_y
    margin = radius + 3.0
    bg = {"kind": "flat", "color": [0.95, 0.95, 0.92]}
    red = SpriteMotion(
        texture=make_texture({"kind": "disc", "radius": radius, "color": [0.85, 0.1, 0.1], "shade": 0.3}),
        path=LinearPath(start=(margin, red_y), end=(margin + delta, red_y)),
        recipe={"kind": "disc", "radius": radius, "color": [0.85, 0.1, 0.1], "shade": 0.3},
    )
    green = SpriteMotion(
        texture=make_texture({"kind": "disc", "radius": radius, "color": [0.1, 0.7, 0.15], "shade": 0.3}),
        path=LinearPath(start=(size - margin, green_y), end=(size - margin - delta, green_y)),
        recipe={"kind": "disc", "radius": radius, "color": [0.1, 0.7, 0.15], "shade": 0.3},
    )
    return SceneSpec(size, size, make_background(bg, size, size), [red, green], bg)
