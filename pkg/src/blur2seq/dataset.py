"""Synthetic dataset generation: random sprite scenes rendered to disk.

Each sample is one blurry PNG, the T sharp frame PNGs it was averaged
from, and a JSON scene descriptor. A manifest lists every sample with
its derived seed so the whole dataset regenerates bitwise-identically
from (config, master seed). Per-sample seeds come from the master seed
and the sample index, so generation order does not matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .scenes import (
    ArcPath,
    LinearPath,
    SceneSpec,
    SpinPath,
    SpriteMotion,
    make_background,
    make_texture,
    render_sequence,
    synthesize_blur,
)


# ---------------------------------------------------------------------------
# PNG I/O: 8-bit RGB, v -> round(clamp01(v) * 255)

def save_png(path, image):
    arr = np.asarray(image, dtype=np.float64)
    q = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


# ---------------------------------------------------------------------------
# configuration

@dataclass
class DatasetConfig:
    """Knobs for synthetic data generation.

    ``frames`` (T) and ``max_shift`` (the largest sprite displacement, in
    pixels) default to each other: negligible blur means a one-pixel
    shift per frame, so T = max_shift unless both are given.
    """
    frames: int = 7
    max_shift: float | None = None
    supersample: int = 8
    gamma: float = 1.0
    size: int = 64
    count: int = 10
    min_objects: int = 1
    max_objects: int = 3
    channel_shuffle: bool = False
    rotate: bool = False
    noise_sigma: float = 0.0     # typical value when enabled: 0.01
    include_combos: bool = False  # emit all 2^n direction combos per scene
    seed: int = 0

    def __post_init__(self):
        if self.max_shift is None:
            self.max_shift = float(self.frames)
        if self.frames < 1:
            raise ValueError("frames must be positive")
        if self.supersample < 1:
            raise ValueError("supersample must be positive")
        if not 0 <= self.min_objects <= self.max_objects <= 8:
            raise ValueError("object counts must satisfy 0 <= min <= max <= 8")

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return asdict(self)


def sample_rng(master_seed, index):
    """Independent generator for one sample, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


# ---------------------------------------------------------------------------
# random scenes

def random_scene(rng, cfg):
    """Draw a scene: textured background plus 1..n sprites on random paths."""
    size = cfg.size
    bg_recipe = {"kind": "noise", "seed": int(rng.integers(2**31)), "cells": int(rng.integers(4, 10)),
                 "lo": 0.1, "hi": 0.9}
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects = []
    for _ in range(n):
        radius = float(rng.uniform(3.5, 7.5))
        color = rng.uniform(0.05, 1.0, size=3).tolist()
        recipe = {"kind": "disc", "radius": radius, "color": color,
                  "feather": float(rng.uniform(0.8, 1.6)), "shade": float(rng.uniform(0.2, 0.6))}
        margin = radius + 2.0
        x0 = float(rng.uniform(margin, size - margin))
        y0 = float(rng.uniform(margin, size - margin))
        kind = rng.choice(["linear", "linear", "linear", "arc", "spin"])
        if kind == "linear":
            dist = float(rng.uniform(0.5 * cfg.max_shift, cfg.max_shift))
            ang = float(rng.uniform(0, 2 * math.pi))
            x1 = float(np.clip(x0 + dist * math.cos(ang), margin, size - margin))
            y1 = float(np.clip(y0 + dist * math.sin(ang), margin, size - margin))
            path = LinearPath(start=(x0, y0), end=(x1, y1))
        elif kind == "arc":
            arc_r = float(rng.uniform(4.0, 10.0))
            th0 = float(rng.uniform(0, 2 * math.pi))
            # arc length capped at max_shift
            span = min(cfg.max_shift / arc_r, math.pi)
            th1 = th0 + float(rng.choice([-1.0, 1.0])) * span
            cx = float(np.clip(x0, margin + arc_r, size - margin - arc_r))
            cy = float(np.clip(y0, margin + arc_r, size - margin - arc_r))
            path = ArcPath(center=(cx, cy), radius=arc_r, theta0=th0, theta1=th1)
        else:
            spin = float(rng.uniform(0.4, 1.2)) * float(rng.choice([-1.0, 1.0]))
            path = SpinPath(pos=(x0, y0), angle0=0.0, angle1=spin)
        objects.append(SpriteMotion(texture=make_texture(recipe), path=path, recipe=recipe))
    return SceneSpec(size, size, make_background(bg_recipe, size, size), objects, bg_recipe)


# ---------------------------------------------------------------------------
# augmentation

_CHANNEL_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def augment(sample, rng, channel_shuffle=True, rotate=True, noise_sigma=0.01):
    """Randomly permute channels and rotate (blurry and sharp frames alike),
    then add Gaussian noise to the blurry image only, and clamp.

    ``sample`` is (blurry, frames). Draws happen only for enabled parts,
    in a fixed order: permutation, rotation, noise.
    """
    blurry, frames = sample
    if channel_shuffle:
        perm = _CHANNEL_PERMS[int(rng.integers(6))]
        blurry = blurry[..., perm]
        frames = [f[..., perm] for f in frames]
    if rotate:
        k = int(rng.integers(4))
        if k:
            blurry = np.rot90(blurry, k).copy()
            frames = [np.rot90(f, k).copy() for f in frames]
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma, size=blurry.shape).astype(blurry.dtype)
        blurry = np.clip(blurry + noise, 0.0, 1.0)
    return blurry, frames


# ---------------------------------------------------------------------------
# generation

def _direction_combos(n):
    return [[(mask >> k) & 1 == 1 for k in range(n)] for mask in range(2 ** n)]


def generate_dataset(cfg, out_dir):
    """Render ``cfg.count`` scenes to PNG files plus a manifest.json.

    Returns the manifest dict. With ``include_combos`` every scene expands
    into all 2^n direction combinations sharing the same blurry input.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e

    samples = []
    sample_id = 0
    for scene_idx in range(cfg.count):
        rng = sample_rng(cfg.seed, scene_idx)
        scene = random_scene(rng, cfg)
        combos = _direction_combos(scene.n) if cfg.include_combos else [[False] * scene.n]
        for combo in combos:
            variant = scene.with_directions(combo)
            frames = render_sequence(variant, cfg.frames, cfg.supersample)
            blurry = synthesize_blur(frames, cfg.gamma)
            blurry, frames = augment(
                (blurry, frames), rng,
                channel_shuffle=cfg.channel_shuffle,
                rotate=cfg.rotate,
                noise_sigma=cfg.noise_sigma,
            )
            sdir = out / f"sample_{sample_id:05d}"
            try:
                sdir.mkdir(exist_ok=True)
                blurry_path = sdir / "blurry.png"
                save_png(blurry_path, blurry)
                sharp_paths = []
                for i, f in enumerate(frames, start=1):
                    p = sdir / f"sharp_{i}.png"
                    save_png(p, f)
                    sharp_paths.append(str(p.relative_to(out)))
                scene_path = sdir / "scene.json"
                scene_path.write_text(json.dumps(variant.to_json()))
            except OSError as e:
                raise OSError(f"failed writing sample files under {sdir}: {e}") from e
            samples.append({
                "id": sample_id,
                "blurry_path": str(blurry_path.relative_to(out)),
                "sharp_paths": sharp_paths,
                "scene": str(scene_path.relative_to(out)),
                "seed": [cfg.seed, scene_idx],
            })
            sample_id += 1

    manifest = {"config": cfg.to_json(), "seed": cfg.seed, "samples": samples}
    try:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    except OSError as e:
        raise OSError(f"failed writing manifest under {out}: {e}") from e
    return manifest


def load_manifest(data_dir):
    path = Path(data_dir) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise OSError(f"cannot read manifest {path}: {e}") from e


def load_sample(data_dir, entry):
    """Load one manifest entry as (blurry, [frames...]) float32 arrays."""
    root = Path(data_dir)
    blurry = load_png(root / entry["blurry_path"])
    frames = [load_png(root / p) for p in entry["sharp_paths"]]
    return blurry, frames
