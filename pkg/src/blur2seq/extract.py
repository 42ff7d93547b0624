"""End-to-end frame extraction from a blurry image file.

Loads the blurry PNG, pads it with reflection if its size is not a
multiple of the largest resampling factor, runs the seven networks in
dependency order, crops back, and writes frame_1.png .. frame_7.png
(optionally an animated GIF). An override image can stand in for the
middle prediction, replacing it in every conditioning input, which is
how the effect of a perfect middle estimate is examined.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import load_png, save_png
from .networks import load_checkpoints, predict_sequence


def _pad_to_multiple(img, mult):
    h, w = img.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return img, (0, 0)
    if ph >= h or pw >= w:
        raise ValueError(f"image {h}x{w} too small to pad to a multiple of {mult}")
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return padded, (ph, pw)


def extract(blurry_path, ckpt_dir, out_dir, middle_override=None, gif=False):
    """Write the seven extracted frames; returns the list of output paths."""
    try:
        blurry = load_png(blurry_path)
    except (OSError, SyntaxError) as e:
        raise OSError(f"cannot read input image {blurry_path}: {e}") from e
    params = load_checkpoints(ckpt_dir)
    mult = max(p.spec.resample for p in params.values())
    padded, (ph, pw) = _pad_to_multiple(blurry, mult)

    override = None
    if middle_override is not None:
        try:
            override = load_png(middle_override)
        except (OSError, SyntaxError) as e:
            raise OSError(f"cannot read middle override image {middle_override}: {e}") from e
        if override.shape != blurry.shape:
            raise ValueError(
                f"middle override shape {override.shape} does not match input {blurry.shape}")
        override, _ = _pad_to_multiple(override, mult)

    frames = predict_sequence(params, padded, middle_override=override)
    h, w = blurry.shape[:2]
    frames = [f[:h, :w] for f in frames]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames, start=1):
        p = out / f"frame_{i}.png"
        save_png(p, f)
        paths.append(str(p))
    if gif:
        imgs = [Image.fromarray(np.round(np.clip(f, 0, 1) * 255).astype(np.uint8)) for f in frames]
        gif_path = out / "sequence.gif"
        imgs[0].save(gif_path, save_all=True, append_images=imgs[1:], duration=120, loop=0)
        paths.append(str(gif_path))
    return paths
