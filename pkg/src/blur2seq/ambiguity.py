"""Brute-force checks of the temporal-ordering ambiguity of blur averaging.

With n independently moving objects, flipping any subset of their motion
directions yields a different frame sequence with the same time average:
2^n sequences explain one blurry image. The middle frame of an odd-length
sequence and the per-pair sum/absolute-difference targets are invariant
too. This module enumerates the direction combinations and measures the
deviations directly on rendered images.

Exactness only holds when sprites never overlap during the exposure
(occlusion breaks per-object additivity), so reports carry an overlap
flag and assertions are skipped for overlapping scenes.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .scenes import render_sequence, sample_times, synthesize_blur


class AmbiguityViolation(AssertionError):
    """An invariance that must hold for non-overlapping scenes did not."""


@dataclass
class AmbiguityReport:
    n: int
    combo_count: int
    overlap: bool
    frames: int
    supersample: int
    tol: float
    max_dev_blur: float
    max_dev_middle: float
    max_dev_pair_sum: list[float]
    max_dev_pair_absdiff: list[float]

    def to_json(self):
        return asdict(self)

    def passed(self):
        devs = [self.max_dev_blur, self.max_dev_middle, *self.max_dev_pair_sum, *self.max_dev_pair_absdiff]
        return all(d <= self.tol for d in devs)


def enumerate_combos(scene):
    """All 2^n direction-flip variants of the scene; index 0 is the original."""
    if scene.n > 8:
        raise ValueError(f"combinatorial guard: at most 8 objects, got {scene.n}")
    combos = []
    for mask in range(2 ** scene.n):
        flags = [(mask >> k) & 1 == 1 for k in range(scene.n)]
        combos.append(scene.with_directions(flags))
    return combos


def pair_targets(frames, i):
    """Order-invariant targets for the symmetric pair (i, T+1-i), 1-based.

    Returns (sum image in [0, 2], absolute difference image). Both are
    bitwise unchanged if the two frames are swapped.
    """
    t = len(frames)
    if not 1 <= i < (t + 1) / 2:
        raise ValueError(f"pair index must satisfy 1 <= i < (T+1)/2 = {(t + 1) / 2}, got {i}")
    a = frames[i - 1]
    b = frames[t - i]
    return a + b, np.abs(a - b)


def _max_dev(images):
    """Largest pairwise pixel deviation across a list of same-shaped images."""
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    return float((stack.max(axis=0) - stack.min(axis=0)).max())


def verify_average_identity(scene, frames=7, supersample=8, gamma=1.0, tol=1e-6):
    """Render every direction combo and measure how visible the flips are.

    For a non-overlapping scene all deviations (blurry average, middle
    frame when T is odd, pair sum and absolute-difference targets) must
    stay within ``tol``; a violation raises AmbiguityViolation. Overlapping
    scenes get a report without assertions.
    """
    combos = enumerate_combos(scene)
    overlap = scene.has_overlap(sample_times(frames, supersample).ravel())
    sequences = [render_sequence(c, frames, supersample) for c in combos]
    blurs = [synthesize_blur(seq, gamma) for seq in sequences]

    n_pairs = (frames - 1) // 2 if frames % 2 else frames // 2
    dev_blur = _max_dev(blurs)
    if frames % 2:
        dev_middle = _max_dev([seq[frames // 2] for seq in sequences])
    else:
        dev_middle = float("nan")
    dev_sum, dev_absdiff = [], []
    for i in range(1, n_pairs + 1):
        targets = [pair_targets(seq, i) for seq in sequences]
        dev_sum.append(_max_dev([t[0] for t in targets]))
        dev_absdiff.append(_max_dev([t[1] for t in targets]))

    report = AmbiguityReport(
        n=scene.n, combo_count=len(combos), overlap=overlap,
        frames=frames, supersample=supersample, tol=tol,
        max_dev_blur=dev_blur, max_dev_middle=dev_middle,
        max_dev_pair_sum=dev_sum, max_dev_pair_absdiff=dev_absdiff,
    )
    if not overlap and not report.passed():
        raise AmbiguityViolation(
            f"direction-combo invariance violated on a non-overlapping scene: {report.to_json()}")
    return report


def verify_middle_invariance(scene, frames=7, supersample=8):
    """Max deviation of the middle frame across all direction combos.

    Only odd frame counts have a fixed middle index.
    """
    if frames % 2 == 0:
        raise ValueError(f"frames must be odd: an even count {frames} has no fixed middle index")
    combos = enumerate_combos(scene)
    middles = [render_sequence(c, frames, supersample)[frames // 2] for c in combos]
    return _max_dev(middles)
