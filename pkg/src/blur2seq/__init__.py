"""blur2seq: recover a short sequence of sharp frames from one motion-blurred image.

The package is organized around the steps of that task:

- ``tensor``: small reverse-mode autodiff engine on numpy arrays
- ``scenes``: sprite scenes, instant rendering, temporal averaging into blur
- ``dataset``: synthetic dataset generation, PNG + manifest I/O, augmentation
- ``ambiguity``: brute-force checks of the ordering ambiguities of averaging
- ``losses``: middle-frame, order-invariant, and adversarial objectives
- ``networks``: the frame-prediction networks and checkpoint format
- ``trainer``: staged training, teacher forcing, ablation baselines
- ``metrics``: PSNR variants that respect the ordering ambiguity
- ``extract``: end-to-end frame extraction from a blurry image file
- ``cli``: command-line entry points (``blur2seq --help``)
"""

from . import tensor
from .scenes import (
    SceneSpec,
    SpriteMotion,
    render_frame,
    render_sequence,
    synthesize_blur,
    two_ball_scene,
)
from .dataset import DatasetConfig, generate_dataset, load_manifest

__all__ = [
    "tensor",
    "SceneSpec",
    "SpriteMotion",
    "render_frame",
    "render_sequence",
    "synthesize_blur",
    "two_ball_scene",
    "DatasetConfig",
    "generate_dataset",
    "load_manifest",
]

__version__ = "0.1.0"
