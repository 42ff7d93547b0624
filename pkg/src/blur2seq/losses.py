"""Training objectives for the frame-prediction networks.

The middle frame is the only one the blurry input determines uniquely,
so it gets a plain MSE plus a perceptual term. Every other frame is
supervised through order-invariant quantities: either the sum of all
non-middle frames (globally invariant, weak) or, per symmetric pair, the
sum and absolute difference of the two frames (pairwise invariant, the
workhorse). Adversarial terms sharpen outputs; they use the
non-saturating formulation with a small patch discriminator.

The perceptual features come from a fixed, seeded random conv stack
rather than a pretrained classifier: random projections still penalize
structural error and keep the build self-contained.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, Tensor


class FeatureExtractor:
    """Frozen two-layer conv stack (3 -> 16 -> 32, stride 2, relu).

    Weights are drawn once from a seeded scale-preserving normal
    initialization and never trained; gradients still flow through the
    stack to its input.
    """

    def __init__(self, seed=7):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.specs = [ConvSpec(3, 16, 3, stride=2), ConvSpec(16, 32, 3, stride=2)]
        self.weights = []
        self.biases = []
        for spec in self.specs:
            fan_in = spec.kernel * spec.kernel * spec.in_channels
            w = rng.standard_normal(spec.weight_shape()) / np.sqrt(fan_in)
            self.weights.append(Tensor(w, requires_grad=False))
            self.biases.append(Tensor(np.zeros(spec.out_channels), requires_grad=False))

    def features(self, x):
        """Both relu tap points for an image (or batch of images)."""
        taps = []
        h = x if isinstance(x, Tensor) else Tensor(x)
        for spec, w, b in zip(self.specs, self.weights, self.biases):
            h = T.relu(T.conv2d(h, spec, w, b))
            taps.append(h)
        return taps


class Discriminator:
    """Trainable patch critic: 3 convs (3 -> 16 -> 32 -> 1, stride 2,
    leaky relu 0.2) and a spatial mean, one scalar logit per image."""

    def __init__(self, seed=11):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.specs = [ConvSpec(3, 16, 3, stride=2), ConvSpec(16, 32, 3, stride=2), ConvSpec(32, 1, 3, stride=2)]
        self.params = []
        self.weights = []
        self.biases = []
        for spec in self.specs:
            fan_in = spec.kernel * spec.kernel * spec.in_channels
            w = rng.standard_normal(spec.weight_shape()) * np.sqrt(2.0 / fan_in)
            wt = Tensor(w, requires_grad=True)
            bt = Tensor(np.zeros(spec.out_channels), requires_grad=True)
            self.weights.append(wt)
            self.biases.append(bt)
            self.params.extend([wt, bt])

    def logits(self, x):
        h = x if isinstance(x, Tensor) else Tensor(x)
        for k, (spec, w, b) in enumerate(zip(self.specs, self.weights, self.biases)):
            h = T.conv2d(h, spec, w, b)
            if k < len(self.specs) - 1:
                h = T.leaky_relu(h, 0.2)
        if h.values.ndim == 4:
            return T.reduce_mean_axes(h, (1, 2, 3))   # one logit per sample
        return T.reduce_mean(h)


def middle_loss(pred, target, fx, lambda_p=0.1):
    """MSE to the middle frame plus a weighted perceptual feature MSE."""
    if lambda_p < 0:
        raise ValueError(f"lambda_p must be >= 0, got {lambda_p}")
    target_t = target if isinstance(target, Tensor) else Tensor(target)
    loss = T.reduce_loss("l2_mean", pred, target_t)
    if lambda_p > 0:
        pred_taps = fx.features(pred)
        with T.no_grad():
            target_taps = fx.features(target_t)
        for pt, tt in zip(pred_taps, target_taps):
            loss = T.add(loss, T.scale(T.reduce_loss("l2_mean", pt, tt), lambda_p))
    return loss


def _sum64(tensors):
    # float64 chain: exact for realistic magnitudes, so the result does
    # not depend on argument order
    acc = T.cast(tensors[0], np.float64)
    for t in tensors[1:]:
        acc = T.add(acc, T.cast(t, np.float64))
    return acc


def model_loss(preds, targets):
    """L1 between the summed non-middle predictions and the summed targets.

    Blind to any permutation of its six inputs, which is exactly why it
    is a weak constraint.
    """
    if len(preds) != 6 or len(targets) != 6:
        raise ValueError(f"expected the 6 non-middle frames, got {len(preds)} preds / {len(targets)} targets")
    pred_sum = _sum64(preds)
    tgt = np.zeros(pred_sum.values.shape, dtype=np.float64)
    for t in targets:
        arr = t.values if isinstance(t, Tensor) else np.asarray(t)
        tgt = tgt + arr.astype(np.float64)
    return T.reduce_loss("l1_mean", pred_sum, Tensor(tgt, dtype=np.float64))


def pair_loss(pred_i, pred_j, target_i, target_j):
    """Order-invariant supervision for a symmetric frame pair.

    L1 between |p_i + p_j| and |t_i + t_j| plus L1 between |p_i - p_j|
    and |t_i - t_j|; bitwise unchanged under swapping either pair.
    """
    ti = target_i.values if isinstance(target_i, Tensor) else np.asarray(target_i)
    tj = target_j.values if isinstance(target_j, Tensor) else np.asarray(target_j)
    sum_p = T.abs_(T.add(pred_i, pred_j))
    diff_p = T.abs_(T.sub(pred_i, pred_j))
    sum_t = np.abs(ti + tj)
    diff_t = np.abs(ti - tj)
    return T.add(T.reduce_loss("l1_mean", sum_p, Tensor(sum_t, dtype=sum_t.dtype)),
                 T.reduce_loss("l1_mean", diff_p, Tensor(diff_t, dtype=diff_t.dtype)))


def adversarial_losses(disc, fake, real):
    """Non-saturating GAN pair (g_loss, d_loss).

    d_loss scores real images high and detached fakes low; g_loss pushes
    the generator's fakes toward high scores. Detaching the fake inside
    d_loss keeps discriminator updates from reaching the generator.
    """
    real_t = real if isinstance(real, Tensor) else Tensor(real)
    logit_real = disc.logits(T.detach(real_t))
    logit_fake = disc.logits(fake)
    logit_fake_d = disc.logits(T.detach(fake))
    d_loss = T.add(T.reduce_mean(T.softplus(T.neg(logit_real))),
                   T.reduce_mean(T.softplus(logit_fake_d)))
    g_loss = T.reduce_mean(T.softplus(T.neg(logit_fake)))
    return g_loss, d_loss
