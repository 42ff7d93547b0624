"""Staged training of the frame-prediction networks, plus ablation baselines.

Stage 1 trains the middle-frame network alone. Stage 2 trains the inner
pair (frames 3 and 5) with the order-invariant pair loss, conditioning on
the middle prediction; stage 3 trains the outer pairs (2, 6) and (1, 7),
with frames 1/7 and 2/6 sharing weights. Under teacher forcing (the
default) conditioning predictions from earlier stages are replaced by
ground-truth frames, so the stages can run in any order; under
sequential_pairwise the frozen earlier checkpoints supply them.

Baselines for ablation: ``independent`` (per-frame MSE, collapses to the
mean of the valid targets), ``global`` (sum-of-frames L1, permutation
blind), ``pairwise`` (pair losses without sequencing, needs inference
time reordering).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .dataset import augment, load_manifest, load_sample  # noqa: F401  (augment is part of this module's surface)
from .losses import Discriminator, FeatureExtractor, adversarial_losses, middle_loss, model_loss, pair_loss
from .networks import (
    CONDITIONING,
    NetworkParams,
    build_network,
    conditioned_spec,
    forward_batch,
    middle_spec,
    save_checkpoints,
)

SCHEMES = ("independent", "global", "pairwise", "sequential_pairwise", "teacher_forcing")

# pairwise-without-sequencing wiring: every pair sees the middle, the
# second member of a pair additionally sees the first
PAIRWISE_CONDITIONING = {3: [4], 5: [4, 3], 2: [4], 6: [4, 2], 1: [4], 7: [4, 1]}


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; the last good checkpoint was written."""


@dataclass
class TrainConfig:
    stage: int = 1
    scheme: str = "teacher_forcing"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int | None = None      # defaults: 8 for stage 1, 6 for stages 2-3
    steps: int = 2000
    lambda_p: float = 0.1
    lambda_adv: float = 0.01
    seed: int = 0
    ckpt_dir: str = "checkpoints"
    holdout: int = 0                   # tail samples excluded from training
    frames: list[int] | None = None    # baseline schemes: which frames to train

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}, expected one of {SCHEMES}")

    def resolved_batch(self):
        if self.batch_size is not None:
            return self.batch_size
        return 8 if self.stage == 1 else 6

    @classmethod
    def from_json(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self):
        return asdict(self)


@dataclass
class TrainResult:
    losses: list[float]
    d_losses: list[float] | None
    checkpoints: list[str]
    loss_csv: str


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.assign(p.values - self.lr * mhat / (np.sqrt(vhat) + self.eps))


# ---------------------------------------------------------------------------
# data access

class TrainData:
    """Manifest-backed dataset preloaded as uint8, decoded per batch."""

    def __init__(self, data_dir, holdout=0):
        self.root = Path(data_dir)
        manifest = load_manifest(data_dir)
        entries = manifest["samples"]
        if holdout >= len(entries):
            raise ValueError(f"holdout {holdout} leaves no training samples out of {len(entries)}")
        split = len(entries) - holdout
        self.train_entries = entries[:split]
        self.eval_entries = entries[split:]
        self.manifest = manifest
        self._blurry = []
        self._frames = []
        for e in self.train_entries:
            blurry, frames = load_sample(data_dir, e)
            self._blurry.append(np.round(blurry * 255).astype(np.uint8))
            self._frames.append(np.stack([np.round(f * 255).astype(np.uint8) for f in frames]))

    def __len__(self):
        return len(self.train_entries)

    def batch(self, idxs):
        blurry = np.stack([self._blurry[i] for i in idxs]).astype(np.float32) / 255.0
        frames = np.stack([self._frames[i] for i in idxs]).astype(np.float32) / 255.0
        return blurry, frames


def _batch_indices(n, batch, steps, rng):
    """Seed-fixed sample order: reshuffle each epoch, yield index slices."""
    batch = min(batch, n)
    perm = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + batch > n:
            perm = rng.permutation(n)
            pos = 0
        yield perm[pos:pos + batch]
        pos += batch


def _net_seed(seed, tag):
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _snapshot(params_list):
    return [{name: t.values for name, t in p.tensors.items()} for p in params_list]


def _restore(params_list, snaps):
    for p, snap in zip(params_list, snaps):
        for name, vals in snap.items():
            p.tensors[name].assign(vals)


def _write_loss_csv(path, losses, d_losses=None):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if d_losses is None:
            w.writerow(["step", "loss"])
            for i, v in enumerate(losses):
                w.writerow([i, v])
        else:
            w.writerow(["step", "loss", "d_loss"])
            for i, (v, dv) in enumerate(zip(losses, d_losses)):
                w.writerow([i, v, dv])


def _frozen_middle_predictions(data, ckpt_dir):
    """Clamped middle-frame predictions for every training sample."""
    from .networks import CHECKPOINT_FILES
    path = Path(ckpt_dir) / CHECKPOINT_FILES["f4"]
    if not path.exists():
        raise FileNotFoundError(
            f"scheme needs the stage-1 checkpoint {path}; train stage 1 first or use teacher_forcing")
    f4 = NetworkParams.load(path)
    preds = []
    with T.no_grad():
        for i in range(len(data)):
            blurry, _ = data.batch([i])
            out = forward_batch(f4, [blurry])
            preds.append(np.clip(out.values[0], 0.0, 1.0).astype(np.float32))
    return np.stack(preds)


def _frozen_pair_predictions(data, ckpt_dir, mid_preds):
    """Clamped frame-3/5 predictions from the frozen stage-2 checkpoints."""
    from .networks import CHECKPOINT_FILES
    p3_path = Path(ckpt_dir) / CHECKPOINT_FILES["f3"]
    p5_path = Path(ckpt_dir) / CHECKPOINT_FILES["f5"]
    for p in (p3_path, p5_path):
        if not p.exists():
            raise FileNotFoundError(
                f"scheme needs the stage-2 checkpoint {p}; train stage 2 first or use teacher_forcing")
    f3 = NetworkParams.load(p3_path)
    f5 = NetworkParams.load(p5_path)
    preds3, preds5 = [], []
    with T.no_grad():
        for i in range(len(data)):
            blurry, _ = data.batch([i])
            mid = mid_preds[i][None]
            out3 = forward_batch(f3, [mid, blurry])
            x3 = np.clip(out3.values, 0.0, 1.0).astype(np.float32)
            out5 = forward_batch(f5, [x3, mid, blurry])
            preds3.append(x3[0])
            preds5.append(np.clip(out5.values[0], 0.0, 1.0).astype(np.float32))
    return np.stack(preds3), np.stack(preds5)


# ---------------------------------------------------------------------------
# training stages

def _run_loop(cfg, data, nets, build_loss, tag, discriminators=None):
    """Shared minibatch loop: forward, check finiteness, Adam step, CSV.

    ``build_loss(blurry, frames, idxs)`` returns (gen_loss, fakes_and_reals)
    where the second item lists (fake_tensor, real_array) pairs for the
    adversarial terms, or [] when lambda_adv is 0.
    """
    out_dir = Path(cfg.ckpt_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen_params = []
    for p in nets:
        gen_params.extend(p.parameters())
    opt = Adam(gen_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    use_adv = discriminators is not None and cfg.lambda_adv > 0
    if use_adv:
        d_opts = [Adam(d.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) for d in discriminators]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 9999]))
    losses, d_losses = [], []
    prev = _snapshot(nets)

    for step, idxs in enumerate(_batch_indices(len(data), cfg.resolved_batch(), cfg.steps, rng)):
        blurry, frames = data.batch(idxs)
        gen_loss, adv_pairs = build_loss(blurry, frames, idxs)
        g_terms = []
        if use_adv:
            for d, (fake, real) in zip(discriminators, adv_pairs):
                g, dl = adversarial_losses(d, fake, real)
                g_terms.append((g, dl))
            for g, _ in g_terms:
                gen_loss = T.add(gen_loss, T.scale(g, cfg.lambda_adv))
        loss_val = float(gen_loss.values)
        if not np.isfinite(loss_val):
            _restore(nets, prev)
            _save_stage(nets, cfg.ckpt_dir)
            _write_loss_csv(out_dir / f"{tag}_loss.csv", losses, d_losses if use_adv else None)
            raise TrainingDiverged(f"non-finite loss at step {step}; last good checkpoint written to {cfg.ckpt_dir}")
        prev = _snapshot(nets)
        opt.zero_grad()
        T.backward(gen_loss)
        opt.step()
        losses.append(loss_val)

        if use_adv:
            total_d = 0.0
            for d_opt, (_, dl) in zip(d_opts, g_terms):
                total_d += float(dl.values)
                d_opt.zero_grad()
                T.backward(dl)
                d_opt.step()
            d_losses.append(total_d)

    paths = _save_stage(nets, cfg.ckpt_dir)
    csv_path = out_dir / f"{tag}_loss.csv"
    _write_loss_csv(csv_path, losses, d_losses if use_adv else None)
    return TrainResult(losses, d_losses if use_adv else None, paths, str(csv_path))


def _save_stage(nets, ckpt_dir):
    from .networks import CHECKPOINT_FILES
    paths = []
    d = Path(ckpt_dir)
    for p in nets:
        name = CHECKPOINT_FILES.get(p.share_tag, f"{p.share_tag}.npz")
        path = d / name
        p.save(path)
        paths.append(str(path))
    return paths


def train_stage1(cfg, data_dir):
    """Minimize the middle-frame loss; writes f4.npz and a loss curve."""
    data = TrainData(data_dir, cfg.holdout)
    net = build_network(middle_spec(), _net_seed(cfg.seed, 4), share_tag="f4")
    fx = FeatureExtractor()

    def build_loss(blurry, frames, idxs):
        pred = forward_batch(net, [blurry])
        return middle_loss(pred, frames[:, 3], fx, cfg.lambda_p), []

    return _run_loop(cfg, data, [net], build_loss, "stage1")


def train_stage2(cfg, data_dir):
    """Train the inner pair (frames 3, 5) with the pair loss.

    Conditioning middle frames come from ground truth under teacher
    forcing, else from the frozen stage-1 checkpoint.
    """
    data = TrainData(data_dir, cfg.holdout)
    net3 = build_network(conditioned_spec(1), _net_seed(cfg.seed, 3), share_tag="f3")
    net5 = build_network(conditioned_spec(2), _net_seed(cfg.seed, 5), share_tag="f5")
    teacher = cfg.scheme == "teacher_forcing"
    mid_preds = None if teacher else _frozen_middle_predictions(data, cfg.ckpt_dir)

    def build_loss(blurry, frames, idxs):
        mid = frames[:, 3] if teacher else mid_preds[idxs]
        p3 = forward_batch(net3, [mid, blurry])
        p5 = forward_batch(net5, [p3, mid, blurry])
        loss = pair_loss(p3, p5, frames[:, 2], frames[:, 4])
        return loss, [(p3, frames[:, 2]), (p5, frames[:, 4])]

    discs = None
    if cfg.lambda_adv > 0:
        discs = [Discriminator(_net_seed(cfg.seed, 103)), Discriminator(_net_seed(cfg.seed, 105))]
    return _run_loop(cfg, data, [net3, net5], build_loss, "stage2", discs)


def train_stage3(cfg, data_dir):
    """Train the outer pairs (2, 6) and (1, 7) with shared weights per pair.

    Conditioning frames 3, 4, 5 are ground truth under teacher forcing,
    else predictions of the frozen stage-1/2 checkpoints. Frames 1 and 7
    are conditioned on the live 2 and 6 predictions, so the direction
    chosen by the inner pair propagates outward within the stage.
    """
    data = TrainData(data_dir, cfg.holdout)
    net26 = build_network(conditioned_spec(2), _net_seed(cfg.seed, 26), share_tag="f26")
    net17 = build_network(conditioned_spec(2), _net_seed(cfg.seed, 17), share_tag="f17")
    teacher = cfg.scheme == "teacher_forcing"
    if teacher:
        mid_preds = preds3 = preds5 = None
    else:
        mid_preds = _frozen_middle_predictions(data, cfg.ckpt_dir)
        preds3, preds5 = _frozen_pair_predictions(data, cfg.ckpt_dir, mid_preds)

    def build_loss(blurry, frames, idxs):
        if teacher:
            c3, c4, c5 = frames[:, 2], frames[:, 3], frames[:, 4]
        else:
            c3, c4, c5 = preds3[idxs], mid_preds[idxs], preds5[idxs]
        p2 = forward_batch(net26, [c3, c4, blurry])
        p6 = forward_batch(net26, [c5, c4, blurry])
        p1 = forward_batch(net17, [p2, c3, blurry])
        p7 = forward_batch(net17, [p6, c5, blurry])
        loss = T.add(pair_loss(p1, p7, frames[:, 0], frames[:, 6]),
                     pair_loss(p2, p6, frames[:, 1], frames[:, 5]))
        return loss, [(p1, frames[:, 0]), (p2, frames[:, 1]), (p6, frames[:, 5]), (p7, frames[:, 6])]

    discs = None
    if cfg.lambda_adv > 0:
        discs = [Discriminator(_net_seed(cfg.seed, 100 + i)) for i in (1, 2, 6, 7)]
    return _run_loop(cfg, data, [net26, net17], build_loss, "stage3", discs)


# ---------------------------------------------------------------------------
# baselines

def train_baseline(cfg, data_dir):
    """Ablation schemes: independent, global, or pairwise (unsequenced)."""
    if cfg.scheme == "independent":
        return _train_independent(cfg, data_dir)
    if cfg.scheme == "global":
        return _train_global(cfg, data_dir)
    if cfg.scheme == "pairwise":
        return _train_pairwise(cfg, data_dir)
    raise ValueError(f"not a baseline scheme: {cfg.scheme!r}")


def _baseline_frames(cfg):
    frames = cfg.frames if cfg.frames else [1, 2, 3, 5, 6, 7]
    bad = [i for i in frames if not 1 <= i <= 7]
    if bad:
        raise ValueError(f"frame indices out of range: {bad}")
    return frames


def _train_independent(cfg, data_dir):
    """One unconditioned network per requested frame, plain MSE each."""
    data = TrainData(data_dir, cfg.holdout)
    frames_to_train = _baseline_frames(cfg)
    nets = {i: build_network(conditioned_spec(0), _net_seed(cfg.seed, 200 + i), share_tag=f"indep_f{i}")
            for i in frames_to_train}

    def build_loss(blurry, frames, idxs):
        loss = None
        for i, net in nets.items():
            pred = forward_batch(net, [blurry])
            term = T.reduce_loss("l2_mean", pred, frames[:, i - 1])
            loss = term if loss is None else T.add(loss, term)
        return loss, []

    return _run_loop(cfg, data, list(nets.values()), build_loss, "independent")


def _train_global(cfg, data_dir):
    """Six unconditioned networks supervised only through their sum."""
    data = TrainData(data_dir, cfg.holdout)
    idx_nonmid = [1, 2, 3, 5, 6, 7]
    nets = {i: build_network(conditioned_spec(0), _net_seed(cfg.seed, 300 + i), share_tag=f"global_f{i}")
            for i in idx_nonmid}

    def build_loss(blurry, frames, idxs):
        preds = [forward_batch(nets[i], [blurry]) for i in idx_nonmid]
        targets = [frames[:, i - 1] for i in idx_nonmid]
        return model_loss(preds, targets), []

    return _run_loop(cfg, data, list(nets.values()), build_loss, "global")


def _train_pairwise(cfg, data_dir):
    """All three pairs with pair losses but no sequencing across pairs."""
    data = TrainData(data_dir, cfg.holdout)
    nets = {}
    for i in (3, 2, 1):
        nets[i] = build_network(conditioned_spec(1), _net_seed(cfg.seed, 400 + i), share_tag=f"pw_f{i}")
        j = 8 - i
        nets[j] = build_network(conditioned_spec(2), _net_seed(cfg.seed, 400 + j), share_tag=f"pw_f{j}")
    def build_loss(blurry, frames, idxs):
        mid = frames[:, 3]
        loss = None
        for i in (3, 2, 1):
            j = 8 - i
            pi = forward_batch(nets[i], [mid, blurry])
            pj = forward_batch(nets[j], [mid, pi, blurry])
            term = pair_loss(pi, pj, frames[:, i - 1], frames[:, j - 1])
            loss = term if loss is None else T.add(loss, term)
        return loss, []

    return _run_loop(cfg, data, [nets[i] for i in (3, 5, 2, 6, 1, 7)], build_loss, "pairwise")


def reorder_pairwise(preds):
    """Resolve each pair's binary ordering greedily outward from the middle.

    ``preds`` maps frame index to image; each pair (i, 8-i) keeps or swaps
    its two frames to minimize L2 distance to the temporally adjacent,
    already placed frames. Ties keep the original assignment. The
    unordered pair sets are never changed.
    """
    placed = {4: preds[4]}
    out = dict(preds)
    for i, j in ((3, 5), (2, 6), (1, 7)):
        adj_i, adj_j = i + 1, j - 1
        a, b = out[i], out[j]
        keep = float(np.sum((a - placed[adj_i]) ** 2) + np.sum((b - placed[adj_j]) ** 2))
        swap = float(np.sum((b - placed[adj_i]) ** 2) + np.sum((a - placed[adj_j]) ** 2))
        if swap < keep:
            out[i], out[j] = b, a
        placed[i], placed[j] = out[i], out[j]
    return out


def train(cfg, data_dir):
    """Dispatch on scheme/stage like the command line does."""
    if cfg.scheme in ("independent", "global", "pairwise"):
        return train_baseline(cfg, data_dir)
    if cfg.stage == 1:
        return train_stage1(cfg, data_dir)
    if cfg.stage == 2:
        return train_stage2(cfg, data_dir)
    return train_stage3(cfg, data_dir)
