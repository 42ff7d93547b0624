"""Frame-prediction networks: one for the middle frame, conditioned ones
for the rest.

Each network runs feature extraction, refinement, and fusion. Extraction
folds space into channels (space_to_depth) so the refinement blocks see a
large receptive field cheaply; refinement is a stack of pre-activation
residual blocks, the middle ones dilated; reconstruction unfolds back to
full resolution. Extraction and refinement treat the three color planes
as independent grayscale images through shared weights; a small color
fusion stack then reconciles the three refined planes. The network output
is a correction added to the blurry input (residual learning), left
unclamped for loss computation and clamped to [0, 1] at evaluation time.

Conditioned networks additionally see previously predicted frames,
extracted separately and concatenated, which is how a temporal direction
chosen early propagates outward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .tensor import ConvSpec, Tensor

CHECKPOINT_VERSION = 1

# conditioning frame indices per network, blurry input appended last;
# evaluation must follow dependency order
CONDITIONING = {4: [], 3: [4], 5: [3, 4], 2: [3, 4], 6: [5, 4], 1: [2, 3], 7: [6, 5]}
EVAL_ORDER = [4, 3, 5, 2, 6, 1, 7]

# storage sharing for the outer pairs, and the checkpoint file layout
SHARE_GROUPS = {4: "f4", 3: "f3", 5: "f5", 1: "f17", 7: "f17", 2: "f26", 6: "f26"}
CHECKPOINT_FILES = {"f4": "f4.npz", "f3": "f3.npz", "f5": "f5.npz", "f17": "f17.npz", "f26": "f26.npz"}


@dataclass(frozen=True)
class NetworkSpec:
    role: str                    # "middle" | "conditioned"
    resample: int = 4            # space_to_depth factor
    base_channels: int = 32
    blocks: int = 4              # residual blocks
    dilated_blocks: int = 2      # middle blocks using dilation
    dilation: int = 2
    cond_inputs: int = 0         # conditioning frames, blurry not counted

    def __post_init__(self):
        if self.role not in ("middle", "conditioned"):
            raise ValueError(f"role must be 'middle' or 'conditioned', got {self.role!r}")
        if self.resample not in (1, 2, 4):
            raise ValueError(f"resample factor must be 1, 2 or 4, got {self.resample}")
        if not self.blocks >= self.dilated_blocks >= 0:
            raise ValueError(f"need blocks >= dilated_blocks >= 0, got {self.blocks} < {self.dilated_blocks}")
        if self.cond_inputs < 0:
            raise ValueError("cond_inputs must be >= 0")

    @property
    def input_count(self):
        return 1 + self.cond_inputs

    def dilated_range(self):
        lo = (self.blocks - self.dilated_blocks) // 2
        return range(lo, lo + self.dilated_blocks)


def middle_spec(**overrides):
    return NetworkSpec(role="middle", resample=4, cond_inputs=0, **overrides)


def conditioned_spec(cond_inputs, **overrides):
    return NetworkSpec(role="conditioned", resample=2, cond_inputs=cond_inputs, **overrides)


def default_specs():
    """Spec per frame index following the conditioning table."""
    return {i: (middle_spec() if i == 4 else conditioned_spec(len(CONDITIONING[i]))) for i in CONDITIONING}


def _layer_specs(spec):
    """Ordered (name, ConvSpec) pairs defining one network."""
    s, base = spec.resample, spec.base_channels
    layers = []
    for k in range(spec.input_count):
        layers.append((f"extract{k}", ConvSpec(s * s, base, 3)))
    if spec.input_count > 1:
        layers.append(("merge", ConvSpec(spec.input_count * base, base, 1)))
    dil_range = spec.dilated_range()
    for r in range(spec.blocks):
        d = spec.dilation if r in dil_range else 1
        layers.append((f"block{r}_c1", ConvSpec(base, base, 3, dilation=d)))
        layers.append((f"block{r}_c2", ConvSpec(base, base, 3, dilation=d)))
        layers.append((f"block{r}_c3", ConvSpec(base, base, 1)))
    layers.append(("recon", ConvSpec(base, s * s, 3)))
    layers.append(("fuse1", ConvSpec(3, base // 2, 3)))
    layers.append(("fuse2", ConvSpec(base // 2, 3, 3)))
    return layers


class NetworkParams:
    """Named weight/bias tensors for one network plus its spec."""

    def __init__(self, spec, tensors, share_tag=None):
        self.spec = spec
        self.tensors = tensors          # name -> Tensor, fixed insertion order
        self.share_tag = share_tag

    def parameters(self):
        return list(self.tensors.values())

    def param_count(self):
        return sum(t.values.size for t in self.tensors.values())

    def state(self):
        return {name: t.values for name, t in self.tensors.items()}

    def save(self, path):
        meta = {"format_version": CHECKPOINT_VERSION, "spec": asdict(self.spec), "share_tag": self.share_tag}
        arrays = {name: t.values for name, t in self.tensors.items()}
        np.savez(path, _meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path):
        try:
            with np.load(path) as data:
                meta = json.loads(bytes(data["_meta"]).decode())
                if meta.get("format_version") != CHECKPOINT_VERSION:
                    raise ValueError(f"unsupported checkpoint version in {path}: {meta.get('format_version')}")
                spec = NetworkSpec(**meta["spec"])
                tensors = {}
                for name, _ in _layer_specs(spec):
                    tensors[f"{name}_w"] = Tensor(data[f"{name}_w"], requires_grad=True)
                    tensors[f"{name}_b"] = Tensor(data[f"{name}_b"], requires_grad=True)
        except OSError as e:
            raise OSError(f"cannot read checkpoint {path}: {e}") from e
        return cls(spec, tensors, meta.get("share_tag"))


def build_network(spec, seed, share_tag=None):
    """He-initialized parameters for the given spec, deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, cs in _layer_specs(spec):
        fan_in = cs.kernel * cs.kernel * cs.in_channels
        w = rng.standard_normal(cs.weight_shape()) * np.sqrt(2.0 / fan_in)
        tensors[f"{name}_w"] = Tensor(w, requires_grad=True)
        tensors[f"{name}_b"] = Tensor(np.zeros(cs.out_channels), requires_grad=True)
    return NetworkParams(spec, tensors, share_tag)


# ---------------------------------------------------------------------------
# forward

def _fold_colors(x):
    """[N, H, W, 3] -> [N*3, H, W, 1]: color planes become batch entries."""
    n, h, w, _ = x.values.shape
    return T.reshape(T.permute(x, (0, 3, 1, 2)), (n * 3, h, w, 1))


def _unfold_colors(x, n):
    """[N*3, H, W, 1] -> [N, H, W, 3]."""
    _, h, w, _ = x.values.shape
    return T.permute(T.reshape(x, (n, 3, h, w)), (0, 2, 3, 1))


def _conv(params, layers, name, x):
    return T.conv2d(x, layers[name], params.tensors[f"{name}_w"], params.tensors[f"{name}_b"])


def forward_batch(params, inputs):
    """Run one network on batched inputs ([N, H, W, 3] each, blurry last).

    Returns the unclamped prediction, blurry plus the learned correction.
    """
    spec = params.spec
    if len(inputs) != spec.input_count:
        raise ValueError(f"network expects {spec.input_count} inputs (got {len(inputs)})")
    tensors = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    n, h, w, c = tensors[-1].values.shape
    if c != 3:
        raise ValueError(f"inputs must be RGB, got {c} channels")
    s = spec.resample
    if h % s or w % s:
        raise ValueError(f"spatial dims ({h}, {w}) must be divisible by the resample factor {s}")
    for k, x in enumerate(tensors):
        T._check_same_shape(x.values.shape, tensors[-1].values.shape, f"network input {k}")

    layers = dict(_layer_specs(spec))
    feats = []
    for k, x in enumerate(tensors):
        z = T.space_to_depth(_fold_colors(x), s)
        feats.append(_conv(params, layers, f"extract{k}", z))
    hid = feats[0] if len(feats) == 1 else _conv(params, layers, "merge", T.concat(feats, axis=-1))

    for r in range(spec.blocks):
        a = T.relu(hid)
        a = _conv(params, layers, f"block{r}_c1", a)
        a = T.relu(a)
        a = _conv(params, layers, f"block{r}_c2", a)
        a = T.relu(a)
        a = _conv(params, layers, f"block{r}_c3", a)
        hid = T.add(hid, a)

    gray = T.depth_to_space(_conv(params, layers, "recon", hid), s)
    stacked = _unfold_colors(gray, n)
    fused = T.relu(_conv(params, layers, "fuse1", stacked))
    correction = _conv(params, layers, "fuse2", fused)
    return T.add(tensors[-1], correction)


def forward(params, inputs):
    """Single-sample forward: list of [H, W, 3] images, blurry last."""
    batched = []
    for x in inputs:
        if isinstance(x, Tensor):
            batched.append(T.reshape(x, (1,) + x.values.shape))
        else:
            batched.append(np.asarray(x)[None])
    out = forward_batch(params, batched)
    return T.reshape(out, out.values.shape[1:])


def predict_sequence(all_params, blurry, middle_override=None):
    """Evaluate all seven networks in dependency order on one blurry image.

    Returns the seven frames clamped to [0, 1] as float32 arrays. With
    ``middle_override`` the given image replaces the middle prediction in
    every conditioning input (and in the returned sequence).
    """
    for i in CONDITIONING:
        if i not in all_params:
            raise ValueError(f"missing network for frame {i}")
    preds = {}
    with T.no_grad():
        for i in EVAL_ORDER:
            if i == 4 and middle_override is not None:
                preds[4] = np.clip(np.asarray(middle_override, dtype=np.float32), 0.0, 1.0)
                continue
            cond = [preds[j] for j in CONDITIONING[i]]
            out = forward(all_params[i], cond + [blurry])
            preds[i] = np.clip(out.values, 0.0, 1.0).astype(np.float32)
    return [preds[i] for i in range(1, 8)]


# ---------------------------------------------------------------------------
# checkpoint sets

def save_checkpoints(all_params, ckpt_dir):
    from pathlib import Path
    d = Path(ckpt_dir)
    d.mkdir(parents=True, exist_ok=True)
    seen = {}
    for i, tag in SHARE_GROUPS.items():
        if i in all_params and tag not in seen:
            all_params[i].save(d / CHECKPOINT_FILES[tag])
            seen[tag] = True


def load_checkpoints(ckpt_dir, required=("f4", "f3", "f5", "f17", "f26")):
    """Load the networks for all seven frames, sharing storage per group."""
    from pathlib import Path
    d = Path(ckpt_dir)
    by_tag = {}
    for tag in required:
        path = d / CHECKPOINT_FILES[tag]
        if not path.exists():
            raise FileNotFoundError(f"missing checkpoint {path}")
        by_tag[tag] = NetworkParams.load(path)
    return {i: by_tag[tag] for i, tag in SHARE_GROUPS.items() if tag in by_tag}
