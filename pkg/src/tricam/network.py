"""The split gaze network.

Upper branch: the six (u, v, detected) eye coordinates.  Three auxiliary heads
(one per masked camera, shared between eyes) each see the other two cameras'
coordinates and predict the masked camera's coordinate; their hidden layers
feed the coordinate trunk, so the auxiliary loss shapes features the main task
uses.

Lower branch: a shared CNN encodes each 40x20 crop; a shared discriminator
scores each crop; the six scores go through one softmax and scale the CNN
features before a reduction layer.  A decision MLP joins both branches.

Undetected channels are multiplied by zero right before the last dense layer of
their branch (CNN features and discriminator score before fusion/reduction,
auxiliary hidden activations before the head output).
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .synthgen import IMG_H, IMG_W, N_CAMS, N_EYES

N_CHANNELS = N_EYES * N_CAMS
# head t predicts camera t from the remaining pair
AUX_PAIRS = ((1, 2), (0, 2), (0, 1))


class ArchitectureError(ValueError):
    pass


class DivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TriCamConfig:
    cnn_channels: tuple[int, int] = (16, 32)
    cnn_kernel: int = 3
    cnn_features: int = 64
    disc_channels: tuple[int, int] = (8, 16)
    disc_kernel: int = 3
    disc_hidden: int = 32
    aux_hidden: int = 32
    coord_hidden: tuple[int, int] = (64, 64)
    reduction: int = 128
    decision_hidden: tuple[int, int] = (1280, 640)
    aux_ratio: float = 0.1
    weighted_fusion: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.aux_ratio < 0:
            raise ValueError("aux_ratio must be non-negative")
        widths = (*self.cnn_channels, self.cnn_kernel, self.cnn_features, *self.disc_channels,
                  self.disc_kernel, self.disc_hidden, self.aux_hidden, *self.coord_hidden,
                  self.reduction, *self.decision_hidden)
        if any(int(w) < 1 for w in widths):
            raise ArchitectureError("bad-architecture: all widths must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TriCamConfig":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


def conv_stack_shape(channels, kernel: int, h: int = IMG_H, w: int = IMG_W) -> tuple[int, int, int]:
    """Spatial output (h, w, c) of two conv+pool stages."""
    for _ in channels:
        h, w = h - kernel + 1, w - kernel + 1
        if h < 1 or w < 1:
            raise ArchitectureError(f"bad-architecture: {kernel}x{kernel} kernel does not fit")
        h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise ArchitectureError("bad-architecture: feature map vanishes after pooling")
    return h, w, channels[-1]


def param_shapes(cfg: TriCamConfig) -> dict[str, tuple]:
    """Ordered parameter names and shapes; dense weights are (fan_in, fan_out)."""
    shapes: dict[str, tuple] = {}
    k = cfg.cnn_kernel
    c1, c2 = cfg.cnn_channels
    shapes["cnn.conv1.w"] = (k, k, 1, c1)
    shapes["cnn.conv1.b"] = (c1,)
    shapes["cnn.conv2.w"] = (k, k, c1, c2)
    shapes["cnn.conv2.b"] = (c2,)
    h, w, c = conv_stack_shape(cfg.cnn_channels, k)
    shapes["cnn.fc.w"] = (h * w * c, cfg.cnn_features)
    shapes["cnn.fc.b"] = (cfg.cnn_features,)

    # discriminator exists even when fusion is ablated so every variant shares one init
    k = cfg.disc_kernel
    d1, d2 = cfg.disc_channels
    shapes["disc.conv1.w"] = (k, k, 1, d1)
    shapes["disc.conv1.b"] = (d1,)
    shapes["disc.conv2.w"] = (k, k, d1, d2)
    shapes["disc.conv2.b"] = (d2,)
    h, w, c = conv_stack_shape(cfg.disc_channels, k)
    shapes["disc.fc1.w"] = (h * w * c, cfg.disc_hidden)
    shapes["disc.fc1.b"] = (cfg.disc_hidden,)
    shapes["disc.fc2.w"] = (cfg.disc_hidden, 1)
    shapes["disc.fc2.b"] = (1,)

    for t in range(N_CAMS):
        shapes[f"aux{t}.fc1.w"] = (6, cfg.aux_hidden)
        shapes[f"aux{t}.fc1.b"] = (cfg.aux_hidden,)
        shapes[f"aux{t}.fc2.w"] = (cfg.aux_hidden, 2)
        shapes[f"aux{t}.fc2.b"] = (2,)

    h1, h2 = cfg.coord_hidden
    coord_in = N_CHANNELS * 3 + N_CAMS * N_EYES * cfg.aux_hidden
    shapes["coord.fc1.w"] = (coord_in, h1)
    shapes["coord.fc1.b"] = (h1,)
    shapes["coord.fc2.w"] = (h1, h2)
    shapes["coord.fc2.b"] = (h2,)

    shapes["reduce.w"] = (N_CHANNELS * cfg.cnn_features, cfg.reduction)
    shapes["reduce.b"] = (cfg.reduction,)

    m1, m2 = cfg.decision_hidden
    shapes["decision.fc1.w"] = (h2 + cfg.reduction, m1)
    shapes["decision.fc1.b"] = (m1,)
    shapes["decision.fc2.w"] = (m1, m2)
    shapes["decision.fc2.b"] = (m2,)
    shapes["decision.out.w"] = (m2, 2)
    shapes["decision.out.b"] = (2,)
    return shapes


@dataclass
class TriCamModel:
    config: TriCamConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "TriCamModel":
        return TriCamModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(cfg: TriCamConfig) -> TriCamModel:
    """Seeded Glorot-uniform weights, a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        else:
            field = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
            a = np.sqrt(6.0 / (field * (shape[-2] + shape[-1])))
            params[name] = rng.uniform(-a, a, size=shape)
    return TriCamModel(cfg, params)


def count_params(model) -> int:
    params = model.params if isinstance(model, TriCamModel) else model
    return int(sum(p.size for p in params.values()))


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchInput:
    """Network-ready batch.  Coordinates are normalised by the camera resolution
    and zeroed where the eye was not detected (``flags`` = 0)."""

    coords: np.ndarray   # (B, 2, 3, 2)
    flags: np.ndarray    # (B, 2, 3) float 0/1
    images: np.ndarray   # (B, 2, 3, 20, 40)
    target: np.ndarray   # (B, 2) normalised gaze

    def __len__(self):
        return len(self.target)

    def validate(self):
        b = len(self.target)
        if (self.coords.shape != (b, N_EYES, N_CAMS, 2) or self.flags.shape != (b, N_EYES, N_CAMS)
                or self.images.shape != (b, N_EYES, N_CAMS, IMG_H, IMG_W)
                or self.target.shape != (b, 2)):
            raise ValueError(
                f"batch shape mismatch: coords {self.coords.shape}, flags {self.flags.shape}, "
                f"images {self.images.shape}, target {self.target.shape}")

    def subset(self, idx) -> "BatchInput":
        return BatchInput(self.coords[idx], self.flags[idx], self.images[idx], self.target[idx])


def make_batch(view_uv, detected, images, target_px, rig, drop_camera: int | None = None
               ) -> BatchInput:
    """Translate raw observations (pixel coords with -1 sentinels) to network inputs.

    ``drop_camera`` (0-based) forces that camera's channels to undetected.
    """
    det = np.array(detected, dtype=bool, copy=True)
    if drop_camera is not None:
        det[:, :, drop_camera] = False
    res = np.array([[cam.res_w, cam.res_h] for cam in rig.cameras], dtype=np.float64)
    coords = np.where(det[..., None], np.asarray(view_uv) / res[None, None], 0.0)
    flags = det.astype(np.float64)
    imgs = np.where(det[..., None, None], images, 0.0) if drop_camera is not None else images
    scr = rig.screen
    target = np.asarray(target_px, dtype=np.float64) / np.array([scr.width_px, scr.height_px])
    return BatchInput(coords, flags, imgs, target)


# ---------------------------------------------------------------------------
# forward / loss / backward


@dataclass
class ForwardOutput:
    gaze_pred: np.ndarray       # (B, 2)
    aux_preds: np.ndarray       # (B, 2 eyes, 3 heads, 2)
    fusion_weights: np.ndarray  # (B, 6)
    nodes: dict = field(default_factory=dict, repr=False)


@dataclass
class LossBreakdown:
    main: float
    aux: np.ndarray             # (2 eyes, 3 heads)
    joint: float
    aux_ratio: float
    node: Tensor | None = field(default=None, repr=False)
    params: dict | None = field(default=None, repr=False)


def _dense(p, prefix, x, act=True):
    y = ad.linear(x, p[prefix + ".w"], p[prefix + ".b"])
    return ad.elu(y) if act else y


def _conv_stack(p, prefix, x):
    x = ad.elu(ad.conv_pool(x, p[prefix + ".conv1.w"], p[prefix + ".conv1.b"]))
    x = ad.elu(ad.conv_pool(x, p[prefix + ".conv2.w"], p[prefix + ".conv2.b"]))
    n = x.shape[0]
    return ad.reshape(x, (n, -1))


def _graph(cfg: TriCamConfig, p: dict, batch: BatchInput):
    b = len(batch)
    flags = batch.flags
    x = np.concatenate([batch.coords, flags[..., None]], axis=-1)  # (B, 2, 3, 3)

    aux_outs, hiddens = [], []
    for t, (a, c) in enumerate(AUX_PAIRS):
        pair_in = x[:, :, [a, c], :].reshape(b * N_EYES, 6)
        gate = (flags[:, :, a] * flags[:, :, c]).reshape(b * N_EYES, 1)
        h = ad.mul(_dense(p, f"aux{t}.fc1", Tensor(pair_in)), gate)
        aux_outs.append(ad.reshape(_dense(p, f"aux{t}.fc2", h, act=False), (b, N_EYES, 2)))
        hiddens.append(ad.reshape(h, (b, N_EYES * cfg.aux_hidden)))
    aux = ad.stack(aux_outs, axis=2)  # (B, eyes, heads, 2)

    coord_in = ad.concat([Tensor(x.reshape(b, N_CHANNELS * 3))] + hiddens, axis=1)
    c = _dense(p, "coord.fc2", _dense(p, "coord.fc1", coord_in))

    gate6 = flags.reshape(b, N_CHANNELS)
    imgs = Tensor(batch.images.reshape(b * N_CHANNELS, IMG_H, IMG_W, 1))
    feats = _dense(p, "cnn.fc", _conv_stack(p, "cnn", imgs))
    feats = ad.mul(ad.reshape(feats, (b, N_CHANNELS, cfg.cnn_features)), gate6[:, :, None])
    if cfg.weighted_fusion:
        d = _conv_stack(p, "disc", imgs)
        logit = _dense(p, "disc.fc2", _dense(p, "disc.fc1", d), act=False)
        logit = ad.mul(ad.reshape(logit, (b, N_CHANNELS)), gate6)
        weights = ad.softmax(logit, axis=1)
    else:
        weights = Tensor(np.full((b, N_CHANNELS), 1.0 / N_CHANNELS))
    fused = ad.mul(feats, ad.reshape(weights, (b, N_CHANNELS, 1)))
    r = _dense(p, "reduce", ad.reshape(fused, (b, N_CHANNELS * cfg.cnn_features)))

    hidden = _dense(p, "decision.fc2", _dense(p, "decision.fc1", ad.concat([c, r], axis=1)))
    gaze = _dense(p, "decision.out", hidden, act=False)
    return gaze, aux, weights


def forward(model: TriCamModel, batch: BatchInput, tape: bool = True) -> ForwardOutput:
    """Run the network.  With ``tape`` the graph is kept for :func:`backward`."""
    batch.validate()
    p = {k: Tensor(v, requires_grad=tape, name=k) for k, v in model.params.items()}
    gaze, aux, weights = _graph(model.config, p, batch)
    nodes = {"gaze": gaze, "aux": aux, "weights": weights, "params": p} if tape else {}
    return ForwardOutput(gaze.data, aux.data, weights.data, nodes)


def aux_validity(batch: BatchInput) -> np.ndarray:
    """(B, eyes, heads) mask: the masked camera and both input cameras detected."""
    f = batch.flags
    cols = [f[:, :, t] * f[:, :, a] * f[:, :, c] for t, (a, c) in enumerate(AUX_PAIRS)]
    return np.stack(cols, axis=2)


def combine_losses(main: float, aux, aux_ratio: float) -> float:
    return float(main + aux_ratio * float(np.sum(aux)))


def joint_loss(out: ForwardOutput, batch: BatchInput, aux_ratio: float,
               aux_targets: np.ndarray | None = None, aux_valid: np.ndarray | None = None
               ) -> LossBreakdown:
    """Main MSE on normalised gaze plus ``aux_ratio`` times the six auxiliary MSEs.

    Auxiliary targets default to the batch's own normalised coordinates of the
    masked camera; entries whose target or inputs are undetected are excluded.
    """
    b = len(batch)
    if b == 0:
        raise ValueError("empty batch")
    if aux_targets is None:
        aux_targets = batch.coords
    if aux_valid is None:
        aux_valid = aux_validity(batch)
    # aux_targets indexed (B, eye, cam); head t targets cam t, so the layout matches
    gaze = out.nodes.get("gaze", Tensor(out.gaze_pred))
    aux = out.nodes.get("aux", Tensor(out.aux_preds))

    main = ad.mean(ad.square(ad.add(gaze, -batch.target)))
    diff2 = ad.square(ad.add(aux, -aux_targets))                   # (B, 2, 3, 2)
    masked = ad.mul(diff2, aux_valid[..., None])
    counts = aux_valid.sum(axis=0) * 2.0                            # (2, 3)
    per_term = ad.mul(ad.tsum(masked, axis=(0, 3)), 1.0 / np.maximum(counts, 1.0))
    joint = ad.add(main, ad.mul(ad.tsum(per_term), aux_ratio))
    if not np.isfinite(joint.data):
        raise DivergedError(f"diverged: non-finite loss {float(joint.data)}")
    return LossBreakdown(float(main.data), per_term.data.copy(), float(joint.data), aux_ratio,
                         node=joint, params=out.nodes.get("params"))


def backward(model: TriCamModel, loss: LossBreakdown) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of the joint loss for every parameter."""
    if loss.node is None or loss.params is None:
        raise ValueError("loss has no recorded graph; call forward(..., tape=True)")
    loss.node.backward()
    grads = {}
    for name in model.params:
        t = loss.params[name]
        grads[name] = t.grad if t.grad is not None else np.zeros_like(model.params[name])
    return grads


def loss_and_grads(model: TriCamModel, batch: BatchInput, aux_ratio: float | None = None):
    ratio = model.config.aux_ratio if aux_ratio is None else aux_ratio
    out = forward(model, batch)
    loss = joint_loss(out, batch, ratio)
    return loss, backward(model, loss), out


def loss_value(model: TriCamModel, batch: BatchInput, aux_ratio: float | None = None) -> float:
    ratio = model.config.aux_ratio if aux_ratio is None else aux_ratio
    return joint_loss(forward(model, batch, tape=False), batch, ratio).joint


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, model: TriCamModel) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in model.params.items()},
                   {k: np.zeros_like(p) for k, p in model.params.items()})


@dataclass(frozen=True)
class Hyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    aux_ratio: float = 0.1


def train_step(model: TriCamModel, batch: BatchInput, opt: AdamState, hyper: Hyper):
    """One Adam update, in place.  Returns (model, opt, loss)."""
    loss, grads, _ = loss_and_grads(model, batch, hyper.aux_ratio)
    opt.t += 1
    bc1 = 1.0 - hyper.beta1 ** opt.t
    bc2 = 1.0 - hyper.beta2 ** opt.t
    for name, p in model.params.items():
        g = grads[name]
        m = opt.m[name]
        v = opt.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p -= hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return model, opt, loss


# ---------------------------------------------------------------------------
# gradient check


def grad_pairs(model: TriCamModel, batch: BatchInput, eps: float = 1e-6,
               aux_ratio: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Analytic and central-difference gradients of the joint loss, flattened
    over every parameter scalar in parameter order."""
    ratio = model.config.aux_ratio if aux_ratio is None else aux_ratio
    _, grads, _ = loss_and_grads(model, batch, ratio)
    analytic, numeric = [], []
    for name, p in model.params.items():
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value(model, batch, ratio)
            flat[i] = orig - eps
            down = loss_value(model, batch, ratio)
            flat[i] = orig
            numeric.append((up - down) / (2 * eps))
        analytic.append(grads[name].reshape(-1))
    return np.concatenate(analytic), np.array(numeric)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    Below ``floor`` the central difference is dominated by round-off
    (about machine-eps * loss / eps, a few 1e-10 at eps = 1e-6), so those
    scalars are effectively compared in absolute terms.
    """
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(cfg: TriCamConfig, batch: BatchInput, eps: float = 1e-6,
               aux_ratio: float | None = None, model: TriCamModel | None = None,
               floor: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients."""
    model = model or init_model(cfg)
    a, n = grad_pairs(model, batch, eps, aux_ratio)
    return float(np.max(relative_errors(a, n, floor)))


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"TRICAMCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: TriCamModel, path, meta: dict | None = None) -> Path:
    """Write config echo + named float64 little-endian blobs.

    Layout: 8-byte magic, uint32 version, uint64 header length, UTF-8 JSON header
    (config, meta, [name, shape, offset, nbytes] per parameter), then the blobs.
    """
    entries, offset, blobs = [], 0, []
    for name, arr in model.params.items():
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append([name, list(arr.shape), offset, len(blob)])
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": CHECKPOINT_VERSION, "config": model.config.to_dict(),
                         "meta": meta or {}, "params": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_config: TriCamConfig | None = None
                    ) -> tuple[TriCamModel, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode())
    cfg = TriCamConfig.from_dict(header["config"])
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError(f"{path}: checkpoint config does not match the expected config")
    base = 20 + hlen
    params = {}
    for name, shape, off, nbytes in header["params"]:
        arr = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=base + off)
        params[name] = arr.astype(np.float64).reshape(shape)
    expected = param_shapes(cfg)
    if list(params) != list(expected) or any(params[k].shape != tuple(s) for k, s in expected.items()):
        raise CheckpointError(f"{path}: parameter set does not match its config")
    return TriCamModel(cfg, params), header.get("meta", {})
