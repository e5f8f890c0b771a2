"""Per-branch classifier: small residual convnet, GAP, FC head, one logit.

Everything is plain numpy in float64. Parameters live in a flat dict keyed
by layer name (``stem.w``, ``s0.b1.conv1.w``, ``head.fc2.b``, ...), which
keeps checkpointing, Adam moments, and finite-difference auditing trivial.
Backprop is hand-written against the exact forward graph; there is no
autograd and no framework dependency.

A branch is modality-locked: the same architecture trains on RGB frames,
flow maps, or flow residuals, but one BranchModel only ever accepts the
input kind it was initialized for.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    EmptyBatch,
    EmptyList,
    InvalidConfig,
    ModalityMismatch,
    ShapeMismatch,
)
from .residual import EncodedInput, InputKind, channels_for

BCE_EPS = 1e-7


class Aggregation(Enum):
    """Frame-to-video pooling of per-input outputs."""

    MEAN_PROB = "mean_prob"
    MEAN_LOGIT = "mean_logit"
    MAX = "max"


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture knobs.

    ``stages`` is a tuple of (channels, blocks, stride); the stride applies
    to the first block of its stage, later blocks run at stride 1. The
    default is three stages of two blocks each, halving resolution per
    stage, which trains in minutes on a CPU.
    """

    input_size: int = 64
    stages: tuple[tuple[int, int, int], ...] = ((16, 2, 2), (32, 2, 2), (64, 2, 2))
    head_hidden: int = 32
    seed: int = 0
    aggregation: Aggregation = Aggregation.MEAN_PROB

    def validate(self) -> None:
        if self.input_size < 8:
            raise InvalidConfig(f"input_size must be >= 8, got {self.input_size}")
        if len(self.stages) < 1:
            raise InvalidConfig("need at least one stage")
        for ch, blocks, stride in self.stages:
            if ch < 1 or blocks < 1:
                raise InvalidConfig(f"stage ({ch}, {blocks}, {stride}): channels and blocks must be positive")
            if stride not in (1, 2):
                raise InvalidConfig(f"stride must be 1 or 2, got {stride}")
        if self.head_hidden < 1:
            raise InvalidConfig(f"head_hidden must be positive, got {self.head_hidden}")
        # spatial extent must survive all the stride-2 blocks
        size = self.input_size
        for _, _, stride in self.stages:
            size = (size + 2 - 3) // stride + 1
        if size < 1:
            raise InvalidConfig("input_size too small for the configured strides")


@dataclass
class BranchModel:
    params: dict[str, np.ndarray]
    config: BackboneConfig
    modality: InputKind


@dataclass(frozen=True)
class Prediction:
    prob: float
    logit: float


def _block_specs(cfg: BackboneConfig):
    """Yield (prefix, in_ch, out_ch, stride, has_proj) for every block.

    Block input channels start at stages[0].channels because the stem conv
    already lifts the raw input there.
    """
    ch_in = cfg.stages[0][0]
    for i, (ch, blocks, stride) in enumerate(cfg.stages):
        for j in range(blocks):
            s = stride if j == 0 else 1
            has_proj = s != 1 or ch_in != ch
            yield f"s{i}.b{j}", ch_in, ch, s, has_proj
            ch_in = ch


def init_model(cfg: BackboneConfig, modality: InputKind, seed: int | None = None) -> BranchModel:
    """He fan-in init for weights, zero biases, bit-reproducible from seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    in_ch = channels_for(modality)
    params: dict[str, np.ndarray] = {}

    def conv(name: str, c_out: int, c_in: int, k: int) -> None:
        fan_in = c_in * k * k
        params[name + ".w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
        params[name + ".b"] = np.zeros(c_out)

    def fc(name: str, n_out: int, n_in: int, relu_follows: bool) -> None:
        gain = 2.0 if relu_follows else 1.0
        params[name + ".w"] = rng.normal(0.0, np.sqrt(gain / n_in), size=(n_out, n_in))
        params[name + ".b"] = np.zeros(n_out)

    conv("stem", cfg.stages[0][0], in_ch, 3)
    for prefix, c_in, c_out, _, has_proj in _block_specs(cfg):
        conv(prefix + ".conv1", c_out, c_in, 3)
        conv(prefix + ".conv2", c_out, c_out, 3)
        if has_proj:
            conv(prefix + ".proj", c_out, c_in, 1)
    fc("head.fc1", cfg.head_hidden, cfg.stages[-1][0], relu_follows=True)
    fc("head.fc2", 1, cfg.head_hidden, relu_follows=False)
    return BranchModel(params=params, config=cfg, modality=modality)


# --- conv primitives (im2col) ------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, x_shape: tuple, k: int, stride: int, pad: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    dcols = dcols.reshape(n, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    if pad:
        return dxp[:, :, pad : pad + h, pad : pad + w]
    return dxp


def _conv_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    n = x.shape[0]
    f, _, k, _ = w.shape
    cols, oh, ow = _im2col(x, k, stride, pad)
    out = np.matmul(w.reshape(f, -1), cols) + b[None, :, None]
    cache = (cols, x.shape, stride, pad, oh, ow)
    return out.reshape(n, f, oh, ow), cache


def _conv_bwd(dout: np.ndarray, w: np.ndarray, cache):
    cols, x_shape, stride, pad, oh, ow = cache
    n, f = dout.shape[:2]
    k = w.shape[2]
    dflat = dout.reshape(n, f, oh * ow)
    dw = np.einsum("nfp,nkp->fk", dflat, cols).reshape(w.shape)
    db = dflat.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T, dflat)
    dx = _col2im(dcols, x_shape, k, stride, pad, oh, ow)
    return dx, dw, db


# --- full network -----------------------------------------------------------


def _forward_batch(model: BranchModel, x: np.ndarray, want_cache: bool = False):
    """x: (N, C, S, S) float64 -> logits (N,), plus caches for backprop."""
    p = model.params
    caches = []
    a, c_stem = _conv_fwd(x, p["stem.w"], p["stem.b"], 1, 1)
    h = np.maximum(a, 0.0)
    caches.append(("stem", c_stem, a))
    for prefix, _, _, stride, has_proj in _block_specs(model.config):
        x_in = h
        a1, c1 = _conv_fwd(x_in, p[prefix + ".conv1.w"], p[prefix + ".conv1.b"], stride, 1)
        r1 = np.maximum(a1, 0.0)
        a2, c2 = _conv_fwd(r1, p[prefix + ".conv2.w"], p[prefix + ".conv2.b"], 1, 1)
        if has_proj:
            skip, cp = _conv_fwd(x_in, p[prefix + ".proj.w"], p[prefix + ".proj.b"], stride, 0)
        else:
            skip, cp = x_in, None
        pre = a2 + skip
        h = np.maximum(pre, 0.0)
        caches.append((prefix, c1, a1, c2, cp, pre))
    spatial = h.shape[2] * h.shape[3]
    g = h.mean(axis=(2, 3))
    z1 = g @ p["head.fc1.w"].T + p["head.fc1.b"]
    r = np.maximum(z1, 0.0)
    logits = (r @ p["head.fc2.w"].T + p["head.fc2.b"])[:, 0]
    if not want_cache:
        return logits, None
    caches.append(("head", h.shape, spatial, g, z1, r))
    return logits, caches


def _backward_batch(model: BranchModel, caches, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    grads: dict[str, np.ndarray] = {}
    _, h_shape, spatial, g, z1, r = caches[-1]
    dz2 = dlogits[:, None]
    grads["head.fc2.w"] = dz2.T @ r
    grads["head.fc2.b"] = dz2.sum(axis=0)
    dr = dz2 @ p["head.fc2.w"]
    dz1 = dr * (z1 > 0.0)
    grads["head.fc1.w"] = dz1.T @ g
    grads["head.fc1.b"] = dz1.sum(axis=0)
    dg = dz1 @ p["head.fc1.w"]
    dh = np.broadcast_to(dg[:, :, None, None], h_shape) / spatial
    for entry in reversed(caches[:-1]):
        if entry[0] == "stem":
            _, c_stem, a = entry
            da = dh * (a > 0.0)
            _, dw, db = _conv_bwd(da, p["stem.w"], c_stem)
            grads["stem.w"] = dw
            grads["stem.b"] = db
            continue
        prefix, c1, a1, c2, cp, pre = entry
        dpre = dh * (pre > 0.0)
        dr1, dw2, db2 = _conv_bwd(dpre, p[prefix + ".conv2.w"], c2)
        grads[prefix + ".conv2.w"] = dw2
        grads[prefix + ".conv2.b"] = db2
        da1 = dr1 * (a1 > 0.0)
        dx, dw1, db1 = _conv_bwd(da1, p[prefix + ".conv1.w"], c1)
        grads[prefix + ".conv1.w"] = dw1
        grads[prefix + ".conv1.b"] = db1
        if cp is not None:
            dskip, dwp, dbp = _conv_bwd(dpre, p[prefix + ".proj.w"], cp)
            grads[prefix + ".proj.w"] = dwp
            grads[prefix + ".proj.b"] = dbp
            dh = dx + dskip
        else:
            dh = dx + dpre
    return grads


def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def _check_input(model: BranchModel, enc: EncodedInput) -> np.ndarray:
    if enc.kind is not model.modality:
        raise ModalityMismatch(
            f"model expects {model.modality.value}, got {enc.kind.value}"
        )
    s = model.config.input_size
    want = (channels_for(model.modality), s, s)
    if enc.data.shape != want:
        raise ShapeMismatch(f"expected input of shape {want}, got {enc.data.shape}")
    return np.asarray(enc.data, dtype=np.float64)


def stack_batch(model: BranchModel, inputs: list[EncodedInput]) -> np.ndarray:
    return np.stack([_check_input(model, e) for e in inputs], axis=0)


def forward(model: BranchModel, enc: EncodedInput) -> Prediction:
    x = _check_input(model, enc)[None]
    logits, _ = _forward_batch(model, x)
    z = float(logits[0])
    return Prediction(prob=float(sigmoid(z)), logit=z)


def forward_batch(model: BranchModel, inputs: list[EncodedInput]) -> np.ndarray:
    """Probabilities for a list of inputs in one pass."""
    if not inputs:
        raise EmptyList("no inputs to score")
    logits, _ = _forward_batch(model, stack_batch(model, inputs))
    return sigmoid(logits)


def bce_loss_and_dlogits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy with probability clamping, plus d(loss)/d(logit).

    The gradient is exact for the clamped graph: samples whose probability
    sits inside the clamp get zero gradient, matching what finite
    differences of this very function produce.
    """
    n = logits.shape[0]
    p = sigmoid(logits)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-np.mean(labels * np.log(pc) + (1.0 - labels) * np.log(1.0 - pc)))
    interior = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    dlogits = np.where(interior, (p - labels) / n, 0.0)
    return loss, dlogits


def loss_and_grad(
    model: BranchModel, batch: list[tuple[EncodedInput, int]]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE over the batch and exact gradients for every parameter."""
    if not batch:
        raise EmptyBatch("empty training batch")
    inputs = [enc for enc, _ in batch]
    labels = np.array([float(y) for _, y in batch])
    if not np.isin(labels, (0.0, 1.0)).all():
        raise InvalidConfig("labels must be 0 or 1")
    x = stack_batch(model, inputs)
    logits, caches = _forward_batch(model, x, want_cache=True)
    loss, dlogits = bce_loss_and_dlogits(logits, labels)
    grads = _backward_batch(model, caches, dlogits)
    return loss, grads


def score_video(model: BranchModel, inputs: list[EncodedInput]) -> float:
    """Pool per-input outputs into one branch-level video score in [0, 1]."""
    if not inputs:
        raise EmptyList("cannot score a video with no encoded inputs")
    logits, _ = _forward_batch(model, stack_batch(model, inputs))
    agg = model.config.aggregation
    if agg is Aggregation.MEAN_LOGIT:
        return float(sigmoid(float(np.mean(logits))))
    probs = sigmoid(logits)
    if agg is Aggregation.MAX:
        return float(np.max(probs))
    return float(np.mean(probs))


def param_checksum(params: dict[str, np.ndarray]) -> float:
    """Cheap order-independent fingerprint for determinism tests."""
    return float(sum(np.abs(v).sum() for v in params.values()))
