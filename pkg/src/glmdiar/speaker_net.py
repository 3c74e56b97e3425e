"""Speaker embedding network: frame-level TDNN, multi-head self-attentive
pooling, a ReLU projection to the embedding, and a bias-free classifier with
unit-norm rows trained under GLM-Softmax.

All tensors are float64 numpy arrays and backpropagation is written out by
hand. Batched arrays are laid out ``[batch, frames, features]``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .margin_loss import (
    MODIFIED_SOFTMAX,
    MarginParams,
    MarginSchedule,
    effective_params,
    glm_softmax_batch,
    schedule_step,
)
from .numerics import ContractError

DEFAULT_CONTEXTS = ((-2, -1, 0, 1, 2), (-2, 0, 2), (-3, 0, 3), (0,), (0,))
CHECKPOINT_MAGIC = b"GLMD"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    feature_dim: int = 40
    tdnn_layer_contexts: tuple = DEFAULT_CONTEXTS
    tdnn_hidden_dim: int = 256
    frame_output_dim: int = 128
    attention_heads: int = 5
    attention_hidden_dim: int = 128
    embedding_dim: int = 128
    penalty_weight: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "tdnn_layer_contexts",
                           tuple(tuple(int(o) for o in ctx) for ctx in self.tdnn_layer_contexts))
        if self.attention_heads < 1:
            raise ContractError("attention_heads must be >= 1")
        if self.num_classes < 2:
            raise ContractError("num_classes must be >= 2")
        if self.embedding_dim != self.frame_output_dim:
            raise ContractError("embedding_dim must equal frame_output_dim")
        if not self.tdnn_layer_contexts or any(not c for c in self.tdnn_layer_contexts):
            raise ContractError("every TDNN layer needs a non-empty context")

    @classmethod
    def small(cls, num_classes, feature_dim=40, **overrides):
        """Desk-scale preset."""
        opts = dict(
            num_classes=num_classes,
            feature_dim=feature_dim,
            tdnn_layer_contexts=((-2, 0, 2), (-2, 0, 2), (0,)),
            tdnn_hidden_dim=48,
            frame_output_dim=32,
            attention_heads=5,
            attention_hidden_dim=16,
            embedding_dim=32,
        )
        opts.update(overrides)
        return cls(**opts)

    @property
    def receptive_field(self):
        return 1 + sum(max(c) - min(c) for c in self.tdnn_layer_contexts)

    def layer_dims(self):
        """(input width, output width) per TDNN layer."""
        dims = []
        din = self.feature_dim
        n = len(self.tdnn_layer_contexts)
        for i, ctx in enumerate(self.tdnn_layer_contexts):
            dout = self.frame_output_dim if i == n - 1 else self.tdnn_hidden_dim
            dims.append((len(ctx) * din, dout))
            din = dout
        return dims

    def to_dict(self):
        d = asdict(self)
        d["tdnn_layer_contexts"] = [list(c) for c in self.tdnn_layer_contexts]
        return d


@dataclass
class ModelState:
    """Named parameters in declaration order (the checkpoint order)."""

    params: dict

    def copy(self):
        return ModelState({k: v.copy() for k, v in self.params.items()})

    def __getitem__(self, name):
        return self.params[name]

    @property
    def classifier(self):
        return self.params["classifier.weight"]


def param_shapes(config: NetworkConfig):
    shapes = {}
    for i, (din, dout) in enumerate(config.layer_dims()):
        shapes[f"tdnn{i}.weight"] = (din, dout)
        shapes[f"tdnn{i}.bias"] = (dout,)
    d, da, h = config.frame_output_dim, config.attention_hidden_dim, config.attention_heads
    shapes["att.hidden.weight"] = (d, da)
    shapes["att.hidden.bias"] = (da,)
    shapes["att.score.weight"] = (da, h)
    shapes["proj.weight"] = (h * d, config.embedding_dim)
    shapes["proj.bias"] = (config.embedding_dim,)
    shapes["classifier.weight"] = (config.num_classes, config.embedding_dim)
    return shapes


def init_model(config: NetworkConfig, seed) -> ModelState:
    """Glorot-uniform weights, zero biases, unit-norm classifier rows."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
            continue
        limit = math.sqrt(6.0 / (shape[0] + shape[1]))
        params[name] = rng.uniform(-limit, limit, size=shape)
    w = params["classifier.weight"]
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return ModelState(params)


def zero_model(config: NetworkConfig) -> ModelState:
    return ModelState({n: np.zeros(s) for n, s in param_shapes(config).items()})


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _as_batch(frames):
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise ContractError(f"frames must be [frames, dim] or [batch, frames, dim], got {x.shape}")
    return x, False


def _splice(h, ctx):
    lo = min(ctx)
    t_out = h.shape[1] - (max(ctx) - lo)
    return np.concatenate([h[:, o - lo:o - lo + t_out, :] for o in ctx], axis=2)


def _tdnn(x, model, config, cache=None):
    if x.shape[2] != config.feature_dim:
        raise ContractError(f"expected {config.feature_dim}-dim features, got {x.shape[2]}")
    if x.shape[1] < config.receptive_field:
        raise ContractError(
            f"need at least {config.receptive_field} frames for the TDNN, got {x.shape[1]}")
    h = x
    for i, ctx in enumerate(config.tdnn_layer_contexts):
        spliced = _splice(h, ctx)
        pre = spliced @ model[f"tdnn{i}.weight"] + model[f"tdnn{i}.bias"]
        h = np.maximum(pre, 0.0)
        if cache is not None:
            cache.append((spliced, pre))
    return h


def _softmax_frames(scores):
    # scores [B, T, K] -> attention [B, K, T]
    s = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(s)
    return np.transpose(e / e.sum(axis=1, keepdims=True), (0, 2, 1))


def _pool(h, model, config):
    hid = np.tanh(h @ model["att.hidden.weight"] + model["att.hidden.bias"])
    attn = _softmax_frames(hid @ model["att.score.weight"])
    pooled = attn @ h  # [B, K, D]
    flat = pooled.reshape(h.shape[0], -1)
    pre = flat @ model["proj.weight"] + model["proj.bias"]
    return np.maximum(pre, 0.0), attn, hid, flat, pre


def tdnn_forward(frames, model: ModelState, config: NetworkConfig):
    x, single = _as_batch(frames)
    h = _tdnn(x, model, config)
    return h[0] if single else h


def attentive_pool(frame_acts, model: ModelState, config: NetworkConfig):
    """Pool frame activations into an embedding.

    Returns ``(embedding, annotation)``; annotation is ``[heads, frames]`` with
    rows summing to one.
    """
    h, single = _as_batch(frame_acts)
    if h.shape[1] == 0:
        raise ContractError("attentive_pool needs at least one frame")
    emb, attn, *_ = _pool(h, model, config)
    return (emb[0], attn[0]) if single else (emb, attn)


def extract_embedding(frames, model: ModelState, config: NetworkConfig):
    x, single = _as_batch(frames)
    emb, *_ = _pool(_tdnn(x, model, config), model, config)
    return emb[0] if single else emb


def attention_penalty(annotation):
    """``||A A^T - I||_F^2`` for a ``[heads, frames]`` annotation matrix."""
    a = np.asarray(annotation, dtype=np.float64)
    m = a @ a.T - np.eye(a.shape[0])
    return float(np.sum(m * m))


def _penalty_batch(attn):
    m = attn @ np.transpose(attn, (0, 2, 1)) - np.eye(attn.shape[1])
    return np.sum(m * m, axis=(1, 2)), 4.0 * (m @ attn)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

@dataclass
class BatchResult:
    objective: float
    losses: np.ndarray
    penalties: np.ndarray
    thetas: np.ndarray
    logits_correct: np.ndarray
    grads: dict


def glm_head(emb, classifier, targets, margins, approx=False):
    """Default loss head. ``margins`` is a ``[B, 3]`` array of (m1, m2, m3)."""
    losses, _, thetas, gx, gw = glm_softmax_batch(
        emb, classifier, targets, margins[:, 0], margins[:, 1], margins[:, 2], approx=approx)
    return losses, thetas, gx, gw


def batch_gradients(frames, targets, margins, model: ModelState, config: NetworkConfig,
                    approx=False, head=None) -> BatchResult:
    """Mean GLM-Softmax loss plus weighted attention penalty, and its gradient.

    ``head(emb, classifier, targets, margins)`` may replace the GLM-Softmax
    head; it must return ``(losses, thetas, grad_emb, grad_classifier)`` with
    per-sample gradients.
    """
    x = np.asarray(frames, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    margins = np.asarray(margins, dtype=np.float64).reshape(len(targets), 3)
    b = x.shape[0]
    cache = []
    h = _tdnn(x, model, config, cache)
    emb, attn, hid, flat, pre = _pool(h, model, config)
    W = model.classifier
    if head is None:
        losses, thetas, g_emb, g_cls = glm_head(emb, W, targets, margins, approx)
    else:
        losses, thetas, g_emb, g_cls = head(emb, W, targets, margins)
    pens, g_pen = _penalty_batch(attn)
    lam = config.penalty_weight
    objective = float(losses.mean() + lam * pens.mean())

    grads = {}
    grads["classifier.weight"] = g_cls / b
    d_pre = (g_emb / b) * (pre > 0.0)
    grads["proj.weight"] = flat.T @ d_pre
    grads["proj.bias"] = d_pre.sum(axis=0)
    d_pooled = (d_pre @ model["proj.weight"].T).reshape(b, config.attention_heads, -1)
    d_attn = d_pooled @ np.transpose(h, (0, 2, 1)) + (lam / b) * g_pen
    dh = np.transpose(attn, (0, 2, 1)) @ d_pooled
    d_scores = attn * (d_attn - np.sum(attn * d_attn, axis=2, keepdims=True))
    d_scores = np.transpose(d_scores, (0, 2, 1))  # [B, T, K]
    grads["att.score.weight"] = np.einsum("btj,btk->jk", hid, d_scores)
    d_hid = d_scores @ model["att.score.weight"].T
    d_hpre = d_hid * (1.0 - hid * hid)
    grads["att.hidden.weight"] = np.einsum("btd,bta->da", h, d_hpre)
    grads["att.hidden.bias"] = d_hpre.sum(axis=(0, 1))
    dh = dh + d_hpre @ model["att.hidden.weight"].T

    for i in range(len(config.tdnn_layer_contexts) - 1, -1, -1):
        ctx = config.tdnn_layer_contexts[i]
        spliced, pre_i = cache[i]
        d_pre_i = dh * (pre_i > 0.0)
        grads[f"tdnn{i}.weight"] = np.einsum("bti,bto->io", spliced, d_pre_i)
        grads[f"tdnn{i}.bias"] = d_pre_i.sum(axis=(0, 1))
        if i == 0:
            break
        d_spliced = d_pre_i @ model[f"tdnn{i}.weight"].T
        t_in = cache[i - 1][1].shape[1]
        dh = np.zeros((b, t_in, d_spliced.shape[2] // len(ctx)))
        width = dh.shape[2]
        lo = min(ctx)
        t_out = d_spliced.shape[1]
        for j, o in enumerate(ctx):
            dh[:, o - lo:o - lo + t_out, :] += d_spliced[:, :, j * width:(j + 1) * width]

    correct = np.argmax(emb @ W.T, axis=1) == targets
    ordered = {name: grads[name] for name in model.params}
    return BatchResult(objective, losses, pens, thetas, correct, ordered)


# ---------------------------------------------------------------------------
# training step
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainWindow:
    frames: np.ndarray
    target: int
    overlap: bool = False


@dataclass
class TrainBatch:
    windows: list = field(default_factory=list)

    def __len__(self):
        return len(self.windows)

    def arrays(self):
        frames = np.stack([w.frames for w in self.windows])
        targets = np.array([w.target for w in self.windows], dtype=np.int64)
        overlap = np.array([w.overlap for w in self.windows], dtype=bool)
        return frames, targets, overlap


def renormalise_classifier(model: ModelState):
    w = model.params["classifier.weight"]
    norms = np.linalg.norm(w, axis=1, keepdims=True)
    w /= np.where(norms > 0.0, norms, 1.0)


def train_step(batch: TrainBatch, model: ModelState, schedule: MarginSchedule, lr: float,
               config: NetworkConfig, approx=False, overlap_gating=True, head=None):
    """One plain gradient-descent update.

    Overlap windows are trained with the modified-softmax setting when
    ``overlap_gating`` is on. The classifier rows are renormalised after the
    update and the margin schedule advances once.
    """
    if len(batch) == 0:
        raise ContractError("empty training batch")
    frames, targets, overlap = batch.arrays()
    live = schedule.live
    margins = np.array([
        effective_params(bool(ov) and overlap_gating, schedule).as_tuple() for ov in overlap])
    res = batch_gradients(frames, targets, margins, model, config, approx=approx, head=head)
    bad = ~np.isfinite(res.losses)
    if bad.any() or not math.isfinite(res.objective):
        i = int(np.argmax(bad)) if bad.any() else 0
        raise TrainingDivergedError(
            f"non-finite loss at window {i}: theta_t={float(res.thetas[i]):.6g}, live margins {live}")
    new = model.copy()
    if lr != 0.0:
        for name, g in res.grads.items():
            new.params[name] -= lr * g
        renormalise_classifier(new)
    metrics = {
        "objective": res.objective,
        "loss": float(res.losses.mean()),
        "penalty": float(res.penalties.mean()),
        "accuracy": float(res.logits_correct.mean()),
        "correct": int(res.logits_correct.sum()),
        "count": len(batch),
    }
    return new, schedule_step(schedule), metrics


def classify(frames, model: ModelState, config: NetworkConfig):
    emb = extract_embedding(frames, model, config)
    return np.argmax(np.atleast_2d(emb) @ model.classifier.T, axis=1)


# ---------------------------------------------------------------------------
# checkpoint
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: ModelState, config: NetworkConfig, extra=None):
    """Write ``GLMD`` magic, u32 version, u32-length JSON config block, then
    every parameter tensor as little-endian float64 in declaration order."""
    block = {"network": config.to_dict(), "extra": extra or {}}
    payload = json.dumps(block, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for name in param_shapes(config):
            fh.write(np.ascontiguousarray(model[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, config, extra)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a GLMD checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    block = json.loads(data[12:12 + n].decode("utf-8"))
    config = NetworkConfig(**block["network"])
    offset = 12 + n
    params = {}
    for name, shape in param_shapes(config).items():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise ValueError(f"{path}: truncated at parameter {name}")
        params[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return ModelState(params), config, block.get("extra", {})


__all__ = [
    "NetworkConfig", "ModelState", "TrainWindow", "TrainBatch", "BatchResult",
    "TrainingDivergedError", "init_model", "zero_model", "tdnn_forward", "attentive_pool",
    "attention_penalty", "extract_embedding", "batch_gradients", "train_step", "classify",
    "save_checkpoint", "load_checkpoint", "MODIFIED_SOFTMAX", "MarginParams",
]
