"""Epoch loop around :func:`glmdiar.speaker_net.train_step`."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .margin_loss import MODIFIED_SOFTMAX, MarginParams, MarginSchedule, eta_for_steps
from .pipeline import slide_windows
from .speaker_net import (
    NetworkConfig,
    TrainBatch,
    TrainWindow,
    classify,
    init_model,
    train_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 200
    lr: float = 1e-2
    lr_decay: float = 0.5
    lr_decay_every: int = 5
    warmup_epochs: int = 1
    margins: MarginParams = MODIFIED_SOFTMAX
    # None: choose eta so margins reach 95% of target at 75% of the post-warm-up steps
    eta: float | None = None
    overlap_gating: bool = True
    approx_mode: bool = False
    window_s: float = 2.0
    shift_s: float = 1.0
    seed: int = 0


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    mean_loss: float
    accuracy: float
    val_accuracy: float
    m1: float
    m2: float
    m3: float
    steps: int


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)

    def as_rows(self):
        return [vars(e).copy() for e in self.epochs]


def segment_windows(segments, speaker_index, window_s=2.0, shift_s=1.0):
    """``(frames, class ids, overlap flag)`` per window."""
    out = []
    for seg in segments:
        ids = [speaker_index[s] for s in seg.speakers]
        for w in slide_windows(seg, window_s, shift_s):
            out.append((w.frames, ids, seg.is_overlap))
    return out


def expand_for_training(windows):
    """One training sample per (window, speaker); overlap windows recur per speaker."""
    return [TrainWindow(f, t, ov) for f, ids, ov in windows for t in ids]


def accuracy(windows, model, config, chunk=256):
    if not windows:
        return math.nan
    hits = 0
    for i in range(0, len(windows), chunk):
        part = windows[i:i + chunk]
        pred = classify(np.stack([w[0] for w in part]), model, config)
        hits += sum(int(p in w[1]) for p, w in zip(pred, part))
    return hits / len(windows)


def resolve_eta(cfg: TrainConfig, n_train_samples: int) -> float:
    if cfg.eta is not None:
        return cfg.eta
    steps_per_epoch = max(1, math.ceil(n_train_samples / cfg.batch_size))
    ramp = max(1, int(0.75 * steps_per_epoch * max(cfg.epochs - cfg.warmup_epochs, 1)))
    return eta_for_steps(ramp)


def fit(net_cfg: NetworkConfig, cfg: TrainConfig, train_windows, val_windows=(), model=None,
        head=None, on_epoch=None):
    """Train from scratch (or from ``model``). Returns ``(model, schedule, report)``.

    Warm-up epochs pin the margins at the modified-softmax setting and do not
    advance the schedule.
    """
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = init_model(net_cfg, rng)
    samples = expand_for_training(train_windows)
    schedule = MarginSchedule(cfg.margins, resolve_eta(cfg, len(samples)))
    pinned = MarginSchedule(MODIFIED_SOFTMAX, 0.5)
    report = TrainReport()
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)
        warm = epoch < cfg.warmup_epochs
        order = rng.permutation(len(samples))
        losses, correct, count, steps = 0.0, 0, 0, 0
        for i in range(0, len(order), cfg.batch_size):
            batch = TrainBatch([samples[j] for j in order[i:i + cfg.batch_size]])
            if warm:
                model, _, m = train_step(batch, model, pinned, lr, net_cfg,
                                         approx=cfg.approx_mode, head=head)
            else:
                model, schedule, m = train_step(batch, model, schedule, lr, net_cfg,
                                                approx=cfg.approx_mode,
                                                overlap_gating=cfg.overlap_gating, head=head)
            losses += m["loss"] * m["count"]
            correct += m["correct"]
            count += m["count"]
            steps += 1
        live = MODIFIED_SOFTMAX if warm else schedule.live
        em = EpochMetrics(epoch + 1, lr, losses / max(count, 1), correct / max(count, 1),
                          accuracy(list(val_windows), model, net_cfg), live.m1, live.m2, live.m3,
                          schedule.step_count)
        report.epochs.append(em)
        log.info("epoch %d loss %.4f acc %.3f val %.3f margins (%.4f, %.4f, %.4f)",
                 em.epoch, em.mean_loss, em.accuracy, em.val_accuracy, em.m1, em.m2, em.m3)
        if on_epoch is not None:
            on_epoch(em)
    return model, schedule, report
