import numpy as np
import pytest

from glmdiar.margin_loss import MarginParams, steps_to_fraction
from glmdiar.speaker_net import NetworkConfig
from glmdiar.training import TrainConfig, expand_for_training, fit, resolve_eta


def toy_windows(rng, n=40, classes=3, frames=12, dim=4):
    centres = rng.normal(size=(classes, dim)) * 2
    out = []
    for i in range(n):
        c = i % classes
        ov = i % 10 == 9
        ids = [c, (c + 1) % classes] if ov else [c]
        out.append((centres[c] + rng.normal(size=(frames, dim)), ids, ov))
    return out


NET = NetworkConfig(num_classes=3, feature_dim=4, tdnn_layer_contexts=((-1, 0, 1), (0,)),
                    tdnn_hidden_dim=8, frame_output_dim=6, attention_heads=2,
                    attention_hidden_dim=4, embedding_dim=6)


def test_overlap_windows_recur_per_speaker(rng):
    samples = expand_for_training(toy_windows(rng, 10))
    assert len(samples) == 11
    ov = [s for s in samples if s.overlap]
    assert [s.target for s in ov] == [0, 1] and ov[0].frames is ov[1].frames


def test_auto_eta_reaches_95_percent_at_three_quarters():
    cfg = TrainConfig(epochs=5, batch_size=10, warmup_epochs=1)
    eta = resolve_eta(cfg, 100)
    assert steps_to_fraction(eta) == pytest.approx(0.75 * 10 * 4, abs=1)


def test_warmup_pins_margins_and_schedule(rng):
    cfg = TrainConfig(epochs=3, batch_size=8, lr=0.1, warmup_epochs=1,
                      margins=MarginParams(1.1, 0, 0), eta=0.05)
    _, schedule, report = fit(NET, cfg, toy_windows(rng))
    first, second = report.epochs[0], report.epochs[1]
    assert (first.m1, first.steps) == (1.0, 0)
    assert second.steps == 6 and second.m1 == pytest.approx(1.1 - 0.1 * 0.95 ** 6)
    assert schedule.step_count == 12


def test_lr_step_decay(rng):
    cfg = TrainConfig(epochs=4, batch_size=20, lr=0.1, lr_decay=0.5, lr_decay_every=2)
    _, _, report = fit(NET, cfg, toy_windows(rng))
    assert [e.lr for e in report.epochs] == [0.1, 0.1, 0.05, 0.05]


def test_identical_reports(rng):
    data = toy_windows(rng)
    cfg = TrainConfig(epochs=2, batch_size=8, lr=0.1, margins=MarginParams(1.05, 0.08, 0.02))
    a = fit(NET, cfg, data, data[:10])[2].as_rows()
    b = fit(NET, cfg, data, data[:10])[2].as_rows()
    assert a == b


def test_learns_toy_task(rng):
    data = toy_windows(rng, 60)
    cfg = TrainConfig(epochs=6, batch_size=8, lr=0.2, margins=MarginParams(1.05, 0.08, 0.02))
    _, _, report = fit(NET, cfg, data, data)
    assert report.epochs[-1].mean_loss < report.epochs[0].mean_loss
    assert report.epochs[-1].val_accuracy > 0.8


def test_on_epoch_callback(rng):
    seen = []
    fit(NET, TrainConfig(epochs=2, batch_size=16), toy_windows(rng), on_epoch=seen.append)
    assert [e.epoch for e in seen] == [1, 2]
