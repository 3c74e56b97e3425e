"""Seeded synthetic meeting corpus and feature normalisation.

Each speaker owns a random spectral template drawn from a shared low-rank
subspace, so unseen speakers resemble the training population. A frame is the template scaled
by a positive log-normal energy envelope plus AR(1) noise, so the speaker
identity survives per-segment mean removal as the dominant direction of
frame-to-frame variation. Overlapped speech averages two speakers' streams.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .numerics import ContractError
from .pipeline import (
    FRAME_STEP,
    Segment,
    reference_annotation,
    write_features,
    write_manifest,
    write_rttm,
)

AR_COEF = 0.9
ENVELOPE_STD = 0.5


@dataclass(frozen=True)
class CorpusConfig:
    num_speakers: int = 40
    num_test_speakers: int = 8
    feature_dim: int = 40
    meetings: int = 20
    segments_per_meeting: int = 20
    speakers_per_meeting: int = 4
    test_meetings: int = 4
    test_segments_per_meeting: int = 20
    segment_seconds: tuple = (2.0, 6.0)
    max_gap_seconds: float = 0.5
    overlap_fraction: float = 0.1
    speaker_separation: float = 1.0
    # speaker templates live in a shared subspace of this rank; 0 means full rank
    speaker_rank: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segment_seconds", tuple(float(s) for s in self.segment_seconds))
        if self.num_speakers < 2:
            raise ContractError("num_speakers must be >= 2")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ContractError("overlap_fraction must lie in [0, 1)")
        lo, hi = self.segment_seconds
        if not 0 < lo <= hi:
            raise ContractError("segment_seconds must be a positive (min, max) range")
        if self.speakers_per_meeting < 2:
            raise ContractError("speakers_per_meeting must be >= 2")
        if self.speakers_per_meeting > min(self.num_speakers, max(self.num_test_speakers, 2)):
            raise ContractError("speakers_per_meeting exceeds a speaker pool")
        if self.speaker_separation <= 0:
            raise ContractError("speaker_separation must be positive")


@dataclass
class Corpus:
    train: list
    validation: list
    test: list
    train_speakers: list
    test_speakers: list
    templates: dict


@dataclass(frozen=True)
class NormalisationStats:
    global_variance: np.ndarray


def _ar1(rng, n, dim, scale):
    drive = rng.normal(scale=scale * math.sqrt(1.0 - AR_COEF ** 2), size=(n, dim))
    drive[0] = rng.normal(scale=scale, size=dim)  # stationary start
    return lfilter([1.0], [1.0, -AR_COEF], drive, axis=0)


def speaker_stream(rng, template, n, separation):
    envelope = np.exp(_ar1(rng, n, 1, ENVELOPE_STD))
    return envelope * template + _ar1(rng, n, template.shape[0], 1.0 / separation)


def _meeting(rng, cfg, name, pool, templates, n_segments, split):
    chosen = [pool[i] for i in rng.choice(len(pool), cfg.speakers_per_meeting, replace=False)]
    lo, hi = cfg.segment_seconds
    t = 0.0
    prev = None
    segs = []
    for i in range(n_segments):
        spk = chosen[rng.integers(len(chosen))]
        while spk == prev:
            spk = chosen[rng.integers(len(chosen))]
        prev = spk
        n = max(1, int(round(rng.uniform(lo, hi) / FRAME_STEP)))
        frames = speaker_stream(rng, templates[spk], n, cfg.speaker_separation)
        segs.append(Segment(name, round(t, 2), round(n * FRAME_STEP, 2), frames, [spk],
                            segment_id=f"{name}_{i:04d}", split=split))
        t += n * FRAME_STEP + round(rng.uniform(0.0, cfg.max_gap_seconds), 2)
    return segs, chosen


def _add_overlap(rng, cfg, segments, meeting_speakers, templates):
    n_over = int(round(cfg.overlap_fraction * len(segments)))
    for idx in sorted(rng.permutation(len(segments))[:n_over]):
        seg = segments[idx]
        others = [s for s in meeting_speakers[seg.meeting] if s not in seg.speakers]
        second = others[rng.integers(len(others))]
        extra = speaker_stream(rng, templates[second], seg.frames.shape[0], cfg.speaker_separation)
        seg.frames = 0.5 * (seg.frames + extra)
        seg.speakers = [seg.speakers[0], second]


def generate_corpus(cfg: CorpusConfig) -> Corpus:
    rng = np.random.default_rng(cfg.seed)
    train_ids = [f"spk{i:03d}" for i in range(cfg.num_speakers)]
    test_ids = [f"tst{i:03d}" for i in range(cfg.num_test_speakers)]
    rank = cfg.speaker_rank or cfg.feature_dim
    basis = rng.normal(size=(rank, cfg.feature_dim)) / math.sqrt(rank)
    templates = {s: rng.normal(size=rank) @ basis for s in train_ids + test_ids}

    train, meeting_speakers = [], {}
    for m in range(cfg.meetings):
        # cycle the pool so every training speaker appears
        start = (m * cfg.speakers_per_meeting) % cfg.num_speakers
        pool = [train_ids[(start + j) % cfg.num_speakers] for j in range(cfg.speakers_per_meeting)]
        segs, chosen = _meeting(rng, cfg, f"train{m:03d}", pool, templates,
                                cfg.segments_per_meeting, "train")
        train += segs
        meeting_speakers[f"train{m:03d}"] = chosen
    _add_overlap(rng, cfg, train, meeting_speakers, templates)

    test = []
    for m in range(cfg.test_meetings):
        segs, chosen = _meeting(rng, cfg, f"test{m:03d}", test_ids, templates,
                                cfg.test_segments_per_meeting, "test")
        test += segs
        meeting_speakers[f"test{m:03d}"] = chosen
    _add_overlap(rng, cfg, test, meeting_speakers, templates)

    # last 10% of each training speaker's segments (keyed by first speaker) go to validation
    by_spk = {}
    for seg in train:
        by_spk.setdefault(seg.speakers[0], []).append(seg)
    val_ids = set()
    for segs in by_spk.values():
        n_val = int(round(0.1 * len(segs)))
        val_ids.update(s.segment_id for s in segs[len(segs) - n_val:])
    validation = [s for s in train if s.segment_id in val_ids]
    for s in validation:
        s.split = "validation"
    train = [s for s in train if s.segment_id not in val_ids]
    return Corpus(train, validation, test, train_ids, test_ids, templates)


def compute_stats(segments) -> NormalisationStats:
    """Per-dimension variance of segment-mean-removed frames over ``segments``."""
    centred = np.concatenate([s.frames - s.frames.mean(axis=0) for s in segments])
    return NormalisationStats(centred.var(axis=0))


def normalise_features(segment: Segment, stats: NormalisationStats) -> Segment:
    var = np.asarray(stats.global_variance, dtype=np.float64)
    if np.any(~(var > 0)):
        raise ContractError(f"feature dimension {int(np.argmin(var > 0))} has zero variance")
    f = np.asarray(segment.frames, dtype=np.float64)
    out = (f - f.mean(axis=0)) / np.sqrt(var)
    return Segment(segment.meeting, segment.onset, segment.duration, out, list(segment.speakers),
                   segment.channel, segment.segment_id, segment.split)


def trim_end_silence(segment: Segment) -> Segment:
    """Hook for end-silence trimming; synthetic speech has none, so a no-op."""
    return segment


def save_stats(path, stats: NormalisationStats):
    with open(path, "w") as fh:
        json.dump({"global_variance": [float(v) for v in stats.global_variance]}, fh)


def load_stats(path) -> NormalisationStats:
    with open(path) as fh:
        return NormalisationStats(np.array(json.load(fh)["global_variance"], dtype=np.float64))


def write_corpus(corpus: Corpus, cfg: CorpusConfig, out_dir):
    """Feature files, ``manifest.json``, ``stats.json``, ``config.json`` and
    one reference RTTM per test meeting (plus ``rttm/test.rttm`` with all)."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    (out / "rttm").mkdir(exist_ok=True)
    entries = []
    for seg in corpus.train + corpus.validation + corpus.test:
        rel = f"feats/{seg.segment_id}.feat"
        write_features(out / rel, seg.frames)
        entries.append({
            "meeting": seg.meeting, "segment": seg.segment_id, "onset": seg.onset,
            "duration": seg.duration, "speakers": seg.speakers, "path": rel,
            "split": seg.split, "channel": seg.channel,
        })
    write_manifest(out / "manifest.json", entries)
    save_stats(out / "stats.json", compute_stats(corpus.train))
    with open(out / "config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=1)
    ref = reference_annotation(corpus.test)
    for m in ref.meetings():
        write_rttm(type(ref)(ref.for_meeting(m)), out / "rttm" / f"{m}.rttm")
    write_rttm(ref, out / "rttm" / "test.rttm")
