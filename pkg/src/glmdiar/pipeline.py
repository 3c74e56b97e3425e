"""Oracle-segmented diarisation: windows, embeddings, clustering, RTTM I/O
and speaker-error-rate scoring."""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import ClusteringConfig, canonical_labels, cluster_windows, relabel_segments
from .numerics import ContractError

FRAME_STEP = 0.01
FEATURE_MAGIC = b"FEAT"
FEATURE_VERSION = 1
OTHER_RTTM_TYPES = {
    "SPKR-INFO", "SEGMENT", "LEXEME", "NON-LEX", "NON-SPEECH", "SU", "A/P", "IP",
    "CB", "EDIT", "FILLER", "NOSCORE", "NORTMETADATA",
}


class RTTMFormatError(ValueError):
    pass


@dataclass
class Segment:
    meeting: str
    onset: float
    duration: float
    frames: np.ndarray
    speakers: list
    channel: str = "1"
    segment_id: str = ""
    split: str = ""

    def __post_init__(self):
        if not self.duration > 0:
            raise ContractError(f"segment {self.segment_id!r} has non-positive duration")

    @property
    def is_overlap(self):
        return len(self.speakers) >= 2


@dataclass(frozen=True)
class Window:
    start_frame: int
    end_frame: int
    onset: float
    frames: np.ndarray = field(repr=False, compare=False)


def slide_windows(segment: Segment, window_s=2.0, shift_s=1.0):
    """Full windows at 0, shift, 2*shift, ...; a segment shorter than one window
    yields a single window padded by repeating its last frame."""
    if window_s <= 0 or shift_s <= 0:
        raise ContractError("window and shift must be positive")
    frames = np.asarray(segment.frames)
    n = frames.shape[0]
    if n == 0:
        raise ContractError(f"segment {segment.segment_id!r} has no frames")
    wf = int(round(window_s / FRAME_STEP))
    sf = int(round(shift_s / FRAME_STEP))
    if n < wf:
        pad = np.repeat(frames[-1:], wf - n, axis=0)
        return [Window(0, n, segment.onset, np.concatenate([frames, pad]))]
    out = []
    for start in range(0, n - wf + 1, sf):
        out.append(Window(start, start + wf, segment.onset + start * FRAME_STEP,
                          frames[start:start + wf]))
    return out


# ---------------------------------------------------------------------------
# annotations and RTTM
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class SpeakerTurn:
    meeting: str
    onset: float
    duration: float
    speaker: str
    channel: str = "1"

    @property
    def offset(self):
        return self.onset + self.duration


@dataclass
class DiarisationAnnotation:
    records: list = field(default_factory=list)

    def sorted(self):
        return sorted(self.records, key=lambda r: (r.meeting, r.onset, r.duration, r.speaker, r.channel))

    def meetings(self):
        return sorted({r.meeting for r in self.records})

    def for_meeting(self, meeting):
        return [r for r in self.records if r.meeting == meeting]

    def __eq__(self, other):
        if not isinstance(other, DiarisationAnnotation):
            return NotImplemented
        return self.sorted() == other.sorted()

    def __len__(self):
        return len(self.records)


def format_rttm_line(r: SpeakerTurn) -> str:
    return (f"SPEAKER {r.meeting} {r.channel} {r.onset:.3f} {r.duration:.3f} "
            f"<NA> <NA> {r.speaker} <NA> <NA>")


def write_rttm(annotation: DiarisationAnnotation, path):
    lines = [format_rttm_line(r) for r in annotation.sorted()]
    with open(path, "w") as fh:
        fh.write("".join(line + "\n" for line in lines))


def parse_rttm(text: str, source="<string>") -> DiarisationAnnotation:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(";;"):
            continue
        fields = stripped.split()
        if fields[0] in OTHER_RTTM_TYPES:
            continue
        if fields[0] != "SPEAKER" or len(fields) < 8:
            raise RTTMFormatError(f"{source}:{lineno}: malformed RTTM line: {stripped!r}")
        try:
            onset = round(float(fields[3]), 3)
            duration = round(float(fields[4]), 3)
        except ValueError:
            raise RTTMFormatError(f"{source}:{lineno}: bad onset/duration in {stripped!r}") from None
        if not (math.isfinite(onset) and math.isfinite(duration)) or duration <= 0:
            raise RTTMFormatError(f"{source}:{lineno}: non-positive or non-finite duration")
        records.append(SpeakerTurn(fields[1], onset, duration, fields[7], fields[2]))
    return DiarisationAnnotation(records)


def read_rttm(path) -> DiarisationAnnotation:
    with open(path) as fh:
        return parse_rttm(fh.read(), str(path))


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------

@dataclass
class SERResult:
    speaker_error_time: float
    scored_time: float
    ser: float
    speaker_mapping: dict
    per_meeting: dict = field(default_factory=dict)


def _ms(t):
    return int(round(t * 1000.0))


def _meeting_overlap(ref, hyp, collar_ms):
    """Co-occurrence times (ms) between ref and hyp speakers, plus scored
    ref speaker-time (ms), outside the collars."""
    ref_spk = sorted({r.speaker for r in ref})
    hyp_spk = sorted({h.speaker for h in hyp})
    r_on = np.array([_ms(r.onset) for r in ref], dtype=np.int64)
    r_off = np.array([_ms(r.offset) for r in ref], dtype=np.int64)
    r_id = np.array([ref_spk.index(r.speaker) for r in ref], dtype=np.int64)
    h_on = np.array([_ms(h.onset) for h in hyp], dtype=np.int64)
    h_off = np.array([_ms(h.offset) for h in hyp], dtype=np.int64)
    h_id = np.array([hyp_spk.index(h.speaker) for h in hyp], dtype=np.int64)
    edges = np.unique(np.concatenate([r_on, r_off]))
    cuts = [r_on, r_off, h_on, h_off]
    if collar_ms > 0:
        cuts += [edges - collar_ms, edges + collar_ms]
    bounds = np.unique(np.concatenate(cuts))
    cooc = np.zeros((len(ref_spk), len(hyp_spk)), dtype=np.int64)
    scored = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        dur = int(b - a)
        if collar_ms > 0 and np.any((edges - collar_ms <= a) & (edges + collar_ms >= b)):
            continue
        ref_active = np.unique(r_id[(r_on <= a) & (r_off >= b)])
        if ref_active.size == 0:
            continue
        scored += dur * ref_active.size
        hyp_active = np.unique(h_id[(h_on <= a) & (h_off >= b)])
        if hyp_active.size:
            cooc[np.ix_(ref_active, hyp_active)] += dur
    return ref_spk, hyp_spk, cooc, scored


def score_ser(reference: DiarisationAnnotation, hypothesis: DiarisationAnnotation,
              collar_s: float = 0.25) -> SERResult:
    """Speaker error rate under the optimal one-to-one speaker mapping.

    Every reference speaker-second outside the +/-collar zones counts once;
    overlapped speech therefore needs each of its speakers attributed.
    """
    if collar_s < 0:
        raise ContractError("collar must be non-negative")
    ref_m, hyp_m = reference.meetings(), hypothesis.meetings()
    if ref_m != hyp_m:
        missing = sorted(set(ref_m) ^ set(hyp_m))
        raise ContractError(f"reference and hypothesis cover different meetings: {missing}")
    collar_ms = _ms(collar_s)
    total_err = total_scored = 0
    mapping = {}
    per = {}
    for m in ref_m:
        ref_spk, hyp_spk, cooc, scored = _meeting_overlap(
            reference.for_meeting(m), hypothesis.for_meeting(m), collar_ms)
        rows, cols = linear_sum_assignment(cooc, maximize=True)
        correct = int(cooc[rows, cols].sum())
        mmap = {ref_spk[r]: hyp_spk[c] for r, c in zip(rows, cols) if cooc[r, c] > 0}
        err = scored - correct
        per[m] = SERResult(err / 1000.0, scored / 1000.0,
                           err / scored if scored else math.nan, mmap)
        mapping[m] = mmap
        total_err += err
        total_scored += scored
    if total_scored == 0:
        raise ContractError("no reference speech left to score")
    return SERResult(total_err / 1000.0, total_scored / 1000.0, total_err / total_scored,
                     mapping, per)


# ---------------------------------------------------------------------------
# diarisation
# ---------------------------------------------------------------------------

def model_embedder(model, config):
    from .speaker_net import extract_embedding

    def embed(frames):
        return extract_embedding(frames, model, config)
    return embed


def diarise(meeting, embedder, clustering: ClusteringConfig = ClusteringConfig(), seed=0,
            window_s=2.0, shift_s=1.0) -> DiarisationAnnotation:
    """Label every segment of one meeting.

    ``embedder`` maps a ``[windows, frames, dim]`` batch to window embeddings
    (see :func:`model_embedder`).
    """
    if not meeting:
        return DiarisationAnnotation()
    name = meeting[0].meeting
    windows, owner = [], []
    for s, seg in enumerate(meeting):
        for w in slide_windows(seg, window_s, shift_s):
            windows.append(w.frames)
            owner.append(s)
    try:
        emb = np.asarray(embedder(np.stack(windows)), dtype=np.float64)
        labels, _ = cluster_windows(emb, clustering, seed)
        index = [[i for i, o in enumerate(owner) if o == s] for s in range(len(meeting))]
        seg_labels = canonical_labels(relabel_segments(emb, labels, index))
    except ContractError as exc:
        raise ContractError(f"meeting {name}: {exc}") from exc
    return DiarisationAnnotation([
        SpeakerTurn(seg.meeting, seg.onset, seg.duration, f"spk{int(l)}", seg.channel)
        for seg, l in zip(meeting, seg_labels)
    ])


def group_meetings(segments):
    out = {}
    for seg in segments:
        out.setdefault(seg.meeting, []).append(seg)
    return {m: sorted(v, key=lambda s: s.onset) for m, v in sorted(out.items())}


def diarise_meetings(segments, embedder, clustering=ClusteringConfig(), seed=0,
                     window_s=2.0, shift_s=1.0, workers=None):
    """Diarise each meeting independently; ``workers`` defaults to ``GLMD_THREADS`` or 1."""
    meetings = group_meetings(segments)
    if workers is None:
        workers = max(1, int(os.environ.get("GLMD_THREADS", "1") or 1))

    def run(item):
        return diarise(item[1], embedder, clustering, seed, window_s, shift_s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, meetings.items()))
    else:
        parts = [run(item) for item in meetings.items()]
    return DiarisationAnnotation([r for p in parts for r in p.records])


def reference_annotation(segments) -> DiarisationAnnotation:
    return DiarisationAnnotation([
        SpeakerTurn(s.meeting, round(s.onset, 3), round(s.duration, 3), spk, s.channel)
        for s in segments for spk in s.speakers
    ])


# ---------------------------------------------------------------------------
# feature files and manifest
# ---------------------------------------------------------------------------

def write_features(path, matrix):
    m = np.asarray(matrix, dtype="<f4")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<BII", FEATURE_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(m).tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a FEAT file")
    version, rows, cols = struct.unpack_from("<BII", data, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported FEAT version {version}")
    body = data[13:]
    if len(body) != 4 * rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} floats, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_manifest(path, entries):
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=1)


def load_segments(corpus_dir, splits=None):
    """Segments listed in ``manifest.json`` with their features loaded."""
    corpus_dir = Path(corpus_dir)
    with open(corpus_dir / "manifest.json") as fh:
        entries = json.load(fh)
    out = []
    for e in entries:
        if splits is not None and e.get("split") not in splits:
            continue
        out.append(Segment(
            meeting=e["meeting"], onset=float(e["onset"]), duration=float(e["duration"]),
            frames=read_features(corpus_dir / e["path"]), speakers=list(e["speakers"]),
            channel=str(e.get("channel", "1")), segment_id=e["segment"], split=e.get("split", ""),
        ))
    return out
