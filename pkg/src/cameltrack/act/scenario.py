"""Cross-video association scenarios built from a training store."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..heuristics import summary_tokens
from .store import BACKGROUND, TrainingStore

LABEL_STRIDE = 1_000_000


class InsufficientData(ValueError):
    pass


@dataclass
class Entry:
    """A list of detections from one video, oldest first."""

    video: int
    rows: np.ndarray
    frames: np.ndarray
    cues: dict  # k -> (L, width), private copies
    present: dict  # k -> (L,) bool

    def copy(self):
        return Entry(
            self.video,
            self.rows.copy(),
            self.frames.copy(),
            {k: v.copy() for k, v in self.cues.items()},
            {k: v.copy() for k, v in self.present.items()},
        )

    def take(self, keep):
        return Entry(
            self.video,
            self.rows[keep],
            self.frames[keep],
            {k: v[keep] for k, v in self.cues.items()},
            {k: v[keep] for k, v in self.present.items()},
        )

    def __len__(self):
        return len(self.rows)

    def sequence(self, k, t_cur):
        keep = self.present[k]
        if not keep.any():
            return None
        return self.cues[k][keep], (t_cur - self.frames[keep]).astype(np.float64)


@dataclass
class Scenario:
    tracklets: list  # Entry
    detections: list  # Entry of length 1
    track_labels: np.ndarray
    det_labels: np.ndarray  # BACKGROUND for unlabelled detections
    t_cur: dict  # video draw -> current frame
    track_source: list = field(default_factory=list)  # draw index per tracklet
    det_source: list = field(default_factory=list)
    videos: dict = field(default_factory=dict)  # video index -> LabeledVideo, shared

    @property
    def n_pairs(self):
        known = set(self.track_labels.tolist())
        return sum(1 for g in self.det_labels if g in known)

    def copy(self):
        return Scenario(
            [t.copy() for t in self.tracklets],
            [d.copy() for d in self.detections],
            self.track_labels.copy(),
            self.det_labels.copy(),
            dict(self.t_cur),
            list(self.track_source),
            list(self.det_source),
            self.videos,
        )

    def objects(self, cues, heuristic=False):
        """Object dicts for the model: tracklets first, then detections.
        With ``heuristic`` each tracklet history is summarized into one
        Kalman/EMA token per cue."""
        out = []
        for e, src in zip(self.tracklets, self.track_source):
            obj = {k: e.sequence(k, self.t_cur[src]) for k in cues}
            out.append(summary_tokens(obj) if heuristic else obj)
        for e, src in zip(self.detections, self.det_source):
            out.append({k: e.sequence(k, self.t_cur[src]) for k in cues})
        return out


def _entry(video_idx, video, rows):
    rows = np.asarray(rows, dtype=np.int64)
    return Entry(
        video_idx,
        rows,
        video.frames[rows].copy(),
        {k: a[rows].copy() for k, a in video.cues.items()},
        {k: np.ones(len(rows), dtype=bool) for k in video.cues},
    )


class ScenarioSampler:
    """Draws scenarios of ``pairs`` tracklet-detection pairs. Sources are
    random frames of random videos; each draw avoids videos already used in
    the scenario while unused ones remain."""

    def __init__(self, store: TrainingStore, pairs=32, bank_size=50, max_gap=60):
        self.store = store
        self.pairs = pairs
        self.bank_size = bank_size
        self.max_gap = max_gap
        self.sources = []
        for v in store.videos:
            counts = v.pair_counts(max_gap)
            self.sources.append(np.array(sorted(counts), dtype=np.int64))
        if not any(len(s) for s in self.sources):
            raise InsufficientData("no frame in the store yields a tracklet-detection pair")

    def sample(self, rng) -> Scenario:
        usable = [i for i, s in enumerate(self.sources) if len(s)]
        tracklets, detections, tl, dl, ts, ds = [], [], [], [], [], []
        t_cur = {}
        used = set()
        n_pairs = draw = 0
        while n_pairs < self.pairs:
            fresh = [i for i in usable if i not in used] or usable
            vi = int(fresh[rng.integers(len(fresh))])
            used.add(vi)
            video = self.store.videos[vi]
            frame = int(self.sources[vi][rng.integers(len(self.sources[vi]))])
            t_cur[draw] = frame
            rows = video.rows_at(frame)
            paired = []
            for r in rows:
                g = int(video.labels[r])
                label = BACKGROUND if g == BACKGROUND else draw * LABEL_STRIDE + g
                detections.append(_entry(vi, video, [r]))
                dl.append(label)
                ds.append(draw)
                if g != BACKGROUND:
                    hist = video.history(g, frame, self.max_gap, self.bank_size)
                    if len(hist):
                        paired.append((label, hist))
            need = self.pairs - n_pairs
            if len(paired) > need:
                pick = np.sort(rng.choice(len(paired), size=need, replace=False))
                paired = [paired[i] for i in pick]
            for label, hist in paired:
                tracklets.append(_entry(vi, video, hist))
                tl.append(label)
                ts.append(draw)
            n_pairs += len(paired)
            draw += 1
        return Scenario(
            tracklets, detections, np.array(tl, dtype=np.int64), np.array(dl, dtype=np.int64), t_cur, ts, ds,
            {i: self.store.videos[i] for i in used},
        )


def sample_scenario(store: TrainingStore, P, W, rng, max_gap=60) -> Scenario:
    return ScenarioSampler(store, P, W, max_gap).sample(rng)

