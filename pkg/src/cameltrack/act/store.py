"""Labelled training store: every detection of every training video with its
cue vectors, the GT identity it overlaps best and same-frame overlaps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..domain import BOX_CUE
from ..heuristics import iou_matrix
from ..oracles import label_by_iou
from ..sequence import Sequence, records_to_array

BACKGROUND = -1


class FrameMismatch(ValueError):
    pass


@dataclass
class LabeledVideo:
    name: str
    frames: np.ndarray  # (n,) int, non-decreasing
    boxes: np.ndarray  # (n, 4) tlwh
    labels: np.ndarray  # (n,) GT identity or BACKGROUND
    cues: dict  # k -> (n, width)
    overlaps: np.ndarray = None  # (m, 3) rows (i, j, iou) with i < j, same frame, iou > 0
    _by_frame: dict = field(default=None, repr=False)
    _by_label: dict = field(default=None, repr=False)
    _partner: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self.overlaps is None:
            self.overlaps = np.zeros((0, 3))
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self._by_frame = {}
        for i, f in enumerate(self.frames):
            self._by_frame.setdefault(int(f), []).append(i)
        self._by_label = {}
        for i, g in enumerate(self.labels):
            if g != BACKGROUND:
                self._by_label.setdefault(int(g), []).append(i)
        self._by_label = {g: np.array(v) for g, v in self._by_label.items()}
        self._partner = {}
        for i, j, v in self.overlaps:
            self._partner.setdefault(int(i), []).append(int(j))
            self._partner.setdefault(int(j), []).append(int(i))

    def __len__(self):
        return len(self.frames)

    def rows_at(self, frame):
        return self._by_frame.get(int(frame), [])

    def history(self, label, frame, max_gap, limit):
        """Rows of identity ``label`` strictly before ``frame`` and within
        ``max_gap`` frames of it, newest ``limit`` of them, oldest first."""
        rows = self._by_label.get(int(label))
        if rows is None:
            return rows
        f = self.frames[rows]
        keep = rows[(f < frame) & (f >= frame - max_gap)]
        return keep[-limit:]

    def overlapping(self, row):
        return self._partner.get(int(row), [])

    def pair_counts(self, max_gap):
        """Frames usable as scenario sources with the number of
        (tracklet, detection) pairs each yields."""
        out = {}
        for frame, rows in self._by_frame.items():
            n = sum(
                1
                for r in rows
                if self.labels[r] != BACKGROUND and len(self.history(self.labels[r], frame, max_gap, 1))
            )
            if n:
                out[frame] = n
        return out


def preprocess(seq: Sequence, name=None, cues=(1, 2)) -> LabeledVideo:
    """Label detections with their IoU-closest GT identity via per-frame
    Hungarian matching; detections overlapping no GT box are background."""
    if seq.gt is None:
        raise FrameMismatch(f"{seq.info.name}: no ground truth")
    n_frames = seq.info.n_frames
    for kind, recs in (("detection", seq.dets), ("ground-truth", seq.gt)):
        bad = [r.frame for r in recs if r.frame > n_frames]
        if bad:
            raise FrameMismatch(f"{seq.info.name}: {kind} frame {bad[0]} beyond sequence length {n_frames}")
    gt_frames = seq.gt_by_frame()
    by_frame = seq.detections_by_frame(cues)
    frames, boxes, labels, overlaps = [], [], [], []
    values = {k: [] for k in (BOX_CUE,) + tuple(cues)}
    for frame in sorted(by_frame):
        dets = by_frame[frame]
        start = len(frames)
        b = np.array([d.bbox.tlwh() for d in dets])
        g = gt_frames.get(frame, [])
        lab, _ = label_by_iou(b, records_to_array(g), [r.id for r in g], min_iou=0.0)
        iou = iou_matrix(b, b)
        ii, jj = np.nonzero(np.triu(iou, k=1) > 0)
        overlaps.extend((start + i, start + j, iou[i, j]) for i, j in zip(ii, jj))
        for d, lbl in zip(dets, lab):
            frames.append(frame)
            boxes.append(d.bbox.tlwh())
            labels.append(lbl)
            for k in values:
                values[k].append(d.cues[k].values)
    cue_arrays = {k: np.array(v, dtype=np.float64).reshape(len(frames), -1) for k, v in values.items()}
    return LabeledVideo(
        name or seq.info.name,
        np.array(frames, dtype=np.int64),
        np.array(boxes, dtype=np.float64).reshape(-1, 4),
        np.array(labels, dtype=np.int64),
        cue_arrays,
        np.array(overlaps, dtype=np.float64).reshape(-1, 3),
    )


@dataclass
class TrainingStore:
    videos: list

    @property
    def cue_widths(self):
        v = self.videos[0]
        return {k: a.shape[1] for k, a in v.cues.items()}

    def save(self, path):
        arrays = {"names": np.array([v.name for v in self.videos])}
        for i, v in enumerate(self.videos):
            arrays[f"v{i}.frames"] = v.frames
            arrays[f"v{i}.boxes"] = v.boxes
            arrays[f"v{i}.labels"] = v.labels
            arrays[f"v{i}.overlaps"] = v.overlaps
            for k, a in v.cues.items():
                arrays[f"v{i}.cue{k}"] = a
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            names = list(z["names"])
            videos = []
            for i, name in enumerate(names):
                cues = {
                    int(key.split("cue")[1]): z[key]
                    for key in z.files
                    if key.startswith(f"v{i}.cue")
                }
                videos.append(
                    LabeledVideo(
                        str(name), z[f"v{i}.frames"], z[f"v{i}.boxes"], z[f"v{i}.labels"],
                        dict(sorted(cues.items())), z[f"v{i}.overlaps"],
                    )
                )
        return cls(videos)
