"""SORT-style association baselines: IoU, Kalman motion, EMA appearance and
fixed-weight fusion of the two cost matrices."""
from __future__ import annotations

import numpy as np

from .domain import BBox

MIN_BOX_SIZE = 1e-3


class SingularInnovation(np.linalg.LinAlgError):
    pass


def iou(a, b):
    """IoU of two (x, y, w, h) boxes."""
    return float(iou_matrix(np.asarray(a, dtype=np.float64)[None], np.asarray(b, dtype=np.float64)[None])[0, 0])


def iou_matrix(a, b):
    """Pairwise IoU between (m, 4) and (n, 4) arrays of (x, y, w, h) boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.clip(np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    ih = np.clip(np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.clip(out, 0.0, 1.0)


class KalmanState:
    """Constant-velocity filter over (cx, cy, w, h) and their velocities.

    Noise standard deviations scale with box height.
    """

    def __init__(self, bbox: BBox, std_weight_position=1.0 / 20, std_weight_velocity=1.0 / 160):
        self.wp = std_weight_position
        self.wv = std_weight_velocity
        cx, cy = bbox.center
        self.mean = np.array([cx, cy, bbox.width, bbox.height, 0.0, 0.0, 0.0, 0.0])
        h = bbox.height
        std = np.array([2 * self.wp * h] * 4 + [10 * self.wv * h] * 4)
        self.covariance = np.diag(std**2)
        self.F = np.eye(8)
        self.F[:4, 4:] = np.eye(4)
        self.H = np.eye(4, 8)

    def copy(self):
        other = object.__new__(KalmanState)
        other.__dict__.update(self.__dict__)
        other.mean = self.mean.copy()
        other.covariance = self.covariance.copy()
        return other

    def box(self) -> BBox:
        cx, cy, w, h = self.mean[:4]
        w, h = max(w, MIN_BOX_SIZE), max(h, MIN_BOX_SIZE)
        return BBox(cx - w / 2, cy - h / 2, w, h)

    def predict(self) -> BBox:
        h = max(self.mean[3], MIN_BOX_SIZE)
        q = np.array([self.wp * h] * 4 + [self.wv * h] * 4) ** 2
        self.mean = self.F @ self.mean
        self.covariance = self.F @ self.covariance @ self.F.T + np.diag(q)
        return self.box()

    def update(self, bbox: BBox):
        cx, cy = bbox.center
        z = np.array([cx, cy, bbox.width, bbox.height])
        h = max(self.mean[3], MIN_BOX_SIZE)
        R = np.diag(np.array([self.wp * h] * 4) ** 2)
        S = self.H @ self.covariance @ self.H.T + R
        try:
            if np.linalg.cond(S) > 1e12:
                raise np.linalg.LinAlgError("ill-conditioned")
            gain = np.linalg.solve(S, self.H @ self.covariance).T
        except np.linalg.LinAlgError as exc:
            raise SingularInnovation(str(exc)) from None
        self.mean = self.mean + gain @ (z - self.H @ self.mean)
        self.covariance = self.covariance - gain @ S @ gain.T
        self.covariance = 0.5 * (self.covariance + self.covariance.T)
        return self


def kf_predict(state: KalmanState) -> BBox:
    return state.predict()


def kf_update(state: KalmanState, bbox: BBox) -> KalmanState:
    return state.update(bbox)


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


class EmaEmbedding:
    def __init__(self, alpha=0.9):
        self.alpha = alpha
        self.vector = None

    def update(self, f):
        if self.vector is None:
            self.vector = _normalize(f)
        else:
            self.vector = _normalize(self.alpha * self.vector + (1 - self.alpha) * np.asarray(f, dtype=np.float64))
        return self


def ema_update(e: EmaEmbedding, f) -> EmaEmbedding:
    return e.update(f)


def motion_cost(predicted_tlwh, det_tlwh):
    return 1.0 - iou_matrix(predicted_tlwh, det_tlwh)


def appearance_cost(track_vecs, det_vecs):
    """Cosine distance, in [0, 2]."""
    t = np.asarray(track_vecs, dtype=np.float64)
    d = np.asarray(det_vecs, dtype=np.float64)
    if t.size == 0 or d.size == 0:
        return np.zeros((len(t), len(d)))
    t = t / np.maximum(np.linalg.norm(t, axis=1, keepdims=True), 1e-12)
    d = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
    return 1.0 - t @ d.T


def fused_cost(motion, appearance, lam=0.5):
    return lam * np.asarray(motion, dtype=np.float64) + (1.0 - lam) * np.asarray(appearance, dtype=np.float64)


class HeuristicTrack:
    """Per-tracklet heuristic state: Kalman box plus EMA appearance."""

    def __init__(self, bbox, appearance=None, alpha=0.9, wp=1.0 / 20, wv=1.0 / 160):
        self.kf = KalmanState(bbox, wp, wv)
        self.ema = EmaEmbedding(alpha)
        if appearance is not None:
            self.ema.update(appearance)
        self.predicted = bbox

    def predict(self):
        self.predicted = self.kf.predict()
        return self.predicted

    def update(self, bbox, appearance=None):
        self.kf.update(bbox)
        if appearance is not None:
            self.ema.update(appearance)


def replay_track(boxes, ages, appearances=None, alpha=0.9, wp=1.0 / 20, wv=1.0 / 160):
    """Run the heuristic state over a detection history given oldest first
    with integer ages (frames before now); returns it predicted to age 0.
    ``appearances`` may hold None for detections without that cue."""
    ages = np.asarray(ages, dtype=np.int64)
    apps = appearances if appearances is not None else [None] * len(ages)
    track = HeuristicTrack(BBox.from_tlwh(boxes[0]), apps[0], alpha, wp, wv)
    for i in range(1, len(ages)):
        for _ in range(int(ages[i - 1] - ages[i])):
            track.predict()
        track.update(BBox.from_tlwh(boxes[i]), apps[i])
    for _ in range(int(ages[-1])):
        track.predict()
    if ages[-1] == 0:
        track.predicted = track.kf.box()
    return track


def _box_token_to_tlwh(v):
    cx, cy, w, h = v[..., 0], v[..., 1], v[..., 2], v[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, w, h], axis=-1)


def summary_tokens(obj, box_cue=0, appearance_cue=1, alpha=0.9):
    """Replace each cue history of a model input object by one heuristic
    token: the Kalman-predicted box, the EMA appearance, and the latest
    vector of any other cue. Objects with single-token histories only get
    their box token re-encoded through the filter."""
    out = {}
    box = obj.get(box_cue)
    for k, seq in obj.items():
        if seq is None:
            out[k] = None
            continue
        values, ages = seq
        if k == box_cue:
            track = replay_track(_box_token_to_tlwh(values), ages, alpha=alpha)
            p = track.predicted
            cx, cy = p.center
            token = np.array([[cx, cy, p.width, p.height, values[-1, 4]]])
        elif k == appearance_cue:
            e = EmaEmbedding(alpha)
            for v in values:
                e.update(v)
            token = e.vector[None, :]
        else:
            token = values[-1:]
        out[k] = (token, np.zeros(1))
    if box is None:
        raise ValueError("summary tokens need the box cue")
    return out
