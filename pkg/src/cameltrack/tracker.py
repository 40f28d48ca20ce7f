"""Online tracking loop: filter, associate, extend banks, manage life cycles."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import Assignment, build_cost_matrix, cost_to_similarity, gate_assignment, hungarian
from .config import HeuristicConfig, TrackerConfig
from .dataio import MotRecord
from .domain import ActiveSet, NonMonotonicFrame, Tracklet, TrackState, bank_push
from .heuristics import HeuristicTrack, appearance_cost, fused_cost, motion_cost, summary_tokens
from .model import CamelParams, camel_forward

LIVE = (TrackState.TENTATIVE, TrackState.ACTIVE, TrackState.PAUSED)


# ---------------------------------------------------------------- scorers


class CamelScorer:
    """Costs are Euclidean distances between CAMEL embeddings. A model
    without temporal encoders sees each tracklet as Kalman/EMA summary
    tokens."""

    name = "camel"

    def __init__(self, params: CamelParams):
        self.params = params
        self.transform = None if params.cfg.use_te else summary_tokens

    def start(self, tracklet, det):
        pass

    def update(self, tracklet, det):
        pass

    def drop(self, identity):
        pass

    def predict(self, tracklets, frame):
        pass

    def score(self, tracklets, detections, frame):
        emb = camel_forward(ActiveSet(tracklets, detections), self.params, frame, self.transform)
        M = len(tracklets)
        cost = build_cost_matrix(emb[:M], emb[M:])
        return cost, cost_to_similarity(cost)


class HeuristicScorer:
    """SORT-style scorer. ``kind``: 'kf' (1 - IoU with the Kalman
    prediction), 'ema' (cosine distance to the EMA appearance) or 'fused'
    (fixed linear blend). Similarity is ``1 - cost``."""

    def __init__(self, kind="fused", cfg: HeuristicConfig = None, appearance_cue=1):
        if kind not in ("kf", "ema", "fused"):
            raise ValueError(f"unknown heuristic {kind!r}")
        self.name = kind
        self.cfg = cfg or HeuristicConfig()
        self.appearance_cue = appearance_cue
        self.tracks = {}
        self.predicted_at = {}

    @property
    def lam(self):
        return {"kf": 1.0, "ema": 0.0, "fused": self.cfg.fusion_lambda}[self.name]

    def _app(self, det):
        cue = det.cues.get(self.appearance_cue)
        return None if cue is None else cue.values

    def start(self, tracklet, det):
        c = self.cfg
        self.tracks[tracklet.identity] = HeuristicTrack(
            det.bbox, self._app(det), c.ema_alpha, c.std_weight_position, c.std_weight_velocity
        )
        self.predicted_at[tracklet.identity] = det.frame

    def update(self, tracklet, det):
        self.tracks[tracklet.identity].update(det.bbox, self._app(det))

    def drop(self, identity):
        self.tracks.pop(identity, None)
        self.predicted_at.pop(identity, None)

    def predict(self, tracklets, frame):
        for t in tracklets:
            while self.predicted_at[t.identity] < frame:
                self.tracks[t.identity].predict()
                self.predicted_at[t.identity] += 1

    def components(self, tracklets, detections):
        states = [self.tracks[t.identity] for t in tracklets]
        motion = motion_cost(
            np.array([s.predicted.tlwh() for s in states]).reshape(-1, 4),
            np.array([d.bbox.tlwh() for d in detections]).reshape(-1, 4),
        )
        app_t = [s.ema.vector for s in states]
        app_d = [self._app(d) for d in detections]
        if any(v is None for v in app_t) or any(v is None for v in app_d):
            appearance = np.ones_like(motion)
        else:
            appearance = appearance_cost(np.array(app_t), np.array(app_d))
        return motion, appearance

    def score(self, tracklets, detections, frame):
        motion, appearance = self.components(tracklets, detections)
        cost = fused_cost(motion, appearance, self.lam)
        return cost, 1.0 - cost


# ---------------------------------------------------------------- loop


@dataclass
class TrackerState:
    tracklets: list = field(default_factory=list)
    next_identity: int = 1
    last_frame: int = None
    terminated: set = field(default_factory=set)

    def live(self):
        return [t for t in self.tracklets if t.state in LIVE]


@dataclass
class FrameResult:
    frame: int
    assignment: Assignment
    identities: list  # (identity, detection) pairs emitted for this frame
    new_identities: list
    cost: np.ndarray = None
    candidate_ids: list = None


def step(state: TrackerState, frame, detections, scorer, cfg: TrackerConfig, keep_cost=False):
    if state.last_frame is not None and frame <= state.last_frame:
        raise NonMonotonicFrame(f"frame {frame} after {state.last_frame}")
    state.last_frame = frame
    dets = [d for d in detections if d.confidence >= cfg.det_conf_min]
    candidates = state.live()
    scorer.predict(candidates, frame)

    cost = np.zeros((len(candidates), len(dets)))
    if candidates and dets:
        cost, similarity = scorer.score(candidates, dets, frame)
        assignment = gate_assignment(hungarian(cost), cfg.sim_threshold, similarity)
    else:
        assignment = Assignment([], list(range(len(candidates))), list(range(len(dets))))

    emitted = []
    for r, c, _ in assignment.matches:
        t, d = candidates[r], dets[c]
        bank_push(t, d, cfg.bank_size)
        t.hits += 1
        t.last_matched_frame = frame
        scorer.update(t, d)
        if t.state is TrackState.PAUSED or (t.state is TrackState.TENTATIVE and t.hits >= cfg.min_hits):
            t.transition(TrackState.ACTIVE)
        if t.state is TrackState.ACTIVE:
            emitted.append((t.identity, d))

    for r in assignment.unmatched_rows:
        t = candidates[r]
        if t.state is TrackState.TENTATIVE:
            t.transition(TrackState.TERMINATED)
        elif t.state is TrackState.ACTIVE:
            t.transition(TrackState.PAUSED)
        if t.state is TrackState.PAUSED and frame - t.last_matched_frame > cfg.max_pause_frames:
            t.transition(TrackState.TERMINATED)
        if t.state is TrackState.TERMINATED:
            state.terminated.add(t.identity)
            scorer.drop(t.identity)

    new_ids = []
    for c in assignment.unmatched_cols:
        d = dets[c]
        if d.confidence < cfg.init_conf_min:
            continue
        t = Tracklet(state.next_identity, [], TrackState.TENTATIVE, 0, frame)
        state.next_identity += 1
        bank_push(t, d, cfg.bank_size)
        if cfg.min_hits == 0:
            t.transition(TrackState.ACTIVE)
        state.tracklets.append(t)
        scorer.start(t, d)
        new_ids.append(t.identity)
        if t.state is TrackState.ACTIVE:
            emitted.append((t.identity, d))

    state.tracklets = [t for t in state.tracklets if t.state is not TrackState.TERMINATED]
    emitted.sort(key=lambda p: p[0])
    return FrameResult(
        frame,
        assignment,
        emitted,
        new_ids,
        cost if keep_cost else None,
        [t.identity for t in candidates],
    )


def run_sequence(frames, scorer, cfg: TrackerConfig, n_frames=None, keep_cost=False):
    """Track detections given as ``{frame: [Detection, ...]}``.

    Every frame from 1 to ``n_frames`` (default: the last frame with
    detections) is stepped, including empty ones, so pause counters advance.
    Returns (MOT records, per-frame FrameResult list).
    """
    if n_frames is None:
        n_frames = max(frames) if frames else 0
    state = TrackerState()
    records, diagnostics = [], []
    for frame in range(1, n_frames + 1):
        result = step(state, frame, frames.get(frame, []), scorer, cfg, keep_cost)
        diagnostics.append(result)
        for identity, d in result.identities:
            b = d.bbox
            records.append(MotRecord(frame, identity, b.x_left, b.y_top, b.width, b.height, d.confidence))
    return records, diagnostics
