"""Association accuracy under a shared, ground-truth-built tracklet state.

At each evaluated frame every identity seen (with a confident detection)
within the pause horizon becomes a tracklet whose bank holds its latest
labelled detections. All methods score the same tracklets against the
same confident detections; a frame's Hungarian matching is then counted
as correct / matchable. Results are micro-averaged over frames and videos.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import build_cost_matrix, hungarian
from .config import HeuristicConfig, TrackerConfig
from .domain import APPEARANCE_CUE, BOX_CUE
from .heuristics import appearance_cost, fused_cost, motion_cost, replay_track, summary_tokens
from .metrics import association_counts
from .model import CamelParams, embed_objects
from .oracles import LAMBDA_GRID, fusion_oracle_step


@dataclass
class EvalFrame:
    video: int
    frame: int
    track_labels: np.ndarray
    banks: list  # row indices per tracklet, oldest first
    det_rows: np.ndarray
    det_labels: np.ndarray


def build_eval_frames(videos, tracker: TrackerConfig, stride=1):
    out = []
    for vi, v in enumerate(videos):
        ok = v.cues[BOX_CUE][:, 4] >= tracker.det_conf_min
        by_label = {}
        for r in np.flatnonzero(ok & (v.labels >= 0)):
            by_label.setdefault(int(v.labels[r]), []).append(r)
        by_label = {g: np.array(rs) for g, rs in sorted(by_label.items())}
        for frame in sorted(set(v.frames.tolist())):
            if frame % stride:
                continue
            det_rows = np.array([r for r in v.rows_at(frame) if ok[r]], dtype=np.int64)
            if not len(det_rows):
                continue
            labels, banks = [], []
            for g, rs in by_label.items():
                f = v.frames[rs]
                hist = rs[(f < frame) & (f >= frame - tracker.max_pause_frames)]
                if len(hist):
                    labels.append(g)
                    banks.append(hist[-tracker.bank_size :])
            if labels:
                out.append(EvalFrame(vi, frame, np.array(labels), banks, det_rows, v.labels[det_rows]))
    return out


def _object(video, rows, t_cur, cues):
    ages = (t_cur - video.frames[rows]).astype(np.float64)
    return {k: (video.cues[k][rows], ages) for k in cues}


def frame_objects(ef: EvalFrame, videos, cues, heuristic=False):
    v = videos[ef.video]
    trk = [_object(v, b, ef.frame, cues) for b in ef.banks]
    if heuristic:
        trk = [summary_tokens(o) for o in trk]
    return trk + [_object(v, [r], ef.frame, cues) for r in ef.det_rows]


def model_costs(params: CamelParams, frames, videos, chunk=64):
    """Euclidean embedding distances per frame; frames are embedded in
    batches, one attention group per frame."""
    cues = params.cfg.cues
    heuristic = not params.cfg.use_te
    costs = []
    for start in range(0, len(frames), chunk):
        block = frames[start : start + chunk]
        objects, groups, spans = [], [], []
        for ef in block:
            objs = frame_objects(ef, videos, cues, heuristic)
            groups.append(np.arange(len(objects), len(objects) + len(objs)))
            spans.append((len(objects), len(ef.banks)))
            objects.extend(objs)
        z = embed_objects(params, objects, groups if params.cfg.use_gaffe else None).data
        for (s, M), g in zip(spans, groups):
            costs.append(build_cost_matrix(z[s : s + M], z[s + M : g[-1] + 1]))
    return costs


def heuristic_components(frames, videos, hcfg: HeuristicConfig = None):
    """(motion, appearance) cost pairs per frame from Kalman/EMA states
    replayed over each bank."""
    hcfg = hcfg or HeuristicConfig()
    out = []
    for ef in frames:
        v = videos[ef.video]
        preds, emas = [], []
        for bank in ef.banks:
            t = replay_track(
                v.boxes[bank], ef.frame - v.frames[bank], list(v.cues[APPEARANCE_CUE][bank]),
                hcfg.ema_alpha, hcfg.std_weight_position, hcfg.std_weight_velocity,
            )
            preds.append(t.predicted.tlwh())
            emas.append(t.ema.vector)
        motion = motion_cost(np.array(preds), v.boxes[ef.det_rows])
        appearance = appearance_cost(np.array(emas), v.cues[APPEARANCE_CUE][ef.det_rows])
        out.append((motion, appearance))
    return out


def count(frames, costs):
    correct = matchable = 0
    for ef, c in zip(frames, costs):
        a = hungarian(c)
        k, m = association_counts(a.pairs, ef.track_labels, ef.det_labels)
        correct += k
        matchable += m
    return correct, matchable


def accuracy(frames, costs):
    c, m = count(frames, costs)
    return c / m if m else 1.0


def fixed_fusion_costs(components, lam):
    return [fused_cost(m, a, lam) for m, a in components]


def fusion_oracle_accuracy(frames, components, grid=LAMBDA_GRID):
    correct = matchable = 0
    for ef, (m, a) in zip(frames, components):
        _, assignment = fusion_oracle_step(m, a, ef.track_labels, ef.det_labels, grid)
        k, n = association_counts(assignment.pairs, ef.track_labels, ef.det_labels)
        correct += k
        matchable += n
    return correct / matchable if matchable else 1.0


def label_costs(frames):
    """Cost 0 for same-identity pairs and 1 otherwise: perfect association."""
    return [(ef.track_labels[:, None] != ef.det_labels[None, :]).astype(np.float64) for ef in frames]
