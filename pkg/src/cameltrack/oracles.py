"""Upper-bound probes with privileged ground-truth access."""
from __future__ import annotations

import numpy as np

from .association import hungarian
from .config import HeuristicConfig, TrackerConfig
from .dataio import MotRecord
from .heuristics import fused_cost, iou_matrix
from .metrics import association_counts
from .tracker import HeuristicScorer, run_sequence

LAMBDA_GRID = tuple(round(0.05 * i, 2) for i in range(21))
ORACLE_IOU = 0.5


def label_by_iou(det_boxes, gt_boxes, gt_ids, min_iou=ORACLE_IOU):
    """GT identity per detection via Hungarian on IoU; -1 when unmatched or
    when the matched overlap is below ``min_iou`` (or zero)."""
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.full(len(det_boxes), -1, dtype=np.int64)
    if len(det_boxes) == 0 or len(gt_ids) == 0:
        return labels, np.zeros(len(det_boxes))
    iou = iou_matrix(det_boxes, gt_boxes)
    best = np.zeros(len(det_boxes))
    for i, j, _ in hungarian(-iou).matches:
        if iou[i, j] > 0 and iou[i, j] >= min_iou:
            labels[i] = gt_ids[j]
            best[i] = iou[i, j]
    return labels, best


def association_oracle_step(detections, gt_records):
    """GT identity inherited by each detection (None when unassigned)."""
    boxes = np.array([d.bbox.tlwh() for d in detections]).reshape(-1, 4)
    gt_boxes = np.array([[r.x, r.y, r.w, r.h] for r in gt_records]).reshape(-1, 4)
    labels, _ = label_by_iou(boxes, gt_boxes, [r.id for r in gt_records])
    return [None if x < 0 else int(x) for x in labels]


def run_association_oracle(frames, gt_by_frame, cfg: TrackerConfig, n_frames=None):
    """Emit every confident detection under the identity it inherits from
    its matched ground truth; unassigned detections are dropped."""
    if n_frames is None:
        n_frames = max(frames) if frames else 0
    records = []
    for frame in range(1, n_frames + 1):
        dets = [d for d in frames.get(frame, []) if d.confidence >= cfg.det_conf_min]
        for d, gid in zip(dets, association_oracle_step(dets, gt_by_frame.get(frame, []))):
            if gid is not None:
                b = d.bbox
                records.append(MotRecord(frame, gid, b.x_left, b.y_top, b.width, b.height, d.confidence))
    return records


def grid_accuracies(motion, appearance, trk_labels, det_labels, grid=LAMBDA_GRID):
    """Association accuracy of the Hungarian matching at every grid weight."""
    out = []
    for lam in grid:
        a = hungarian(fused_cost(motion, appearance, lam))
        correct, matchable = association_counts(a.pairs, trk_labels, det_labels)
        out.append((lam, a, correct, matchable))
    return out


def fusion_oracle_step(motion, appearance, trk_labels, det_labels, grid=LAMBDA_GRID):
    """Best single weight for this frame: highest association accuracy,
    ties to the smaller weight. Returns (lambda, Assignment)."""
    best = None
    for lam, a, correct, _ in grid_accuracies(motion, appearance, trk_labels, det_labels, grid):
        if best is None or correct > best[2]:
            best = (lam, a, correct)
    return best[0], best[1]


class FusionOracleScorer(HeuristicScorer):
    """Kalman + EMA costs blended with the per-frame oracle weight. Tracklet
    labels are the GT identity of their latest detection."""

    def __init__(self, cfg: HeuristicConfig = None, grid=LAMBDA_GRID):
        super().__init__("fused", cfg)
        self.grid = grid
        self.labels = {}
        self.chosen = []

    def start(self, tracklet, det):
        super().start(tracklet, det)
        self.labels[tracklet.identity] = -1 if det.gt_identity is None else det.gt_identity

    def update(self, tracklet, det):
        super().update(tracklet, det)
        self.labels[tracklet.identity] = -1 if det.gt_identity is None else det.gt_identity

    def drop(self, identity):
        super().drop(identity)
        self.labels.pop(identity, None)

    def score(self, tracklets, detections, frame):
        motion, appearance = self.components(tracklets, detections)
        trk_labels = [self.labels[t.identity] for t in tracklets]
        det_labels = [-1 if d.gt_identity is None else d.gt_identity for d in detections]
        lam, _ = fusion_oracle_step(motion, appearance, trk_labels, det_labels, self.grid)
        self.chosen.append((frame, lam))
        cost = fused_cost(motion, appearance, lam)
        return cost, 1.0 - cost


def attach_gt_labels(frames, gt_by_frame, min_iou=ORACLE_IOU):
    for frame, dets in frames.items():
        labels = association_oracle_step(dets, gt_by_frame.get(frame, []))
        for d, gid in zip(dets, labels):
            d.gt_identity = gid
    return frames


def run_fusion_oracle(frames, gt_by_frame, cfg: TrackerConfig, hcfg: HeuristicConfig = None, n_frames=None):
    attach_gt_labels(frames, gt_by_frame)
    scorer = FusionOracleScorer(hcfg)
    records, diag = run_sequence(frames, scorer, cfg, n_frames)
    return records, diag, scorer
