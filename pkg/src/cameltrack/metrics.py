"""IDF1, CLEAR-MOT MOTA and association accuracy over MOT records."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .association import hungarian
from .dataio import group_by_frame
from .heuristics import iou_matrix

_INVALID = 10.0
_TIE_BONUS = 1e-9


@dataclass
class ClearMot:
    mota: float
    fp: int
    fn: int
    idsw: int
    matches: int
    num_gt: int


def _boxes(records):
    return np.array([[r.x, r.y, r.w, r.h] for r in records], dtype=np.float64).reshape(-1, 4)


def frame_matches(gt_recs, pred_recs, iou_threshold=0.5, prefer=None):
    """One-to-one IoU matching of one frame. Pairs in ``prefer`` (a gt id to
    pred id dict) win IoU ties. Returns [(gt_index, pred_index)]."""
    if not gt_recs or not pred_recs:
        return []
    iou = iou_matrix(_boxes(gt_recs), _boxes(pred_recs))
    cost = np.where(iou >= iou_threshold, 1.0 - iou, _INVALID)
    if prefer:
        for i, g in enumerate(gt_recs):
            for j, p in enumerate(pred_recs):
                if prefer.get(g.id) == p.id and iou[i, j] >= iou_threshold:
                    cost[i, j] -= _TIE_BONUS
    return [(i, j) for i, j, _ in hungarian(cost).matches if iou[i, j] >= iou_threshold]


def clear_mot(gt, pred, iou_threshold=0.5) -> ClearMot:
    gt = [r for r in gt if r.id >= 0]
    gt_f, pred_f = group_by_frame(gt), group_by_frame(pred)
    last = {}
    fp = fn = idsw = total = 0
    for frame in sorted(set(gt_f) | set(pred_f)):
        g, p = gt_f.get(frame, []), pred_f.get(frame, [])
        pairs = frame_matches(g, p, iou_threshold, last)
        for i, j in pairs:
            gid, pid = g[i].id, p[j].id
            if gid in last and last[gid] != pid:
                idsw += 1
            last[gid] = pid
        total += len(pairs)
        fp += len(p) - len(pairs)
        fn += len(g) - len(pairs)
    num_gt = len(gt)
    mota = 1.0 - (fn + fp + idsw) / num_gt if num_gt else (1.0 if not pred else -float(fp))
    return ClearMot(mota, fp, fn, idsw, total, num_gt)


def mota(gt, pred, iou_threshold=0.5):
    m = clear_mot(gt, pred, iou_threshold)
    return m.mota, m.fp, m.fn, m.idsw


def id_overlap_counts(gt, pred, iou_threshold=0.5):
    """Frames in which each (gt id, pred id) pair overlaps at IoU >= threshold.
    Returns (gt_ids, pred_ids, counts)."""
    gt = [r for r in gt if r.id >= 0]
    gt_ids = sorted({r.id for r in gt})
    pred_ids = sorted({r.id for r in pred})
    gi = {g: i for i, g in enumerate(gt_ids)}
    pi = {p: j for j, p in enumerate(pred_ids)}
    counts = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.int64)
    gt_f, pred_f = group_by_frame(gt), group_by_frame(pred)
    for frame in set(gt_f) & set(pred_f):
        g, p = gt_f[frame], pred_f[frame]
        ok = iou_matrix(_boxes(g), _boxes(p)) >= iou_threshold
        for i, j in zip(*np.nonzero(ok)):
            counts[gi[g[i].id], pi[p[j].id]] += 1
    return gt_ids, pred_ids, counts


def idf1(gt, pred, iou_threshold=0.5):
    gt = [r for r in gt if r.id >= 0]
    n_gt, n_pred = len(gt), len(pred)
    if n_gt + n_pred == 0:
        return 1.0
    _, _, counts = id_overlap_counts(gt, pred, iou_threshold)
    idtp = 0
    if counts.size:
        idtp = int(sum(counts[i, j] for i, j, _ in hungarian(-counts.astype(np.float64)).matches))
    return 2.0 * idtp / (n_gt + n_pred)


def association_counts(pairs, trk_labels, det_labels):
    """(correct, matchable) for one frame. Labels are GT identities, -1 when
    unknown. A detection is matchable when some tracklet carries its label."""
    trk_labels = np.asarray(trk_labels)
    det_labels = np.asarray(det_labels)
    known = {int(x) for x in trk_labels if x >= 0}
    matchable = int(sum(1 for x in det_labels if x >= 0 and int(x) in known))
    correct = int(sum(1 for i, j in pairs if trk_labels[i] >= 0 and trk_labels[i] == det_labels[j]))
    return correct, matchable


def association_accuracy(pairs, trk_labels, det_labels):
    correct, matchable = association_counts(pairs, trk_labels, det_labels)
    return correct / matchable if matchable else 1.0


def sequence_association_accuracy(gt, pred, iou_threshold=0.5):
    """Micro-averaged association accuracy of a tracker output.

    Each predicted box is labelled with the GT identity it matches. At every
    frame a prediction whose GT identity was already covered by some earlier
    prediction is matchable; it is correct when its own track's previous
    label is that same identity.
    """
    gt = [r for r in gt if r.id >= 0]
    gt_f, pred_f = group_by_frame(gt), group_by_frame(pred)
    track_label = {}
    seen = set()
    correct = matchable = 0
    for frame in sorted(set(gt_f) | set(pred_f)):
        g, p = gt_f.get(frame, []), pred_f.get(frame, [])
        labels = {p[j].id: g[i].id for i, j in frame_matches(g, p, iou_threshold)}
        for pid, gid in labels.items():
            if gid in seen:
                matchable += 1
                correct += int(track_label.get(pid) == gid)
        for pid, gid in labels.items():
            track_label[pid] = gid
            seen.add(gid)
    return correct / matchable if matchable else 1.0
