"""Scenario augmentations. Each returns a new Scenario; inputs are untouched."""
from __future__ import annotations

import numpy as np

from ..config import AugmentConfig
from ..domain import APPEARANCE_CUE, BOX_CUE, KEYPOINT_CUE
from .scenario import Scenario


def swap_candidates(s: Scenario):
    """(a, p, b, q) with tracklets a < b holding overlapping detections of
    one frame at positions p and q."""
    where = {}
    for ti, e in enumerate(s.tracklets):
        for p, r in enumerate(e.rows):
            where[(e.video, int(r))] = (ti, p)
    out = []
    for ti, e in enumerate(s.tracklets):
        video = s.videos.get(e.video)
        if video is None:
            continue
        for p, r in enumerate(e.rows):
            for other in video.overlapping(r):
                hit = where.get((e.video, other))
                if hit is not None and hit[0] > ti:
                    out.append((ti, p, hit[0], hit[1]))
    return out


def augment_identity_swap(s: Scenario, rng, cfg: AugmentConfig) -> Scenario:
    """With probability p_swap, trade one pair of overlapping same-frame
    detections between two tracklets."""
    if rng.random() >= cfg.p_swap:
        return s
    cands = swap_candidates(s)
    if not cands:
        return s
    a, p, b, q = cands[rng.integers(len(cands))]
    out = s.copy()
    ta, tb = out.tracklets[a], out.tracklets[b]
    for name in ("rows", "frames"):
        va, vb = getattr(ta, name), getattr(tb, name)
        va[p], vb[q] = vb[q], va[p]
    for k in ta.cues:
        row_a = ta.cues[k][p].copy()
        ta.cues[k][p] = tb.cues[k][q]
        tb.cues[k][q] = row_a
        pa = ta.present[k][p]
        ta.present[k][p] = tb.present[k][q]
        tb.present[k][q] = pa
    return out


def dropout_probability(age, span, p_drop, exponent):
    """Per-detection removal probability; the newest detections are the most
    likely to go. ``age`` counts frames back from the current one."""
    span = max(float(span), 1.0)
    return p_drop * np.power(np.clip((span - np.asarray(age, dtype=np.float64)) / span, 0.0, 1.0), exponent)


def augment_detection_dropout(s: Scenario, rng, cfg: AugmentConfig) -> Scenario:
    if cfg.p_drop <= 0:
        return s
    out = s.copy()
    for i, e in enumerate(out.tracklets):
        t_cur = out.t_cur[out.track_source[i]]
        ages = t_cur - e.frames
        prob = dropout_probability(ages, ages.max(), cfg.p_drop, cfg.recency_exponent)
        keep = np.ones(len(e), dtype=bool)
        for j in range(len(e) - 1, -1, -1):
            if keep.sum() == 1:
                break
            if rng.random() < prob[j]:
                keep[j] = False
        if not keep.all():
            out.tracklets[i] = e.take(keep)
    return out


def augment_cue_dropout(s: Scenario, rng, cfg: AugmentConfig) -> Scenario:
    """Mask optional cues (k >= 1) per detection; the box cue stays."""
    if cfg.p_cue_drop <= 0:
        return s
    out = s.copy()
    for e in out.tracklets + out.detections:
        for k in e.present:
            if k == BOX_CUE:
                continue
            e.present[k] &= rng.random(len(e)) >= cfg.p_cue_drop
    return out


def _keypoint_coord_mask(width):
    m = np.ones(width, dtype=bool)
    m[2::3] = False
    return m


def augment_perturb(s: Scenario, rng, cfg: AugmentConfig) -> Scenario:
    """Gaussian noise on box coordinates, appearance vectors and keypoint
    coordinates. Confidences and keypoint scores are left as they are."""
    sigma = {BOX_CUE: cfg.sigma_box, APPEARANCE_CUE: cfg.sigma_appearance, KEYPOINT_CUE: cfg.sigma_keypoints}
    if not any(sigma.values()):
        return s
    out = s.copy()
    for e in out.tracklets + out.detections:
        for k, v in e.cues.items():
            sd = sigma.get(k, 0.0)
            if not sd:
                continue
            if k == BOX_CUE:
                cols = np.arange(4)
            elif k == KEYPOINT_CUE:
                cols = np.flatnonzero(_keypoint_coord_mask(v.shape[1]))
            else:
                cols = np.arange(v.shape[1])
            v[:, cols] += rng.normal(0.0, sd, size=(len(v), len(cols)))
            if k == BOX_CUE:
                v[:, 4] = np.clip(v[:, 4], 0.0, 1.0)
    return out


def augment(s: Scenario, rng, cfg: AugmentConfig) -> Scenario:
    if not cfg.enabled:
        return s
    s = augment_identity_swap(s, rng, cfg)
    s = augment_detection_dropout(s, rng, cfg)
    s = augment_cue_dropout(s, rng, cfg)
    return augment_perturb(s, rng, cfg)
