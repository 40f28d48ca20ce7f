"""InfoNCE over tracklet-to-detection similarities."""
from __future__ import annotations

import numpy as np

from .. import diffcore as dc


class NoPositives(ValueError):
    pass


def positive_mask(track_labels, det_labels):
    t = np.asarray(track_labels)[:, None]
    d = np.asarray(det_labels)[None, :]
    return ((t == d) & (t >= 0)).astype(np.float64)


def info_nce_loss(z_trk, z_det, track_labels, det_labels, temperature=0.1):
    """Mean over tracklets with a positive of
    -log softmax_j(cos(z_i, z_j) / tau)[j+]. Embeddings must be unit-norm."""
    mask = positive_mask(track_labels, det_labels)
    rows = mask.sum(axis=1) > 0
    if not rows.any():
        raise NoPositives("no tracklet has a matching detection")
    logits = dc.mul(dc.matmul(z_trk, dc.transpose(z_det, (1, 0))), 1.0 / temperature)
    logp = dc.log_softmax_lastdim(logits)
    picked = dc.sum_(dc.mul(logp, mask))
    return dc.mul(picked, -1.0 / rows.sum())
