"""Tracking data model: boxes, detections, cue vectors, tracklets."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

BOX_CUE = 0
APPEARANCE_CUE = 1
KEYPOINT_CUE = 2
BOX_CUE_WIDTH = 5
DEFAULT_NUM_JOINTS = 17
DEFAULT_BANK_SIZE = 50


class DegenerateBox(ValueError):
    pass


class JointCountMismatch(ValueError):
    pass


class NonMonotonicFrame(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BBox:
    x_left: float
    y_top: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise DegenerateBox(f"box must have positive size, got {self.width}x{self.height}")

    @property
    def center(self):
        return self.x_left + 0.5 * self.width, self.y_top + 0.5 * self.height

    def tlwh(self):
        return np.array([self.x_left, self.y_top, self.width, self.height], dtype=np.float64)

    def tlbr(self):
        return np.array(
            [self.x_left, self.y_top, self.x_left + self.width, self.y_top + self.height],
            dtype=np.float64,
        )

    @classmethod
    def from_tlwh(cls, v):
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


@dataclass(frozen=True)
class CueTensor:
    cue_id: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"cue {self.cue_id} has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def width(self):
        return self.values.shape[0]


@dataclass
class Detection:
    frame: int
    bbox: BBox
    confidence: float
    cues: dict = field(default_factory=dict)
    gt_identity: Optional[int] = None
    det_index: int = -1

    def cue(self, k):
        return self.cues.get(k)


class TrackState(enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    PAUSED = "paused"
    TERMINATED = "terminated"


_ALLOWED = {
    TrackState.TENTATIVE: {TrackState.ACTIVE, TrackState.TERMINATED},
    TrackState.ACTIVE: {TrackState.PAUSED},
    TrackState.PAUSED: {TrackState.ACTIVE, TrackState.TERMINATED},
    TrackState.TERMINATED: set(),
}


class IllegalTransition(RuntimeError):
    pass


@dataclass
class Tracklet:
    identity: int
    bank: list = field(default_factory=list)
    state: TrackState = TrackState.TENTATIVE
    hits: int = 0
    last_matched_frame: int = -1

    def transition(self, new_state):
        if new_state is self.state:
            return
        if new_state not in _ALLOWED[self.state]:
            raise IllegalTransition(f"{self.state.value} -> {new_state.value}")
        self.state = new_state

    @property
    def last(self):
        return self.bank[-1]


@dataclass
class ActiveSet:
    tracklets: list
    detections: list

    def __post_init__(self):
        ids = [t.identity for t in self.tracklets]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate tracklet identity in active set")
        frames = {d.frame for d in self.detections}
        if len(frames) > 1:
            raise ValueError(f"detections span several frames: {sorted(frames)}")

    @property
    def frame(self):
        return self.detections[0].frame if self.detections else None


def encode_box_cue(d: Detection, image_w, image_h) -> CueTensor:
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    b = d.bbox
    if not (b.width > 0 and b.height > 0):
        raise DegenerateBox("zero-area box")
    cx, cy = b.center
    return CueTensor(
        BOX_CUE,
        np.array([cx / image_w, cy / image_h, b.width / image_w, b.height / image_h, d.confidence]),
    )


def encode_keypoint_cue(joints, bbox: BBox, num_joints=DEFAULT_NUM_JOINTS) -> CueTensor:
    """Joint (x, y, score) triples mapped to box-relative coordinates."""
    joints = np.asarray(joints, dtype=np.float64)
    if joints.ndim != 2 or joints.shape != (num_joints, 3):
        raise JointCountMismatch(f"expected ({num_joints}, 3) joints, got {joints.shape}")
    out = np.empty_like(joints)
    out[:, 0] = (joints[:, 0] - bbox.x_left) / bbox.width
    out[:, 1] = (joints[:, 1] - bbox.y_top) / bbox.height
    out[:, 2] = joints[:, 2]
    return CueTensor(KEYPOINT_CUE, out.reshape(-1))


def bank_push(t: Tracklet, d: Detection, W=DEFAULT_BANK_SIZE) -> Tracklet:
    if t.bank and d.frame <= t.bank[-1].frame:
        raise NonMonotonicFrame(f"frame {d.frame} after {t.bank[-1].frame}")
    t.bank.append(d)
    if len(t.bank) > W:
        del t.bank[: len(t.bank) - W]
    return t
