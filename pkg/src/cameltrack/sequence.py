"""A tracking sequence on disk: seqinfo.ini, det.txt, optional gt.txt and a
cues/ directory with one CAMELCUE file per cue."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import MotRecord, group_by_frame, load_cue_store, read_mot, save_cue_store, write_mot
from .domain import BBox, CueTensor, Detection, encode_box_cue


class MissingCue(KeyError):
    def __init__(self, frame, det_index, cue_id):
        super().__init__(f"cue {cue_id} missing for frame {frame}, detection {det_index}")
        self.frame, self.det_index, self.cue_id = frame, det_index, cue_id


@dataclass
class SeqInfo:
    name: str
    image_w: int
    image_h: int
    n_frames: int
    frame_rate: int = 30

    def write(self, path):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["Sequence"] = {
            "name": self.name,
            "seqLength": str(self.n_frames),
            "imWidth": str(self.image_w),
            "imHeight": str(self.image_h),
            "frameRate": str(self.frame_rate),
        }
        with open(path, "w", encoding="utf-8") as fh:
            cp.write(fh)

    @classmethod
    def read(cls, path):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise FileNotFoundError(path)
        s = cp["Sequence"]
        return cls(s["name"], int(s["imWidth"]), int(s["imHeight"]), int(s["seqLength"]), int(s.get("frameRate", 30)))


@dataclass
class Sequence:
    info: SeqInfo
    dets: list
    gt: list = None
    cue_stores: dict = field(default_factory=dict)

    @classmethod
    def load(cls, seq_dir, det_path=None, cue_dir=None, gt_path=None):
        seq_dir = Path(seq_dir)
        info = SeqInfo.read(seq_dir / "seqinfo.ini")
        dets = read_mot(det_path or seq_dir / "det.txt")
        gt_file = Path(gt_path) if gt_path else seq_dir / "gt.txt"
        gt = read_mot(gt_file) if gt_file.exists() else None
        return cls(info, dets, gt, load_cue_dir(cue_dir or seq_dir / "cues"))

    def save(self, seq_dir):
        seq_dir = Path(seq_dir)
        (seq_dir / "cues").mkdir(parents=True, exist_ok=True)
        self.info.write(seq_dir / "seqinfo.ini")
        write_mot(seq_dir / "det.txt", self.dets)
        if self.gt is not None:
            write_mot(seq_dir / "gt.txt", self.gt)
        for k, store in sorted(self.cue_stores.items()):
            save_cue_store(seq_dir / "cues" / f"cue{k}.bin", store)

    def detections_by_frame(self, cues=(1, 2)):
        """Per-frame Detection lists; det_index is the record's order within
        its frame in the detection file."""
        out = {}
        for frame, records in sorted(group_by_frame(self.dets).items()):
            frame_dets = []
            for i, r in enumerate(records):
                d = Detection(frame, BBox(r.x, r.y, r.w, r.h), float(r.conf), det_index=i)
                d.cues[0] = encode_box_cue(d, self.info.image_w, self.info.image_h)
                for k in cues:
                    store = self.cue_stores.get(k)
                    if store is None or (frame, i) not in store:
                        raise MissingCue(frame, i, k)
                    d.cues[k] = CueTensor(k, store.get(frame, i))
                frame_dets.append(d)
            out[frame] = frame_dets
        return out

    def gt_by_frame(self):
        if self.gt is None:
            return {}
        return {f: [r for r in rs if r.id >= 0] for f, rs in group_by_frame(self.gt).items()}


def load_cue_dir(cue_dir):
    stores = {}
    cue_dir = Path(cue_dir)
    if cue_dir.is_dir():
        for p in sorted(cue_dir.glob("cue*.bin")):
            store = load_cue_store(p)
            stores[store.cue_id] = store
    return stores


def records_to_array(records):
    return np.array([[r.x, r.y, r.w, r.h] for r in records], dtype=np.float64).reshape(-1, 4)
