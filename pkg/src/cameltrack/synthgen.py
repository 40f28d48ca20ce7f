"""Seeded synthetic tracking sequences with a difficulty dial.

Each identity owns a latent appearance direction and a keypoint layout; per
frame it produces a box (if visible), and each visible box may become a
detection with noisy box, appearance and keypoint cues. Occluded or absent
objects are left out of the ground truth as well.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import ConfigInvalid, RunConfig, SynthConfig
from .dataio import CueStore, MotRecord
from .domain import APPEARANCE_CUE, KEYPOINT_CUE, BBox, encode_keypoint_cue
from .sequence import SeqInfo, Sequence

MIN_SIZE = 8.0


@dataclass
class SynthResult:
    sequence: Sequence
    det_identity: dict  # (frame, det_index) -> gt id, -1 for false positives


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _bursts(rng, cfg: SynthConfig, rate):
    """(T,) bool: frames inside a scene-wide disturbance episode."""
    on = np.zeros(cfg.n_frames, dtype=bool)
    t = 0
    while t < cfg.n_frames:
        if rng.random() < rate:
            span = int(rng.integers(cfg.burst_min, cfg.burst_max + 1))
            on[t : t + span] = True
            t += span
        t += 1
    return on


def _trajectory(rng, cfg: SynthConfig, w, h, shaky):
    """Top-left corners for all frames, kept inside the image. Frames in
    ``shaky`` get an extra random displacement."""
    W, H = cfg.image_w - w, cfg.image_h - h
    T = cfg.n_frames
    start = np.array([rng.uniform(0, W), rng.uniform(0, H)])
    if cfg.motion == "random-walk":
        steps = rng.normal(0.0, cfg.speed, size=(T, 2))
        steps[0] = 0.0
        pos = start + np.cumsum(steps, axis=0)
    else:
        angle = rng.uniform(0, 2 * np.pi)
        vel = cfg.speed * np.array([np.cos(angle), np.sin(angle)])
        t = np.arange(T)[:, None]
        pos = start + t * vel
        if cfg.motion == "sinusoidal":
            amp = rng.uniform(0.5, 2.0) * w
            period = rng.uniform(20, 60)
            phase = rng.uniform(0, 2 * np.pi)
            normal = np.array([-np.sin(angle), np.cos(angle)])
            pos = pos + amp * np.sin(2 * np.pi * t / period + phase) * normal
    if shaky.any():
        jolt = rng.normal(0.0, cfg.speed * cfg.burst_scale, size=(T, 2)) * shaky[:, None]
        pos = pos + np.cumsum(jolt, axis=0)
    # reflect at the borders
    for axis, lim in ((0, W), (1, H)):
        p = np.mod(pos[:, axis], 2 * lim)
        pos[:, axis] = np.where(p > lim, 2 * lim - p, p)
    return pos


def _visibility(rng, cfg: SynthConfig):
    """(T,) bool per object: entry time, occlusion spells and at most one
    long exit followed by a re-entry."""
    T = cfg.n_frames
    vis = np.zeros(T, dtype=bool)
    enter = int(rng.integers(0, max(1, T // 4)))
    vis[enter:] = True
    reentry_at = None
    if rng.random() < cfg.reentry_rate and T - enter > 4 * cfg.occlusion_max:
        leave = int(rng.integers(enter + cfg.occlusion_max, T - 2 * cfg.occlusion_max))
        gap = int(rng.integers(cfg.occlusion_max, 2 * cfg.occlusion_max + 1))
        vis[leave : leave + gap] = False
        reentry_at = leave + gap
    t = enter
    while t < T:
        if vis[t] and rng.random() < cfg.occlusion_rate:
            span = int(rng.integers(cfg.occlusion_min, cfg.occlusion_max + 1))
            vis[t : t + span] = False
            t += span
        else:
            t += 1
    if cfg.occlusion_window:
        a, b = cfg.occlusion_window
        vis[max(a - 1, 0) : b] = False
    return vis, reentry_at


def _clip_box(x, y, w, h, cfg):
    x = min(max(x, 0.0), cfg.image_w - MIN_SIZE)
    y = min(max(y, 0.0), cfg.image_h - MIN_SIZE)
    w = max(min(w, cfg.image_w - x), MIN_SIZE)
    h = max(min(h, cfg.image_h - y), MIN_SIZE)
    return x, y, w, h


def _confidence(rng):
    return float(np.clip(1.0 - abs(rng.normal(0.0, 0.06)), 0.4, 1.0))


def generate(cfg: SynthConfig, name=None) -> SynthResult:
    if not isinstance(cfg, SynthConfig):
        raise ConfigInvalid("generate expects a SynthConfig")
    rng = np.random.default_rng(cfg.seed)
    T, D, J = cfg.n_frames, cfg.appearance_dim, cfg.keypoint_joints

    shared = _unit(rng.normal(size=D))
    blurry = _bursts(rng, cfg, cfg.appearance_burst_rate)
    shaky = _bursts(rng, cfg, cfg.motion_burst_rate)
    objects = []
    for _ in range(cfg.n_objects):
        w = 0.065 * cfg.image_w * (1.0 + cfg.size_spread * rng.uniform(-1, 1))
        h = w * 2.15 * (1.0 + cfg.size_spread * rng.uniform(-1, 1))
        h = min(h, 0.8 * cfg.image_h)
        pos = _trajectory(rng, cfg, w, h, shaky)
        vis, reentry_at = _visibility(rng, cfg)
        if reentry_at is not None and reentry_at < T:
            # a re-entering object shows up somewhere else
            jump = np.array([rng.uniform(0, cfg.image_w - w), rng.uniform(0, cfg.image_h - h)]) - pos[reentry_at]
            pos[reentry_at:] = pos[reentry_at:] + jump
            for axis, lim in ((0, cfg.image_w - w), (1, cfg.image_h - h)):
                pos[reentry_at:, axis] = np.clip(pos[reentry_at:, axis], 0, lim)
        mean = _unit(cfg.class_separation * _unit(rng.normal(size=D)) + (1.0 - cfg.class_separation) * shared)
        layout = rng.uniform(0.15, 0.85, size=(J, 2))
        objects.append((w, h, pos, vis, mean, layout))

    gt, dets, det_identity = [], [], {}
    app_rows, kp_rows = [], []
    for frame in range(1, T + 1):
        t = frame - 1
        frame_dets = []
        for oid, (w, h, pos, vis, mean, layout) in enumerate(objects, start=1):
            if not vis[t]:
                continue
            x, y = pos[t]
            gt.append(MotRecord(frame, oid, float(x), float(y), float(w), float(h), 1.0, 1.0, 1.0))
            if rng.random() < cfg.miss_rate:
                continue
            s = cfg.box_noise
            dx, dy = rng.normal(0.0, s, size=2) * np.array([w, h])
            sw, sh = np.exp(rng.normal(0.0, s, size=2))
            box = _clip_box(x + dx, y + dy, w * sw, h * sh, cfg)
            noise = cfg.appearance_noise * (cfg.burst_scale if blurry[t] else 1.0)
            app = _unit(mean + noise * rng.normal(size=D) / np.sqrt(D))
            joints = layout + rng.normal(0.0, cfg.keypoint_noise, size=(J, 2))
            frame_dets.append((oid, box, _confidence(rng), app, joints))
        n_fp = rng.binomial(max(1, len(frame_dets)), cfg.fp_rate)
        for _ in range(n_fp):
            fw = 0.065 * cfg.image_w * (1.0 + cfg.size_spread * rng.uniform(-1, 1))
            fh = 2.15 * fw
            box = _clip_box(rng.uniform(0, cfg.image_w - fw), rng.uniform(0, cfg.image_h - fh), fw, fh, cfg)
            frame_dets.append((-1, box, float(rng.uniform(0.3, 0.95)), _unit(rng.normal(size=D)), rng.uniform(0, 1, (J, 2))))
        order = rng.permutation(len(frame_dets))
        for i, k in enumerate(order):
            oid, (x, y, w, h), conf, app, rel = frame_dets[k]
            dets.append(MotRecord(frame, -1, x, y, w, h, conf))
            det_identity[(frame, i)] = oid
            bbox = BBox(x, y, w, h)
            pix = np.column_stack([x + rel[:, 0] * w, y + rel[:, 1] * h, rng.uniform(0.5, 1.0, size=J)])
            app_rows.append((frame, i, app))
            kp_rows.append((frame, i, encode_keypoint_cue(pix, bbox, J).values))

    # round boxes the way the text format will store them
    dets = [replace(r, x=_q(r.x), y=_q(r.y), w=_q(r.w), h=_q(r.h), conf=_q(r.conf)) for r in dets]
    gt = [replace(r, x=_q(r.x), y=_q(r.y), w=_q(r.w), h=_q(r.h)) for r in gt]
    stores = {
        APPEARANCE_CUE: CueStore.from_rows(APPEARANCE_CUE, D, app_rows),
        KEYPOINT_CUE: CueStore.from_rows(KEYPOINT_CUE, 3 * J, kp_rows),
    }
    info = SeqInfo(name or f"synth-{cfg.seed:04d}", cfg.image_w, cfg.image_h, T)
    return SynthResult(Sequence(info, dets, gt, stores), det_identity)


def _q(v):
    return round(float(v), 2)


def generate_suite(cfg: RunConfig, seed=None):
    """(train, eval) lists of SynthResult. Train sequences use seeds
    seed, seed+1, ...; evaluation sequences start at seed + eval_seed_offset."""
    base = cfg.synth.seed if seed is None else seed
    train = [
        generate(replace(cfg.synth, seed=base + i), f"train-{i:02d}") for i in range(cfg.suite.train_sequences)
    ]
    held_out = [
        generate(replace(cfg.synth, seed=base + cfg.suite.eval_seed_offset + i), f"eval-{i:02d}")
        for i in range(cfg.suite.eval_sequences)
    ]
    return train, held_out
