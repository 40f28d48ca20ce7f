"""The twelve-row ablation on a synthetic suite.

Rows mirror the study's experiment ids: heuristic single cues, single-cue
temporal encoders, fixed fusion, GAFFE over heuristic tokens, GAFFE over
box+appearance encoders, the full model with and without augmentation and
the two oracles.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import evaluation as ev
from .act.store import TrainingStore, preprocess
from .act.trainer import encoder_only, train
from .config import RunConfig
from .domain import APPEARANCE_CUE, BOX_CUE, KEYPOINT_CUE
from .metrics import clear_mot, idf1
from .oracles import run_association_oracle, run_fusion_oracle
from .synthgen import generate_suite
from .tracker import CamelScorer, HeuristicScorer, run_sequence

log = logging.getLogger(__name__)

EXPERIMENTS = {
    1: "EMA appearance",
    2: "TE appearance",
    3: "KF motion",
    4: "TE box",
    5: "TE keypoints",
    6: "fixed fusion (0.5)",
    7: "GAFFE over EMA/KF tokens",
    8: "TE box+app + GAFFE",
    9: "CAMEL, no augmentation",
    10: "CAMEL",
    11: "fusion oracle",
    12: "association oracle",
}


@dataclass
class Suite:
    cfg: RunConfig
    train: list
    held_out: list
    store: TrainingStore
    eval_videos: list
    frames: list
    components: list = field(default=None)

    @classmethod
    def build(cls, cfg: RunConfig):
        tr, held = generate_suite(cfg)
        store = TrainingStore([preprocess(r.sequence) for r in tr])
        videos = [preprocess(r.sequence) for r in held]
        frames = ev.build_eval_frames(videos, cfg.tracker)
        return cls(cfg, tr, held, store, videos, frames)

    def heuristic_components(self):
        if self.components is None:
            self.components = ev.heuristic_components(self.frames, self.eval_videos, self.cfg.heuristics)
        return self.components


@dataclass
class Row:
    exp: int
    name: str
    accuracy: float
    idf1: float = None
    mota: float = None


def learning_signal(suite: Suite, augmented=None, plain=None):
    """Accuracies behind the learning-signal checks: fixed fusion, CAMEL
    trained with and without augmentation, and the fusion oracle."""
    cfg = suite.cfg
    if augmented is None:
        augmented = train(suite.store, cfg.replace("augment", enabled=True))
    if plain is None:
        plain = train(suite.store, cfg.replace("augment", enabled=False))
    comp = suite.heuristic_components()
    return {
        "fixed_fusion": ev.accuracy(suite.frames, ev.fixed_fusion_costs(comp, cfg.heuristics.fusion_lambda)),
        "camel": ev.accuracy(suite.frames, ev.model_costs(augmented.params, suite.frames, suite.eval_videos)),
        "camel_no_aug": ev.accuracy(suite.frames, ev.model_costs(plain.params, suite.frames, suite.eval_videos)),
        "fusion_oracle": ev.fusion_oracle_accuracy(suite.frames, comp),
    }, augmented, plain


def _live(suite: Suite, make_scorer):
    scores, motas = [], []
    for r in suite.held_out:
        seq = r.sequence
        records, _ = run_sequence(seq.detections_by_frame(), make_scorer(), suite.cfg.tracker, seq.info.n_frames)
        scores.append(idf1(seq.gt, records))
        motas.append(clear_mot(seq.gt, records).mota)
    return float(np.mean(scores)), float(np.mean(motas))


def _train_job(job):
    store, cfg = job
    return train(store, cfg)


def trained_models(suite: Suite, progress=None, workers=1):
    cfg = suite.cfg
    jobs = {
        "full": cfg,
        "plain": cfg.replace("augment", enabled=False),
        "box_app": cfg.replace("model", cues=(BOX_CUE, APPEARANCE_CUE)),
        "tokens": cfg.replace("model", use_te=False),
    }
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = pool.map(_train_job, [(suite.store, c) for c in jobs.values()])
            return dict(zip(jobs, results))
    out = {}
    for name, c in jobs.items():
        log.info("training %s", name)
        out[name] = train(suite.store, c)
        if progress:
            progress(name)
    return out


def run_ablation(cfg: RunConfig, live=True, models=None, progress=None, workers=1):
    suite = Suite.build(cfg)
    models = models or trained_models(suite, progress, workers)
    comp = suite.heuristic_components()
    frames, videos = suite.frames, suite.eval_videos
    hc = cfg.heuristics
    full = models["full"].params

    def model_acc(params):
        return ev.accuracy(frames, ev.model_costs(params, frames, videos))

    def camel_live(params):
        return (lambda: CamelScorer(params)) if live else None

    def heur_live(kind):
        return (lambda: HeuristicScorer(kind, hc)) if live else None

    te = {k: encoder_only(full, k) for k in (BOX_CUE, APPEARANCE_CUE, KEYPOINT_CUE)}
    plan = {
        1: (ev.accuracy(frames, ev.fixed_fusion_costs(comp, 0.0)), heur_live("ema")),
        2: (model_acc(te[APPEARANCE_CUE]), camel_live(te[APPEARANCE_CUE])),
        3: (ev.accuracy(frames, ev.fixed_fusion_costs(comp, 1.0)), heur_live("kf")),
        4: (model_acc(te[BOX_CUE]), camel_live(te[BOX_CUE])),
        5: (model_acc(te[KEYPOINT_CUE]), camel_live(te[KEYPOINT_CUE])),
        6: (ev.accuracy(frames, ev.fixed_fusion_costs(comp, hc.fusion_lambda)), heur_live("fused")),
        7: (model_acc(models["tokens"].params), camel_live(models["tokens"].params)),
        8: (model_acc(models["box_app"].params), camel_live(models["box_app"].params)),
        9: (model_acc(models["plain"].params), camel_live(models["plain"].params)),
        10: (model_acc(full), camel_live(full)),
    }
    rows = []
    for exp, (acc, scorer) in plan.items():
        row = Row(exp, EXPERIMENTS[exp], acc)
        if scorer is not None:
            row.idf1, row.mota = _live(suite, scorer)
        rows.append(row)

    row = Row(11, EXPERIMENTS[11], ev.fusion_oracle_accuracy(frames, comp))
    row12 = Row(12, EXPERIMENTS[12], ev.accuracy(frames, ev.label_costs(frames)))
    if live:
        s11, m11, s12, m12 = [], [], [], []
        for r in suite.held_out:
            seq = r.sequence
            recs, _, _ = run_fusion_oracle(seq.detections_by_frame(), seq.gt_by_frame(), cfg.tracker, hc, seq.info.n_frames)
            s11.append(idf1(seq.gt, recs))
            m11.append(clear_mot(seq.gt, recs).mota)
            recs = run_association_oracle(seq.detections_by_frame(), seq.gt_by_frame(), cfg.tracker, seq.info.n_frames)
            s12.append(idf1(seq.gt, recs))
            m12.append(clear_mot(seq.gt, recs).mota)
        row.idf1, row.mota = float(np.mean(s11)), float(np.mean(m11))
        row12.idf1, row12.mota = float(np.mean(s12)), float(np.mean(m12))
    rows += [row, row12]
    return rows


def format_table(rows):
    def pct(v):
        return "-" if v is None else f"{100 * v:6.1f}"

    lines = [f"{'exp':>3}  {'setup':<26} {'assoc%':>7} {'IDF1':>6} {'MOTA':>6}"]
    for r in rows:
        lines.append(f"{r.exp:>3}  {r.name:<26} {pct(r.accuracy):>7} {pct(r.idf1):>6} {pct(r.mota):>6}")
    return "\n".join(lines) + "\n"


def rows_to_dicts(rows):
    return [
        {"exp": r.exp, "name": r.name, "accuracy": r.accuracy, "idf1": r.idf1, "mota": r.mota} for r in rows
    ]
