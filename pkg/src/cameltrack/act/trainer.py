"""Two-phase training: each temporal encoder alone, then the whole network."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import diffcore as dc
from ..config import RunConfig
from ..model import CamelParams, embed_objects, encode_cue
from .augment import augment
from .loss import info_nce_loss
from .scenario import ScenarioSampler
from .store import TrainingStore

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    params: CamelParams
    losses: list = field(default_factory=list)  # (phase, step, loss)
    epoch_means: list = field(default_factory=list)
    pretrain_means: dict = field(default_factory=dict)
    pretrained: dict = field(default_factory=dict)  # TE tensors handed to the joint phase


def _layout(scenarios, cues, heuristic=False):
    objects, spans = [], []
    for s in scenarios:
        start = len(objects)
        objects.extend(s.objects(cues, heuristic))
        spans.append((start, len(s.tracklets), len(s.detections)))
    return objects, spans


def scenario_loss(z, spans, scenarios, temperature, keep=None):
    """Mean InfoNCE over scenarios; ``keep`` masks objects that may take
    part (objects lacking the trained cue sit out)."""
    total = None
    n = 0
    for (start, M, N), s in zip(spans, scenarios):
        trk = np.arange(start, start + M)
        det = np.arange(start + M, start + M + N)
        tl, dl = s.track_labels, s.det_labels
        if keep is not None:
            tl = np.where(keep[trk], tl, -1)
            det_keep = keep[det]
            det, dl = det[det_keep], dl[det_keep]
        if not len(det) or not np.any(np.isin(tl[tl >= 0], dl)):
            continue
        loss = info_nce_loss(z[trk], z[det], tl, dl, temperature)
        total = loss if total is None else dc.add(total, loss)
        n += 1
    if total is None:
        return None
    return dc.mul(total, 1.0 / n)


def _apply(params_list, adam, loss, tape):
    for p in params_list:
        p.grad = None
    dc.backward(tape, loss)
    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params_list]
    dc.adam_step(adam, params_list, grads)


def _draw(sampler, rng, cfg: RunConfig):
    return [augment(sampler.sample(rng), rng, cfg.augment) for _ in range(cfg.train.batch_size)]


def pretrain_encoder(params: CamelParams, k, sampler, rng, cfg: RunConfig, result: TrainResult):
    tc = cfg.train
    group = params.subset(f"te.{k}.")
    adam = dc.AdamState(lr=tc.lr)
    means = []
    for epoch in range(tc.te_pretrain_epochs):
        running = []
        for step in range(tc.steps_per_epoch):
            batch = _draw(sampler, rng, cfg)
            objects, spans = _layout(batch, (k,))
            seqs = [o[k] for o in objects]
            keep = np.array([s is not None for s in seqs])
            with dc.Tape() as tape:
                y, _ = encode_cue(params, k, seqs)
                z = dc.l2_normalize_lastdim(y)
                loss = scenario_loss(z, spans, batch, tc.temperature, keep)
            if loss is None:
                continue
            _apply(group, adam, loss, tape)
            running.append(loss.item())
            result.losses.append((f"te{k}", epoch * tc.steps_per_epoch + step, loss.item()))
        means.append(float(np.mean(running)) if running else float("nan"))
        log.info("pretrain cue %d epoch %d loss %.4f", k, epoch, means[-1])
    result.pretrain_means[k] = means


def train(store: TrainingStore, cfg: RunConfig, progress=None) -> TrainResult:
    """Deterministic for a fixed ``cfg.train.seed``."""
    tc, mc = cfg.train, cfg.model
    rng = np.random.default_rng(tc.seed)
    widths = {k: w for k, w in store.cue_widths.items() if k in mc.cues}
    params = CamelParams.init(mc, widths, seed=tc.seed)
    sampler = ScenarioSampler(store, tc.pairs, tc.bank_size, tc.max_gap)
    result = TrainResult(params)

    if mc.use_te:
        for k in mc.cues:
            pretrain_encoder(params, k, sampler, rng, cfg, result)
    result.pretrained = {n: t.data.copy() for n, t in params.tensors.items() if n.startswith("te.")}
    if not mc.use_gaffe:
        return result

    trainable = [params[n] for n in params.names()]
    adam = dc.AdamState(lr=tc.lr)
    for epoch in range(tc.epochs):
        running = []
        for step in range(tc.steps_per_epoch):
            batch = _draw(sampler, rng, cfg)
            objects, spans = _layout(batch, mc.cues, heuristic=not mc.use_te)
            groups = [np.arange(start, start + M + N) for start, M, N in spans]
            with dc.Tape() as tape:
                z = embed_objects(params, objects, groups)
                loss = scenario_loss(z, spans, batch, tc.temperature)
            if loss is None:
                continue
            _apply(trainable, adam, loss, tape)
            running.append(loss.item())
            result.losses.append(("joint", epoch * tc.steps_per_epoch + step, loss.item()))
        result.epoch_means.append(float(np.mean(running)) if running else float("nan"))
        log.info("joint epoch %d loss %.4f", epoch, result.epoch_means[-1])
        if progress is not None:
            progress(epoch, result.epoch_means[-1])
    return result


def encoder_only(params: CamelParams, k) -> CamelParams:
    """Single-cue model made of the trained TE_k; its normalized CLS output
    is the embedding."""
    cfg = replace(params.cfg, cues=(k,), use_gaffe=False, use_te=True)
    sub = CamelParams(cfg, {k: params.cue_widths[k]})
    sub.tensors = {n: t for n, t in params.tensors.items() if n.startswith(f"te.{k}.")}
    return sub
