"""Acceptance criteria, one test each, at the required tolerances."""
import itertools
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import WIDTHS, make_det, record_criterion, tiny_params
from test_metrics import brute_idf1, rec

from cameltrack import diffcore as dc
from cameltrack.ablation import Suite, learning_signal
from cameltrack.act.loss import info_nce_loss
from cameltrack.act.store import preprocess
from cameltrack.association import hungarian
from cameltrack.cli import main
from cameltrack.config import load_config, save_config
from cameltrack.dataio import MotRecord, emit_mot, parse_mot, read_mot
from cameltrack.domain import ActiveSet, CueTensor, Detection, Tracklet, TrackState, bank_push
from cameltrack.evaluation import build_eval_frames, heuristic_components
from cameltrack.metrics import association_counts, clear_mot, idf1, mota
from cameltrack.model import camel_forward, embed_objects
from cameltrack.oracles import fusion_oracle_step, grid_accuracies, run_association_oracle
from cameltrack.sequence import Sequence
from cameltrack.synthgen import generate

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.ini"
TOL = 1e-5
FLOOR = 1e-3


# ---------------------------------------------------------------- 1


def _weighted(y, seed):
    w = np.random.default_rng(seed).normal(size=y.shape)
    return dc.sum_(dc.mul(y, w))


def _primitive_cases(rng):
    n = rng.normal
    return {
        "add": (lambda a, b: _weighted(dc.add(a, b), 1), [n(size=(3, 4)), n(size=4)]),
        "mul": (lambda a, b: _weighted(dc.mul(a, b), 2), [n(size=(2, 3, 4)), n(size=(3, 1))]),
        "matmul": (lambda a, b: _weighted(dc.matmul(a, b), 3), [n(size=(2, 3, 4)), n(size=(2, 4, 5))]),
        "linear": (lambda x, w, b: _weighted(dc.linear(x, w, b), 4), [n(size=(2, 3, 4)), n(size=(4, 5)), n(size=5)]),
        "softmax": (lambda x: _weighted(dc.softmax_lastdim(x), 5), [n(size=(3, 5))]),
        "log_softmax": (lambda x: _weighted(dc.log_softmax_lastdim(x), 6), [n(size=(3, 5))]),
        "layer_norm": (lambda x, g, b: _weighted(dc.layer_norm(x, g, b), 7), [n(size=(4, 6)), n(size=6), n(size=6)]),
        "gelu": (lambda x: _weighted(dc.gelu(x), 8), [2 * n(size=(4, 5))]),
        "concat+slice": (lambda a, b: _weighted(dc.concat([a, b], axis=1)[:, 1:4], 9), [n(size=(2, 3)), n(size=(2, 2))]),
        "index": (lambda a: _weighted(a[np.array([0, 2, 0, 1])], 10), [n(size=(3, 4))]),
        "mean": (lambda a: _weighted(dc.mean(a, axis=1), 11), [n(size=(3, 4))]),
        "sum": (lambda a: dc.sum_(dc.mul(a, a)), [n(size=(3, 4))]),
        "l2_normalize": (lambda a: _weighted(dc.l2_normalize_lastdim(a), 12), [n(size=(3, 4))]),
        "reshape+transpose": (lambda a: _weighted(dc.transpose(dc.reshape(a, (3, 2, 2)), (2, 0, 1)), 13), [n(size=(4, 3))]),
    }


def test_criterion_1_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, checked, failed = 0.0, 0, []
    for name, (fn, arrays) in _primitive_cases(rng).items():
        params = [dc.Tensor(a, requires_grad=True) for a in arrays]
        err, n = dc.gradcheck(lambda: fn(*params), params, n_samples=60, floor=FLOOR)
        worst, checked = max(worst, err), checked + n
        if err >= TOL:
            failed.append(name)

    params = tiny_params(seed=2)
    objs = [
        {k: (rng.normal(size=(L, WIDTHS[k])), np.arange(L, 0, -1) - 1.0) for k in (0, 1, 2)}
        for L in (3, 1, 2, 1, 1, 1)
    ]

    def composite():
        z = embed_objects(params, objs, canonical=False)
        return info_nce_loss(z[np.arange(3)], z[np.arange(3, 6)], [1, 2, 3], [2, 1, 3], 0.5)

    err, n = dc.gradcheck(composite, [params[k] for k in params.names()], n_samples=200, floor=FLOOR)
    worst, checked = max(worst, err), checked + n
    if err >= TOL:
        failed.append("composite")
    elapsed = time.perf_counter() - start
    ok = not failed and checked >= 200 and elapsed < 60
    record_criterion(1, ok, f"{checked} coordinates, max rel err {worst:.2e} (< {TOL:g}), {elapsed:.1f}s (< 60s){', failed ' + ','.join(failed) if failed else ''}")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_hungarian():
    rng = np.random.default_rng(0)
    mismatches = 0
    for trial in range(1000):
        r, c = map(int, rng.integers(1, 8, size=2))
        cost = rng.normal(size=(r, c)) if trial % 2 else rng.integers(0, 4, size=(r, c)).astype(float)
        got = sum(cost[i, j] for i, j in hungarian(cost).pairs)
        if r <= c:
            best = min(sum(cost[i, p[i]] for i in range(r)) for p in itertools.permutations(range(c), r))
        else:
            best = min(sum(cost[p[j], j] for j in range(c)) for p in itertools.permutations(range(r), c))
        mismatches += len(hungarian(cost).pairs) != min(r, c) or abs(got - best) > 1e-9
    record_criterion(2, mismatches == 0, f"1000 matrices up to 7x7, {mismatches} mismatches vs exhaustive minimum")
    assert mismatches == 0


# ---------------------------------------------------------------- 3


def _det(rng, frame):
    d = make_det(frame, rng.uniform(0, 200), rng.uniform(0, 100), conf=rng.uniform(0.5, 1))
    for k in (1, 2):
        d.cues[k] = CueTensor(k, rng.normal(size=WIDTHS[k]))
    return d


def _scene(rng, n_trk, n_det, frame=20):
    trk = []
    for i in range(n_trk):
        t = Tracklet(i + 1, state=TrackState.ACTIVE)
        for f in sorted(rng.choice(np.arange(frame - 15, frame), size=rng.integers(1, 6), replace=False)):
            bank_push(t, _det(rng, int(f)))
        trk.append(t)
    return trk, [_det(rng, frame) for _ in range(n_det)]


def _shifted(trk, dets, dt):
    moved = []
    for t in trk:
        t2 = Tracklet(t.identity, state=t.state)
        for d in t.bank:
            bank_push(t2, Detection(d.frame + dt, d.bbox, d.confidence, dict(d.cues)))
        moved.append(t2)
    return moved, [Detection(d.frame + dt, d.bbox, d.confidence, dict(d.cues)) for d in dets]


def test_criterion_3_structural_invariants():
    rng = np.random.default_rng(0)
    perm_bad = shift_bad = 0
    worst_norm = 0.0
    for trial in range(60):
        params = tiny_params(seed=trial % 4)
        trk, dets = _scene(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        z = camel_forward(ActiveSet(trk, dets), params)
        worst_norm = max(worst_norm, float(np.max(np.abs(np.linalg.norm(z, axis=1) - 1.0))))
        pt, pd = rng.permutation(len(trk)), rng.permutation(len(dets))
        zp = camel_forward(ActiveSet([trk[i] for i in pt], [dets[i] for i in pd]), params)
        M = len(trk)
        perm_bad += not (np.array_equal(zp[:M], z[:M][pt]) and np.array_equal(zp[M:], z[M:][pd]))
        zs = camel_forward(ActiveSet(*_shifted(trk, dets, int(rng.integers(1, 5000)))), params)
        shift_bad += not np.array_equal(z, zs)

    bank_bad = 0
    for trial in range(300):
        W = int(rng.integers(1, 9))
        t = Tracklet(1)
        frame, pushed = 0, []
        for _ in range(rng.integers(1, 40)):
            frame += int(rng.integers(1, 4))
            d = make_det(frame, 0, 0)
            bank_push(t, d, W)
            pushed.append(frame)
            frames = [x.frame for x in t.bank]
            bank_bad += not (len(frames) <= W and frames == pushed[-W:] and all(a < b for a, b in zip(frames, frames[1:])))

    ok = perm_bad == 0 and shift_bad == 0 and worst_norm <= 1e-9 and bank_bad == 0
    record_criterion(
        3, ok,
        f"permutation {perm_bad}/60 and translation {shift_bad}/60 bitwise failures, "
        f"max |norm-1| {worst_norm:.1e}, bank violations {bank_bad}",
    )
    assert ok


# ---------------------------------------------------------------- 4


def _random_case(rng):
    gt, pred = [], []
    n_frames, n_gt, n_pred = rng.integers(1, 7), rng.integers(0, 5), rng.integers(0, 5)
    for f in range(1, n_frames + 1):
        for g in range(1, n_gt + 1):
            if rng.random() < 0.5:
                gt.append(rec(f, g, rng.integers(0, 7) * 4))
        for p in range(1, n_pred + 1):
            if rng.random() < 0.5:
                pred.append(rec(f, 10 + p, rng.integers(0, 7) * 4))
    return gt, pred


def test_criterion_4_metric_oracles():
    rng = np.random.default_rng(0)
    bad = sum(abs(idf1(*case) - brute_idf1(*case)) > 1e-12 for case in (_random_case(rng) for _ in range(500)))

    lanes = [rec(f, i, 30 * i) for f in range(1, 6) for i in (1, 2)]
    fixtures = []
    fixtures.append(mota(lanes, lanes) == (1.0, 0, 0, 0) and idf1(lanes, lanes) == 1.0)
    m = mota(lanes, lanes + [rec(3, 9, 200)])
    fixtures.append(m[1:] == (1, 0, 0) and abs(m[0] - 0.9) < 1e-12)
    ten = [rec(f, i, 30 * i) for f in range(1, 11) for i in (1, 2)]
    swapped = [MotRecord(r.frame, r.id if r.frame <= 5 else 3 - r.id, r.x, r.y, r.w, r.h) for r in ten]
    fixtures.append(idf1(ten, swapped) == 0.5 and clear_mot(ten, swapped).idsw == 2)
    fixtures.append(mota(lanes[:1], [])[0] == 0.0 and idf1(lanes[:1], []) == 0.0)
    ok = bad == 0 and all(fixtures)
    record_criterion(4, ok, f"idf1 vs brute force: {bad}/500 mismatches; hand fixtures {sum(fixtures)}/{len(fixtures)} exact")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_oracle_dominance():
    cfg = load_config(DESK)
    res = generate(cfg.synth)  # seed 0
    videos = [preprocess(res.sequence)]
    frames = build_eval_frames(videos, cfg.tracker)
    comps = heuristic_components(frames, videos, cfg.heuristics)
    violations = 0
    for ef, (m, a) in zip(frames, comps):
        _, assignment = fusion_oracle_step(m, a, ef.track_labels, ef.det_labels)
        got, _ = association_counts(assignment.pairs, ef.track_labels, ef.det_labels)
        violations += any(got < c for _, _, c, _ in grid_accuracies(m, a, ef.track_labels, ef.det_labels))

    seq = res.sequence
    as_dets = Sequence(seq.info, list(seq.gt), seq.gt, {})
    records = run_association_oracle(as_dets.detections_by_frame(cues=()), seq.gt_by_frame(), cfg.tracker, seq.info.n_frames)
    score = idf1(seq.gt, records)
    ok = violations == 0 and score == 1.0
    record_criterion(5, ok, f"fusion oracle below a fixed lambda on {violations}/{len(frames)} frames; association oracle IDF1 {score}")
    assert ok


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_learning_signal():
    start = time.perf_counter()
    suite = Suite.build(load_config(DESK))
    s, _, _ = learning_signal(suite)
    fixed, camel, plain, oracle = s["fixed_fusion"], s["camel"], s["camel_no_aug"], s["fusion_oracle"]
    a = camel - fixed >= 0.05
    b = camel - plain > 0
    c = fixed < camel < oracle
    elapsed = time.perf_counter() - start
    ok = a and b and c
    record_criterion(
        6, ok,
        f"fixed {100 * fixed:.2f}%, CAMEL {100 * camel:.2f}% (a: +{100 * (camel - fixed):.2f}pp >= 5 {a}), "
        f"no-aug {100 * plain:.2f}% (b: {b}), oracle {100 * oracle:.2f}% (c: {c}), {elapsed:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 7


def _run_pipeline(out, cfg):
    assert main(["synth", "--config", str(cfg), "--out-dir", str(out / "data")]) == 0
    assert main(["preprocess", "--seqs", str(out / "data" / "train-00"), "--out", str(out / "store.npz")]) == 0
    assert main(["train", "--config", str(cfg), "--store", str(out / "store.npz"), "--out", str(out / "w.bin")]) == 0
    seq = out / "data" / "eval-00"
    assert main([
        "track", "--dets", str(seq / "det.txt"), "--cues", str(seq / "cues"), "--weights", str(out / "w.bin"),
        "--config", str(cfg), "--out", str(out / "pred.txt"),
    ]) == 0


def test_criterion_7_determinism(tmp_path, small_run_config):
    cfg = tmp_path / "run.ini"
    save_config(cfg, small_run_config.replace("train", epochs=2, steps_per_epoch=10))
    _run_pipeline(tmp_path / "a", cfg)
    _run_pipeline(tmp_path / "b", cfg)
    same = {n: (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in ("w.bin", "pred.txt")}
    ok = all(same.values()) and len(read_mot(tmp_path / "a" / "pred.txt")) > 0
    record_criterion(7, ok, "rerun byte-identical: " + ", ".join(f"{n} {v}" for n, v in same.items()))
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_mot_round_trip(tmp_path, small_run_config):
    cfg = tmp_path / "run.ini"
    save_config(cfg, small_run_config)
    main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "d")])
    seq = tmp_path / "d" / "eval-00"
    outputs = []
    for model in ("kf", "fused"):
        main(["track", "--model", model, "--dets", str(seq / "det.txt"), "--cues", str(seq / "cues"), "--out", str(tmp_path / f"{model}.txt")])
        outputs.append(tmp_path / f"{model}.txt")
    main(["oracle", "--kind", "association", "--dets", str(seq / "det.txt"), "--gt", str(seq / "gt.txt"), "--out", str(tmp_path / "ao.txt")])
    outputs += [tmp_path / "ao.txt", seq / "det.txt", seq / "gt.txt"]
    rng = np.random.default_rng(0)
    synthetic = [
        MotRecord(int(f), int(i), *map(float, rng.uniform(-50, 500, 2)), *map(float, rng.uniform(1, 90, 2)), float(rng.random()))
        for f, i in zip(rng.integers(1, 999, 300), rng.integers(-1, 50, 300))
    ]
    failures = 0
    for path in outputs:
        text = path.read_text(encoding="utf-8")
        records = parse_mot(text.splitlines())
        failures += emit_mot(records) != text or not records
    text = emit_mot(synthetic)
    failures += parse_mot(text.splitlines()) != sorted(synthetic, key=lambda r: (r.frame, r.id)) or emit_mot(parse_mot(text.splitlines())) != text
    ok = failures == 0
    record_criterion(8, ok, f"{len(outputs) + 1} MOT files parse and re-emit identically, {failures} failures")
    assert ok
