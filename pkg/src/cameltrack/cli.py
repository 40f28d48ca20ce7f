"""Command line entry point.

Every command writes a JSON manifest next to its output holding the config
hash, the seed and library versions; reruns with the same manifest inputs
produce byte-identical outputs.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import logging
import os
import platform
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .ablation import format_table, rows_to_dicts, run_ablation
from .act.store import TrainingStore, preprocess
from .act.trainer import train
from .config import ConfigInvalid, RunConfig, load_config, override
from .dataio import BadMagic, ParseError, Truncated, VersionMismatch, read_mot, write_mot
from .domain import BOX_CUE, BOX_CUE_WIDTH
from .metrics import clear_mot, idf1, sequence_association_accuracy
from .model import CamelParams
from .oracles import run_association_oracle, run_fusion_oracle
from .sequence import MissingCue, SeqInfo, Sequence, load_cue_dir
from .synthgen import generate_suite
from .tracker import CamelScorer, HeuristicScorer, run_sequence

log = logging.getLogger("cameltrack")

METRICS = ("idf1", "mota", "assacc")


class DataError(Exception):
    """Bad input data; reported with file (and line when known)."""

    def __init__(self, path, exc):
        line = getattr(exc, "line", None)
        where = f"{path}:{line}" if line is not None else str(path)
        msg = str(exc)
        if line is not None and msg.startswith(f"line {line}: "):
            msg = msg[len(f"line {line}: ") :]
        super().__init__(f"{where}: {msg}")


DATA_ERRORS = (
    ParseError, BadMagic, VersionMismatch, Truncated, MissingCue, ConfigInvalid,
    configparser.Error, FileNotFoundError, KeyError, ValueError,
)


def _guard(path, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except DATA_ERRORS as exc:
        raise DataError(path, exc) from exc


# ---------------------------------------------------------------- manifest


def _version(dist):
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(target, command, cfg: RunConfig | None, seed, outputs, extra=None):
    """``target`` is a directory (manifest.json inside) or an output file
    (``<file>.manifest.json`` beside it)."""
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    doc = {
        "command": command,
        "config_hash": cfg.hash().hex() if cfg is not None else None,
        "seed": seed,
        "versions": {
            "cameltrack": _version("artifact"),
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return _guard(args.config, load_config, args.config)
    return RunConfig()


def _seed(args, default):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("CAMEL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataError("CAMEL_SEED", ValueError(f"not an integer: {env!r}")) from None
    return default


def _check_workers(args):
    if args.workers > 1:
        warnings.warn(
            f"--workers {args.workers}: jobs run in separate processes; outputs are "
            "reproducible per job but log order and timing are not",
            RuntimeWarning,
            stacklevel=2,
        )


def _load_sequence(seq_dir):
    return _guard(seq_dir, Sequence.load, seq_dir)


def _seqinfo_for(dets_path, explicit=None):
    p = Path(explicit) if explicit else Path(dets_path).with_name("seqinfo.ini")
    if not p.exists():
        raise DataError(p, FileNotFoundError("seqinfo.ini needed for image size (pass --seqinfo)"))
    return _guard(p, SeqInfo.read, p)


def _sequence_from_files(dets, cues, seqinfo, gt=None):
    info = _seqinfo_for(dets, seqinfo)
    records = _guard(dets, read_mot, dets)
    gt_records = _guard(gt, read_mot, gt) if gt else None
    cue_dir = Path(cues) if cues else Path(dets).with_name("cues")
    stores = _guard(cue_dir, load_cue_dir, cue_dir)
    return Sequence(info, records, gt_records, stores)


def _frames(seq: Sequence, cues, source):
    try:
        return seq.detections_by_frame(cues)
    except MissingCue as exc:
        raise DataError(source, exc) from exc


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    cfg = _config(args)
    seed = _seed(args, cfg.synth.seed)
    cfg = cfg.replace("synth", seed=seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, eval_set = generate_suite(cfg)
    written = []
    for r in train_set + eval_set:
        d = out / r.sequence.info.name
        r.sequence.save(d)
        written += sorted(p for p in d.rglob("*") if p.is_file())
    write_manifest(out, "synth", cfg, seed, written)
    print(f"wrote {len(train_set)} train and {len(eval_set)} eval sequences to {out}")
    return 0


def cmd_preprocess(args):
    videos = []
    for d in args.seqs:
        seq = _load_sequence(d)
        if seq.gt is None:
            raise DataError(Path(d) / "gt.txt", FileNotFoundError("training sequences need ground truth"))
        videos.append(_guard(d, preprocess, seq, Path(d).name))
    store = TrainingStore(videos)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out)
    write_manifest(out, "preprocess", None, None, [out], {"sequences": [Path(d).name for d in args.seqs]})
    print(f"stored {sum(len(v) for v in videos)} labelled detections from {len(videos)} sequences")
    return 0


def _train_cfg(args):
    cfg = _config(args)
    return cfg.replace("train", seed=_seed(args, cfg.train.seed))


def cmd_train(args):
    cfg = _train_cfg(args)
    store = _guard(args.store, TrainingStore.load, args.store)
    result = train(store, cfg, progress=lambda e, loss: log.info("epoch %d loss %.4f", e, loss))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    # the hash is of the config file as given; a seed override lives in the manifest
    result.params.save(out, _config(args).hash())
    write_manifest(out, "train", cfg, cfg.train.seed, [out], {"epoch_losses": result.epoch_means})
    print(f"saved {result.params.count()} parameters to {out}")
    return 0


def _parse_grid(text):
    """``section.key=v1,v2;section.key=v3`` -> list of (section, key, values)."""
    grid = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        if "=" not in part or "." not in part.split("=", 1)[0]:
            raise ValueError(f"bad grid entry {part!r}; expected section.key=v1,v2")
        name, values = part.split("=", 1)
        section, key = name.strip().split(".", 1)
        grid.append((section, key, [v.strip() for v in values.split(",") if v.strip()]))
    return grid


def _apply_overrides(cfg: RunConfig, overrides):
    for section, key, value in overrides:
        cfg = override(cfg, section, key, value)
    return cfg


def _grid_job(job):
    cfg, store, videos = job
    frames = ev.build_eval_frames(videos, cfg.tracker)
    params = train(store, cfg).params
    return ev.accuracy(frames, ev.model_costs(params, frames, videos))


def cmd_gridsearch(args):
    _check_workers(args)
    base = _train_cfg(args)
    try:
        grid = _parse_grid(args.param_grid)
    except ValueError as exc:
        raise DataError("--param-grid", exc) from exc
    store = _guard(args.store, TrainingStore.load, args.store)
    videos = [_guard(d, preprocess, _load_sequence(d), Path(d).name) for d in args.val]
    combos = list(itertools.product(*[values for _, _, values in grid]))
    cfgs = []
    for combo in combos:
        overrides = [(s, k, v) for (s, k, _), v in zip(grid, combo)]
        cfgs.append(_guard("--param-grid", _apply_overrides, base, overrides))
    jobs = [(c, store, videos) for c in cfgs]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            scores = list(pool.map(_grid_job, jobs))
    else:
        scores = [_grid_job(j) for j in jobs]
    results = [
        {"params": {f"{s}.{k}": v for (s, k, _), v in zip(grid, combo)}, "accuracy": acc}
        for combo, acc in zip(combos, scores)
    ]
    best = max(range(len(results)), key=lambda i: (results[i]["accuracy"], -i))
    doc = {"results": results, "best": results[best]}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "gridsearch", base, base.train.seed, [out])
    for r in results:
        print(json.dumps(r["params"], sort_keys=True), f"{100 * r['accuracy']:.2f}")
    print("best", json.dumps(results[best]["params"], sort_keys=True))
    return 0


def _camel_scorer(cfg: RunConfig, weights, seq: Sequence):
    widths = {BOX_CUE: BOX_CUE_WIDTH}
    for k in cfg.model.cues:
        if k == BOX_CUE:
            continue
        if k not in seq.cue_stores:
            raise DataError(weights, ValueError(f"model uses cue {k} but no cue store for it was given"))
        widths[k] = seq.cue_stores[k].width
    params = _guard(weights, CamelParams.load, weights, cfg.model, widths, cfg.hash())
    return CamelScorer(params)


def cmd_track(args):
    cfg = _config(args)
    seq = _sequence_from_files(args.dets, args.cues, args.seqinfo)
    if args.model == "camel":
        if not args.weights:
            raise UsageError("--weights is required with --model camel")
        scorer = _camel_scorer(cfg, args.weights, seq)
        cues = tuple(k for k in cfg.model.cues if k != BOX_CUE)
    else:
        scorer = HeuristicScorer(args.model, cfg.heuristics)
        cues = (1,) if args.model != "kf" else ()
    frames = _frames(seq, cues, args.cues or args.dets)
    records, _ = run_sequence(frames, scorer, cfg.tracker, seq.info.n_frames)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mot(out, records)
    write_manifest(out, "track", cfg, None, [out], {"model": args.model})
    print(f"{len(records)} boxes, {len({r.id for r in records})} identities -> {out}")
    return 0


def cmd_evaluate(args):
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in METRICS]
    if unknown:
        raise UsageError(f"unknown metric(s): {', '.join(unknown)}")
    gt = _guard(args.gt, read_mot, args.gt)
    pred = _guard(args.pred, read_mot, args.pred)
    scores = {}
    for m in wanted:
        if m == "idf1":
            scores["idf1"] = idf1(gt, pred)
        elif m == "mota":
            cm = clear_mot(gt, pred)
            scores.update(mota=cm.mota, fp=cm.fp, fn=cm.fn, idsw=cm.idsw)
        else:
            scores["assacc"] = sequence_association_accuracy(gt, pred)
    for k, v in scores.items():
        print(f"{k}\t{v:.6f}" if isinstance(v, float) else f"{k}\t{v}")
    if args.json_out:
        out = Path(args.json_out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(scores, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        write_manifest(out, "evaluate", None, None, [out], {"gt": _sha256(args.gt), "pred": _sha256(args.pred)})
    return 0


def cmd_oracle(args):
    cfg = _config(args)
    needs_app = args.kind == "fusion"
    seq = _sequence_from_files(args.dets, args.cues if needs_app else None, args.seqinfo, args.gt)
    frames = _frames(seq, (1,) if needs_app else (), args.cues or args.dets)
    gt = seq.gt_by_frame()
    if args.kind == "association":
        records = run_association_oracle(frames, gt, cfg.tracker, seq.info.n_frames)
        extra = {}
    else:
        records, _, scorer = run_fusion_oracle(frames, gt, cfg.tracker, cfg.heuristics, seq.info.n_frames)
        extra = {"mean_lambda": float(np.mean([lam for _, lam in scorer.chosen])) if scorer.chosen else None}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_mot(out, records)
    write_manifest(out, "oracle", cfg, None, [out], {"kind": args.kind, **extra})
    print(f"{args.kind} oracle: {len(records)} boxes -> {out}")
    return 0


def cmd_ablate(args):
    _check_workers(args)
    cfg = _config(args)
    seed = _seed(args, cfg.synth.seed)
    cfg = cfg.replace("synth", seed=seed).replace("train", seed=seed)
    rows = run_ablation(cfg, live=not args.no_live, workers=args.workers)
    table = format_table(rows)
    sys.stdout.write(table)
    written = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table, encoding="utf-8")
        written.append(out)
    if args.json_out:
        j = Path(args.json_out)
        j.parent.mkdir(parents=True, exist_ok=True)
        j.write_text(json.dumps(rows_to_dicts(rows), indent=2) + "\n", encoding="utf-8")
        written.append(j)
    if written:
        write_manifest(written[0], "ablate", cfg, seed, written)
    return 0


# ---------------------------------------------------------------- parser


class UsageError(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(prog="cameltrack", description="Association-centric multi-object tracking")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--workers", type=int, default=1, help="processes for independent jobs (default 1)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic train/eval suite")
    s.add_argument("--config")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="label detections of GT sequences into a training store")
    s.add_argument("--seqs", nargs="+", required=True, help="sequence directories")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train CAMEL on a training store")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--store", required=True)
    s.add_argument("--out", required=True, help="CAMELWTS weights file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("gridsearch", help="grid search over config values on validation sequences")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--param-grid", required=True, help="section.key=v1,v2;section.key=v3,...")
    s.add_argument("--store", required=True)
    s.add_argument("--val", nargs="+", required=True, help="validation sequence directories")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gridsearch)

    s = sub.add_parser("track", help="run the online tracker on a detection file")
    s.add_argument("--dets", required=True)
    s.add_argument("--cues", help="CAMELCUE directory (default: cues/ beside --dets)")
    s.add_argument("--weights")
    s.add_argument("--config")
    s.add_argument("--seqinfo", help="seqinfo.ini (default: beside --dets)")
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=("camel", "ema", "kf", "fused"), default="camel")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("evaluate", help="score a MOT file against ground truth")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--metrics", default=",".join(METRICS))
    s.add_argument("--json-out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("oracle", help="run an upper-bound oracle tracker")
    s.add_argument("--kind", choices=("association", "fusion"), required=True)
    s.add_argument("--dets", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--cues")
    s.add_argument("--config")
    s.add_argument("--seqinfo")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("ablate", help="run the 12-experiment ablation on a synthetic suite")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="write the table here")
    s.add_argument("--json-out")
    s.add_argument("--no-live", action="store_true", help="skip live-tracker IDF1/MOTA columns")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    if args.workers < 1:
        parser.error("--workers must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
