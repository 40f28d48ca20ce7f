import numpy as np
import pytest

from cameltrack.config import ModelConfig, RunConfig
from cameltrack.domain import BBox, CueTensor, Detection, encode_box_cue
from cameltrack.model import CamelParams

WIDTHS = {0: 5, 1: 8, 2: 6}


def tiny_model_config(**kw):
    base = dict(d_model=8, d_fuse=8, d_emb=6, te_layers=1, gaffe_layers=1, heads=2, d_ff=12)
    base.update(kw)
    return ModelConfig(**base)


def tiny_params(seed=0, **kw):
    cfg = tiny_model_config(**kw)
    widths = {k: WIDTHS[k] for k in cfg.cues}
    return CamelParams.init(cfg, widths, seed=seed)


def make_det(frame, x, y, w=10.0, h=20.0, conf=0.95, app=None, image=(320, 180), index=-1):
    d = Detection(frame, BBox(x, y, w, h), conf, det_index=index)
    d.cues[0] = encode_box_cue(d, *image)
    if app is not None:
        d.cues[1] = CueTensor(1, app)
    return d


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_run_config():
    """Seconds-scale pipeline settings."""
    cfg = RunConfig()
    cfg = cfg.replace("model", d_model=8, d_fuse=8, d_emb=8, te_layers=1, gaffe_layers=1, heads=2, d_ff=16)
    cfg = cfg.replace("train", batch_size=2, pairs=4, bank_size=8, epochs=1, steps_per_epoch=3, te_pretrain_epochs=1, lr=1e-3)
    cfg = cfg.replace("tracker", bank_size=8)
    cfg = cfg.replace("synth", n_objects=4, n_frames=30, image_w=320, image_h=180, size_spread=0.05)
    cfg = cfg.replace("suite", train_sequences=1, eval_sequences=1)
    return cfg


# acceptance criteria report: one line per criterion in the terminal summary
CRITERIA = {}


def record_criterion(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    CRITERIA[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
