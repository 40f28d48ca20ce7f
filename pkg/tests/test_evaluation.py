import numpy as np
import pytest

from cameltrack.act.store import preprocess
from cameltrack.config import SynthConfig, TrackerConfig
from cameltrack.evaluation import (
    accuracy, build_eval_frames, fixed_fusion_costs, fusion_oracle_accuracy, heuristic_components, label_costs,
    model_costs,
)
from cameltrack.oracles import LAMBDA_GRID
from cameltrack.synthgen import generate
from cameltrack.model import CamelParams
from conftest import tiny_model_config


@pytest.fixture(scope="module")
def setup():
    syn = SynthConfig(n_objects=5, n_frames=50, image_w=320, image_h=180, appearance_noise=1.0, box_noise=0.03, seed=2)
    videos = [preprocess(generate(syn).sequence)]
    frames = build_eval_frames(videos, TrackerConfig(bank_size=6, max_pause_frames=20))
    return videos, frames


def test_frames_are_consistent(setup):
    videos, frames = setup
    v = videos[0]
    assert frames
    for ef in frames:
        assert len(ef.banks) == len(ef.track_labels)
        assert len(set(ef.track_labels.tolist())) == len(ef.track_labels)
        for lbl, rows in zip(ef.track_labels, ef.banks):
            assert 1 <= len(rows) <= 6
            assert np.all(v.labels[rows] == lbl)
            assert np.all(v.frames[rows] < ef.frame) and np.all(v.frames[rows] >= ef.frame - 20)
        assert np.all(v.frames[ef.det_rows] == ef.frame)


def test_label_costs_are_perfect(setup):
    _, frames = setup
    assert accuracy(frames, label_costs(frames)) == 1.0


def test_fusion_oracle_dominates_fixed_lambdas(setup):
    videos, frames = setup
    comps = heuristic_components(frames, videos)
    oracle = fusion_oracle_accuracy(frames, comps)
    for lam in LAMBDA_GRID:
        assert oracle >= accuracy(frames, fixed_fusion_costs(comps, lam))


def test_model_costs_shape(setup):
    videos, frames = setup
    widths = {k: videos[0].cues[k].shape[1] for k in (0, 1, 2)}
    params = CamelParams.init(tiny_model_config(), widths, seed=0)
    costs = model_costs(params, frames[:5], videos)
    for ef, c in zip(frames[:5], costs):
        assert c.shape == (len(ef.track_labels), len(ef.det_rows))
        assert np.all(np.isfinite(c))
