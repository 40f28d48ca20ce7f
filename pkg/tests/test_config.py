import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cameltrack.config import ConfigInvalid, RunConfig, dumps, load_config, loads, override, save_config


def test_round_trip_defaults(tmp_path):
    cfg = RunConfig()
    assert loads(dumps(cfg)) == cfg
    save_config(tmp_path / "c.ini", cfg)
    assert load_config(tmp_path / "c.ini").hash() == cfg.hash()


@given(st.floats(1e-6, 1.0), st.integers(1, 64), st.booleans(), st.sampled_from(["linear", "sinusoidal", "random-walk"]))
@settings(max_examples=50, deadline=None)
def test_round_trip_values(lr, bank, enabled, motion):
    cfg = RunConfig().replace("train", lr=lr, bank_size=bank).replace("augment", enabled=enabled).replace("synth", motion=motion)
    assert loads(dumps(cfg)) == cfg


def test_partial_file_uses_defaults():
    cfg = loads("[train]\nlr = 0.5\n")
    assert cfg.train.lr == 0.5
    assert cfg.replace("train", lr=RunConfig().train.lr) == RunConfig()


def test_occlusion_window_parses():
    assert loads("[synth]\nocclusion_window = 10,20\n").synth.occlusion_window == (10, 20)


@pytest.mark.parametrize("text", [
    "[train]\nbogus = 1\n",
    "[nope]\nx = 1\n",
    "[train]\nlr = fast\n",
    "[augment]\nenabled = maybe\n",
    "[synth]\nmiss_rate = 2.0\n",
])
def test_invalid(text):
    with pytest.raises(ConfigInvalid):
        loads(text)


def test_override():
    cfg = override(RunConfig(), "train", "lr", "0.01")
    assert cfg.train.lr == 0.01
    assert override(cfg, "augment", "enabled", "false").augment.enabled is False
    with pytest.raises(ConfigInvalid):
        override(cfg, "train", "nope", "1")
    with pytest.raises(ConfigInvalid):
        override(cfg, "nope", "lr", "1")
    with pytest.raises(ConfigInvalid):
        override(cfg, "train", "epochs", "x")


def test_hash_tracks_content():
    a = RunConfig()
    assert a.hash() == RunConfig().hash()
    assert a.hash() != a.replace("train", seed=1).hash()
    assert len(a.hash()) == 32
