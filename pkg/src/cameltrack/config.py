"""Run configuration: one INI file per experiment, hashed into weights files."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path


class ConfigInvalid(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    d_fuse: int = 128
    d_emb: int = 128
    te_layers: int = 2
    gaffe_layers: int = 2
    heads: int = 4
    d_ff: int = 256
    cues: tuple = (0, 1, 2)
    use_te: bool = True
    use_gaffe: bool = True

    @classmethod
    def full_scale(cls):
        return cls(d_model=256, d_fuse=512, d_emb=512, te_layers=4, gaffe_layers=4, heads=8, d_ff=1024)


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    pairs: int = 32
    bank_size: int = 50
    epochs: int = 10
    steps_per_epoch: int = 50
    te_pretrain_epochs: int = 2
    lr: float = 1e-4
    temperature: float = 0.1
    max_gap: int = 60


@dataclass
class AugmentConfig:
    enabled: bool = True
    p_swap: float = 0.3
    p_drop: float = 0.5
    recency_exponent: float = 2.0
    p_cue_drop: float = 0.1
    sigma_box: float = 0.01
    sigma_appearance: float = 0.05
    sigma_keypoints: float = 0.02

    def __post_init__(self):
        for name in ("p_swap", "p_drop", "p_cue_drop"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        if self.recency_exponent < 0:
            raise ValueError("recency_exponent must be >= 0")


@dataclass
class TrackerConfig:
    det_conf_min: float = 0.4
    init_conf_min: float = 0.9
    sim_threshold: float = 0.1
    min_hits: int = 0
    max_pause_frames: int = 60
    bank_size: int = 50

    def __post_init__(self):
        if self.init_conf_min < self.det_conf_min:
            raise ValueError("init_conf_min must be >= det_conf_min")
        if self.max_pause_frames < 1 or self.min_hits < 0 or self.bank_size < 1:
            raise ValueError("invalid life-cycle limits")


@dataclass
class HeuristicConfig:
    ema_alpha: float = 0.9
    fusion_lambda: float = 0.5
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160


@dataclass
class SynthConfig:
    n_objects: int = 8
    n_frames: int = 200
    image_w: int = 1280
    image_h: int = 720
    motion: str = "random-walk"
    speed: float = 6.0
    size_spread: float = 0.4
    occlusion_rate: float = 0.01
    occlusion_min: int = 5
    occlusion_max: int = 25
    occlusion_window: tuple = ()
    reentry_rate: float = 0.2
    appearance_dim: int = 16
    class_separation: float = 0.5
    appearance_noise: float = 0.5
    box_noise: float = 0.03
    keypoint_joints: int = 5
    keypoint_noise: float = 0.03
    miss_rate: float = 0.05
    fp_rate: float = 0.02
    appearance_burst_rate: float = 0.0
    motion_burst_rate: float = 0.0
    burst_min: int = 5
    burst_max: int = 15
    burst_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        rates = (
            "occlusion_rate", "reentry_rate", "miss_rate", "fp_rate", "class_separation",
            "appearance_burst_rate", "motion_burst_rate",
        )
        for name in rates:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"{name} must lie in [0, 1], got {v}")
        if self.motion not in ("linear", "sinusoidal", "random-walk"):
            raise ConfigInvalid(f"unknown motion model {self.motion!r}")
        if self.n_objects < 0 or self.n_frames < 1 or self.image_w < 16 or self.image_h < 16:
            raise ConfigInvalid("invalid sequence size")
        if not 0.0 <= self.size_spread < 1.0:
            raise ConfigInvalid("size_spread must lie in [0, 1)")
        if self.appearance_noise < 0 or self.box_noise < 0 or self.keypoint_noise < 0:
            raise ConfigInvalid("noise levels must be >= 0")
        if self.occlusion_window and len(self.occlusion_window) != 2:
            raise ConfigInvalid("occlusion_window is (first_frame, last_frame)")
        if not 1 <= self.burst_min <= self.burst_max or self.burst_scale < 0:
            raise ConfigInvalid("invalid burst settings")
        if not 1 <= self.occlusion_min <= self.occlusion_max:
            raise ConfigInvalid("invalid occlusion span")


@dataclass
class SuiteConfig:
    train_sequences: int = 6
    eval_sequences: int = 2
    eval_seed_offset: int = 1000


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    heuristics: HeuristicConfig = field(default_factory=HeuristicConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    suite: SuiteConfig = field(default_factory=SuiteConfig)

    def replace(self, section, **changes):
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def to_text(self):
        return dumps(self)

    def hash(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigInvalid(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw


def dumps(cfg: RunConfig) -> str:
    lines = []
    for section in dataclasses.fields(cfg):
        sub = getattr(cfg, section.name)
        lines.append(f"[{section.name}]")
        for f in dataclasses.fields(sub):
            lines.append(f"{f.name} = {_format(getattr(sub, f.name))}")
        lines.append("")
    return "\n".join(lines)


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    default = RunConfig()
    sections = {}
    for section in dataclasses.fields(default):
        sub = getattr(default, section.name)
        values = {}
        if parser.has_section(section.name):
            known = {f.name: getattr(sub, f.name) for f in dataclasses.fields(sub)}
            for key, raw in parser.items(section.name):
                if key not in known:
                    raise ConfigInvalid(f"unknown key [{section.name}] {key}")
                try:
                    values[key] = _parse(raw, known[key])
                except ValueError as exc:
                    raise ConfigInvalid(f"[{section.name}] {key}: {exc}") from None
        sections[section.name] = type(sub)(**{**{f.name: getattr(sub, f.name) for f in dataclasses.fields(sub)}, **values})
    for name in parser.sections():
        if name not in sections:
            raise ConfigInvalid(f"unknown section [{name}]")
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    return loads(Path(path).read_text(encoding="utf-8"))


def save_config(path, cfg: RunConfig):
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def override(cfg: RunConfig, section, key, raw) -> RunConfig:
    """Set ``[section] key`` from its text form, validated like a loaded file."""
    sub = getattr(cfg, section, None)
    if sub is None or not dataclasses.is_dataclass(sub) or key not in {f.name for f in dataclasses.fields(sub)}:
        raise ConfigInvalid(f"unknown parameter {section}.{key}")
    try:
        value = _parse(str(raw), getattr(sub, key))
    except ValueError as exc:
        raise ConfigInvalid(f"{section}.{key}: {exc}") from None
    return cfg.replace(section, **{key: value})
