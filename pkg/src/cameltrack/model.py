"""The CAMEL association network.

Each cue k of each active object is a temporal sequence of cue vectors. A
per-cue Temporal Encoder (TE) turns that sequence into one vector through a
prepended learned CLS token. GAFFE projects every cue vector to a common
width, sums the present ones into one token per object, runs self-attention
across all objects of a scene and emits a unit-norm embedding per object.

Parameter names follow ``te.{k}.…`` and ``gaffe.…``; see
:meth:`CamelParams.names`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .config import ModelConfig
from .dataio import load_weights, save_weights
from .domain import ActiveSet, WidthMismatch

MASK_VALUE = -1e9


class EmptySequence(ValueError):
    pass


class NegativeAge(ValueError):
    pass


class MissingMandatoryCue(ValueError):
    pass


def temporal_positional_encoding(age, d_model):
    """Sinusoidal encoding of a non-negative age; works elementwise on arrays
    and appends a trailing axis of width ``d_model``."""
    age = np.asarray(age, dtype=np.float64)
    if np.any(age < 0):
        raise NegativeAge(f"age must be >= 0, got min {age.min()}")
    if d_model % 2:
        raise ValueError("d_model must be even")
    i = np.arange(d_model // 2, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (2.0 * i / d_model)
    angle = age[..., None] * freq
    pe = np.empty(age.shape + (d_model,))
    pe[..., 0::2] = np.sin(angle)
    pe[..., 1::2] = np.cos(angle)
    return pe


# ---------------------------------------------------------------- parameters


def _encoder_layer_shapes(prefix, d, d_ff):
    return {
        f"{prefix}ln1.weight": ("ones", (d,)),
        f"{prefix}ln1.bias": ("zeros", (d,)),
        f"{prefix}attn.qkv.weight": ("xavier", (d, 3 * d)),
        f"{prefix}attn.qkv.bias": ("zeros", (3 * d,)),
        f"{prefix}attn.out.weight": ("xavier", (d, d)),
        f"{prefix}attn.out.bias": ("zeros", (d,)),
        f"{prefix}ln2.weight": ("ones", (d,)),
        f"{prefix}ln2.bias": ("zeros", (d,)),
        f"{prefix}ff.fc1.weight": ("xavier", (d, d_ff)),
        f"{prefix}ff.fc1.bias": ("zeros", (d_ff,)),
        f"{prefix}ff.fc2.weight": ("xavier", (d_ff, d)),
        f"{prefix}ff.fc2.bias": ("zeros", (d,)),
    }


def parameter_shapes(cfg: ModelConfig, cue_widths: dict):
    shapes = {}
    if cfg.use_te:
        for k in cfg.cues:
            shapes[f"te.{k}.in_proj.weight"] = ("xavier", (cue_widths[k], cfg.d_model))
            shapes[f"te.{k}.in_proj.bias"] = ("zeros", (cfg.d_model,))
            shapes[f"te.{k}.cls"] = ("normal", (cfg.d_model,))
            for l in range(cfg.te_layers):
                shapes.update(_encoder_layer_shapes(f"te.{k}.layer.{l}.", cfg.d_model, cfg.d_ff))
            shapes[f"te.{k}.ln_final.weight"] = ("ones", (cfg.d_model,))
            shapes[f"te.{k}.ln_final.bias"] = ("zeros", (cfg.d_model,))
    if cfg.use_gaffe:
        for k in cfg.cues:
            width_in = cfg.d_model if cfg.use_te else cue_widths[k]
            shapes[f"gaffe.proj.{k}.weight"] = ("xavier", (width_in, cfg.d_fuse))
            shapes[f"gaffe.proj.{k}.bias"] = ("zeros", (cfg.d_fuse,))
        for l in range(cfg.gaffe_layers):
            shapes.update(_encoder_layer_shapes(f"gaffe.layer.{l}.", cfg.d_fuse, 2 * cfg.d_fuse))
        shapes["gaffe.ln_final.weight"] = ("ones", (cfg.d_fuse,))
        shapes["gaffe.ln_final.bias"] = ("zeros", (cfg.d_fuse,))
        shapes["gaffe.out.weight"] = ("xavier", (cfg.d_fuse, cfg.d_emb))
        shapes["gaffe.out.bias"] = ("zeros", (cfg.d_emb,))
    return shapes


@dataclass
class CamelParams:
    cfg: ModelConfig
    cue_widths: dict
    tensors: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.cfg.use_gaffe and len(self.cfg.cues) != 1:
            raise ValueError("without GAFFE the model embeds exactly one cue")
        if not self.cfg.use_te and not self.cfg.use_gaffe:
            raise ValueError("at least one of TE or GAFFE is required")
        if 0 not in self.cfg.cues and self.cfg.use_gaffe:
            raise ValueError("cue 0 is mandatory for the fused model")
        for d in (self.cfg.d_model, self.cfg.d_fuse):
            if d % self.cfg.heads:
                raise ValueError(f"width {d} not divisible by {self.cfg.heads} heads")

    @classmethod
    def init(cls, cfg: ModelConfig, cue_widths: dict, seed=0):
        rng = np.random.default_rng(seed)
        params = cls(cfg, dict(cue_widths))
        for name, (kind, shape) in parameter_shapes(cfg, cue_widths).items():
            if kind == "xavier":
                limit = np.sqrt(6.0 / (shape[0] + shape[1]))
                data = rng.uniform(-limit, limit, size=shape)
            elif kind == "normal":
                data = rng.normal(0.0, 0.02, size=shape)
            elif kind == "ones":
                data = np.ones(shape)
            else:
                data = np.zeros(shape)
            params.tensors[name] = dc.Tensor(data, requires_grad=True)
        return params

    def names(self):
        return list(self.tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def subset(self, prefix):
        return [t for n, t in self.tensors.items() if n.startswith(prefix)]

    def state_dict(self):
        return {n: t.data.copy() for n, t in self.tensors.items()}

    def load_state_dict(self, arrays):
        expected = parameter_shapes(self.cfg, self.cue_widths)
        if set(arrays) != set(expected):
            missing = sorted(set(expected) - set(arrays))
            extra = sorted(set(arrays) - set(expected))
            raise ValueError(f"weights mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, (_, shape) in expected.items():
            if tuple(arrays[name].shape) != shape:
                raise ValueError(f"{name}: shape {arrays[name].shape}, expected {shape}")
            self.tensors[name] = dc.Tensor(arrays[name], requires_grad=True)
        return self

    def count(self):
        return sum(t.data.size for t in self.tensors.values())

    def save(self, path, config_hash):
        save_weights(path, self.state_dict(), config_hash)

    @classmethod
    def load(cls, path, cfg: ModelConfig, cue_widths: dict, expect_hash=None):
        config_hash, arrays = load_weights(path)
        if expect_hash is not None and config_hash != expect_hash:
            raise ValueError("weights were trained under a different configuration")
        params = cls(cfg, dict(cue_widths))
        params.tensors = {}
        return params.load_state_dict(arrays)


# ---------------------------------------------------------------- encoder blocks


def self_attention(h, p, prefix, heads, key_bias=None):
    B, L, d = h.shape
    dh = d // heads
    qkv = dc.linear(h, p[f"{prefix}attn.qkv.weight"], p[f"{prefix}attn.qkv.bias"])
    qkv = dc.transpose(dc.reshape(qkv, (B, L, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = dc.mul(dc.matmul(q, dc.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    if key_bias is not None:
        scores = dc.add(scores, key_bias)
    attn = dc.softmax_lastdim(scores)
    out = dc.reshape(dc.transpose(dc.matmul(attn, v), (0, 2, 1, 3)), (B, L, d))
    return dc.linear(out, p[f"{prefix}attn.out.weight"], p[f"{prefix}attn.out.bias"])


def encoder_layer(x, p, prefix, heads, key_bias=None):
    """Pre-norm transformer encoder layer."""
    h = dc.layer_norm(x, p[f"{prefix}ln1.weight"], p[f"{prefix}ln1.bias"])
    x = dc.add(x, self_attention(h, p, prefix, heads, key_bias))
    h = dc.layer_norm(x, p[f"{prefix}ln2.weight"], p[f"{prefix}ln2.bias"])
    h = dc.gelu(dc.linear(h, p[f"{prefix}ff.fc1.weight"], p[f"{prefix}ff.fc1.bias"]))
    return dc.add(x, dc.linear(h, p[f"{prefix}ff.fc2.weight"], p[f"{prefix}ff.fc2.bias"]))


def _key_bias(valid):
    return np.where(valid, 0.0, MASK_VALUE)[:, None, None, :]


def temporal_encode(params: CamelParams, k, values, ages, valid):
    """Encode a padded batch of cue-k sequences.

    values: (n, L, width); ages: (n, L); valid: (n, L) bool with at least one
    valid token per row. Returns the CLS outputs, Tensor (n, d_model).
    """
    cfg = params.cfg
    n, L, width = values.shape
    if width != params.cue_widths[k]:
        raise WidthMismatch(f"cue {k}: width {width}, expected {params.cue_widths[k]}")
    if L == 0 or not np.all(valid.any(axis=1)):
        raise EmptySequence(f"cue {k}: every sequence needs at least one token")
    pe = temporal_positional_encoding(np.where(valid, ages, 0), cfg.d_model)
    x = dc.add(dc.linear(values, params[f"te.{k}.in_proj.weight"], params[f"te.{k}.in_proj.bias"]), pe)
    cls = dc.add(np.zeros((n, 1, cfg.d_model)), params[f"te.{k}.cls"])
    x = dc.concat([cls, x], axis=1)
    bias = _key_bias(np.concatenate([np.ones((n, 1), dtype=bool), valid], axis=1))
    for l in range(cfg.te_layers):
        x = encoder_layer(x, params.tensors, f"te.{k}.layer.{l}.", cfg.heads, bias)
    return dc.layer_norm(x[:, 0, :], params[f"te.{k}.ln_final.weight"], params[f"te.{k}.ln_final.bias"])


def gaffe_encode(params: CamelParams, fused, obj_valid=None):
    """fused: Tensor (B, n, d_fuse). Returns unit-norm (B, n, d_emb)."""
    cfg = params.cfg
    bias = None if obj_valid is None else _key_bias(obj_valid)
    x = fused
    for l in range(cfg.gaffe_layers):
        x = encoder_layer(x, params.tensors, f"gaffe.layer.{l}.", cfg.heads, bias)
    x = dc.layer_norm(x, params["gaffe.ln_final.weight"], params["gaffe.ln_final.bias"])
    x = dc.linear(x, params["gaffe.out.weight"], params["gaffe.out.bias"])
    return dc.l2_normalize_lastdim(x)


# ---------------------------------------------------------------- object batches


@dataclass
class CueBatch:
    """Cue-k sequences of n objects, bucketed by length for padding."""

    values: np.ndarray  # (n, L, width)
    ages: np.ndarray  # (n, L)
    valid: np.ndarray  # (n, L)
    present: np.ndarray  # (n,)


def pack_sequences(seqs, width):
    """seqs: list of (values (L_i, width), ages (L_i,)) or None for an absent
    cue. Absent cues become one zero token so their garbage never reaches
    the network; ``present`` records which rows are real."""
    n = len(seqs)
    lengths = np.array([1 if s is None else len(s[1]) for s in seqs], dtype=np.int64)
    L = int(lengths.max()) if n else 1
    values = np.zeros((n, L, width))
    ages = np.zeros((n, L))
    valid = np.zeros((n, L), dtype=bool)
    present = np.zeros(n, dtype=bool)
    for i, s in enumerate(seqs):
        if s is None:
            valid[i, 0] = True
            continue
        v, a = s
        if len(a) == 0:
            raise EmptySequence(f"object {i} has an empty present cue sequence")
        v = np.asarray(v, dtype=np.float64).reshape(len(a), -1)
        if v.shape[1] != width:
            raise WidthMismatch(f"object {i}: cue width {v.shape[1]}, expected {width}")
        values[i, : len(a)] = v
        ages[i, : len(a)] = a
        valid[i, : len(a)] = True
        present[i] = True
    return CueBatch(values, ages, valid, present)


def encode_cue(params: CamelParams, k, seqs):
    """TE_k over a list of sequences, bucketed into length-1 and longer
    rows. Returns (Tensor (n, width_out), present mask)."""
    width = params.cue_widths[k]
    if not params.cfg.use_te:
        last = [None if s is None else (np.asarray(s[0]).reshape(len(s[1]), -1)[-1:], np.asarray(s[1])[-1:]) for s in seqs]
        batch = pack_sequences(last, width)
        return dc.Tensor(batch.values[:, 0, :]), batch.present
    lengths = np.array([1 if s is None else len(s[1]) for s in seqs])
    buckets = [np.flatnonzero(lengths == 1), np.flatnonzero(lengths > 1)]
    outs, order, present = [], [], np.zeros(len(seqs), dtype=bool)
    for idx in buckets:
        if len(idx) == 0:
            continue
        batch = pack_sequences([seqs[i] for i in idx], width)
        outs.append(temporal_encode(params, k, batch.values, batch.ages, batch.valid))
        order.append(idx)
        present[idx] = batch.present
    order = np.concatenate(order)
    y = outs[0] if len(outs) == 1 else dc.concat(outs, axis=0)
    if not np.array_equal(order, np.arange(len(seqs))):
        y = y[np.argsort(order, kind="stable")]
    return y, present


def fuse_cues(params: CamelParams, encoded):
    """Sum of per-cue projections over present cues. encoded: {k: (y, present)}."""
    fused = None
    for k in params.cfg.cues:
        y, present = encoded[k]
        term = dc.linear(y, params[f"gaffe.proj.{k}.weight"], params[f"gaffe.proj.{k}.bias"])
        if not present.all():
            term = dc.mul(term, present.astype(np.float64)[:, None])
        fused = term if fused is None else dc.add(fused, term)
    return fused


def embed_objects(params: CamelParams, objects, groups=None, canonical=True):
    """Embed objects given as ``{k: (values, ages) or None}`` dicts.

    ``groups`` lists index arrays; objects in one group attend to each other
    in GAFFE (one group per scene). Default: a single group. With
    ``canonical`` each group is put in a content-determined order before
    GAFFE, which makes the result exactly equivariant to input order.
    Returns Tensor (n_objects, d_emb).
    """
    cfg = params.cfg
    for i, obj in enumerate(objects):
        if obj.get(0) is None and 0 in cfg.cues:
            raise MissingMandatoryCue(f"object {i} lacks cue 0")
    encoded = {k: encode_cue(params, k, [obj.get(k) for obj in objects]) for k in cfg.cues}
    if not cfg.use_gaffe:
        (k,) = cfg.cues
        return dc.l2_normalize_lastdim(encoded[k][0])

    fused = fuse_cues(params, encoded)
    n = len(objects)
    if groups is None:
        groups = [np.arange(n)]
    groups = [np.asarray(g, dtype=np.int64) for g in groups]
    if canonical:
        groups = [g[np.lexsort(fused.data[g].T[::-1])] for g in groups]
    n_max = max(len(g) for g in groups)
    B = len(groups)
    gather = np.zeros((B, n_max), dtype=np.int64)
    obj_valid = np.zeros((B, n_max), dtype=bool)
    for b, g in enumerate(groups):
        gather[b, : len(g)] = g
        obj_valid[b, : len(g)] = True
    z = gaffe_encode(params, fused[gather], None if obj_valid.all() else obj_valid)
    flat_pos = np.empty(n, dtype=np.int64)
    for b, g in enumerate(groups):
        flat_pos[g] = b * n_max + np.arange(len(g))
    return dc.reshape(z, (B * n_max, cfg.d_emb))[flat_pos]


def detection_sequence(d, k, t_cur):
    cue = d.cues.get(k)
    if cue is None:
        return None
    return cue.values[None, :], np.array([t_cur - d.frame], dtype=np.float64)


def tracklet_sequence(t, k, t_cur):
    dets = [d for d in t.bank if k in d.cues]
    if not dets:
        return None
    return (
        np.stack([d.cues[k].values for d in dets]),
        np.array([t_cur - d.frame for d in dets], dtype=np.float64),
    )


def camel_forward(active: ActiveSet, params: CamelParams, t_cur=None, tracklet_transform=None):
    """Embeddings for the M tracklets followed by the N detections, as a
    float64 array (M+N, d_emb). ``tracklet_transform`` may rewrite each
    tracklet's object dict before encoding."""
    if t_cur is None:
        t_cur = active.frame
    if t_cur is None:
        raise ValueError("t_cur is required when there are no detections")
    for t in active.tracklets:
        if not t.bank:
            raise EmptySequence(f"tracklet {t.identity} has an empty bank")
    objects = [{k: tracklet_sequence(t, k, t_cur) for k in params.cfg.cues} for t in active.tracklets]
    if tracklet_transform is not None:
        objects = [tracklet_transform(o) for o in objects]
    objects += [{k: detection_sequence(d, k, t_cur) for k in params.cfg.cues} for d in active.detections]
    if not objects:
        return np.zeros((0, params.cfg.d_emb if params.cfg.use_gaffe else params.cfg.d_model))
    with dc.row_invariant_matmul():
        return embed_objects(params, objects).data
