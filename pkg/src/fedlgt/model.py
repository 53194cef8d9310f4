"""Label-guided transformer over feature tokens and masked label tokens.

The input sequence is the concatenation of image-feature tokens (from a small
backbone over precomputed feature vectors) and one token per class (label
embedding plus state embedding). After the transformer stack, each class
token feeds a per-class linear head; sigmoid of the logit is the predicted
presence probability. Training optimizes binary cross-entropy restricted to
classes whose state is unknown.

Forward and loss are pure functions of their arguments and safe to run
concurrently across simulated clients.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as tc
from .masking import UNKNOWN
from .tensor import ParameterSet, ShapeError, Tensor

__all__ = [
    "ModelConfig",
    "init_params",
    "forward",
    "masked_bce_loss",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]

BACKBONES = ("identity-features", "tiny-patch-encoder")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    feature_dim: int
    embed_dim: int = 64
    num_feature_tokens: int = 4
    transformer_layers: int = 2
    attention_heads: int = 4
    backbone: str = "identity-features"
    learnable_label_embeddings: bool = False
    positional_encoding: bool = True

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by attention_heads {self.attention_heads}"
            )
        if self.feature_dim % self.num_feature_tokens != 0:
            raise ValueError(
                f"feature_dim {self.feature_dim} not divisible by num_feature_tokens "
                f"{self.num_feature_tokens}"
            )
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.transformer_layers < 0 or self.num_feature_tokens < 1:
            raise ValueError("transformer_layers must be >= 0 and num_feature_tokens >= 1")

    @property
    def chunk_width(self) -> int:
        return self.feature_dim // self.num_feature_tokens


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.embed_dim
    shapes: dict[str, tuple[int, ...]] = {}
    cw = cfg.chunk_width
    if cfg.backbone == "identity-features":
        shapes["backbone.proj_w"] = (cw, d)
        shapes["backbone.proj_b"] = (d,)
    else:
        hidden = 2 * d
        shapes["backbone.fc1_w"] = (cw, hidden)
        shapes["backbone.fc1_b"] = (hidden,)
        shapes["backbone.fc2_w"] = (hidden, d)
        shapes["backbone.fc2_b"] = (d,)
    if cfg.positional_encoding:
        shapes["posenc"] = (cfg.num_feature_tokens, d)
    for i in range(cfg.transformer_layers):
        p = f"layer{i}."
        shapes[p + "ln1_g"] = (d,)
        shapes[p + "ln1_b"] = (d,)
        for n in ("q", "k", "v", "o"):
            shapes[p + f"attn_w{n}"] = (d, d)
            shapes[p + f"attn_b{n}"] = (d,)
        shapes[p + "ln2_g"] = (d,)
        shapes[p + "ln2_b"] = (d,)
        shapes[p + "mlp_w1"] = (d, 4 * d)
        shapes[p + "mlp_b1"] = (4 * d,)
        shapes[p + "mlp_w2"] = (4 * d, d)
        shapes[p + "mlp_b2"] = (d,)
    shapes["ln_f_g"] = (d,)
    shapes["ln_f_b"] = (d,)
    shapes["head_w"] = (cfg.num_classes, d)
    shapes["head_b"] = (cfg.num_classes,)
    if cfg.learnable_label_embeddings:
        shapes["label_embeddings"] = (cfg.num_classes, d)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ParameterSet:
    """Seeded init: fan-in scaled uniform weights, zero biases, unit norms.

    The classifier head starts at zero so an untrained model outputs
    probability 0.5 for every class.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    tensors: dict[str, Tensor] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith("_g"):
            value = np.ones(shape)  # layer-norm gains
        elif len(shape) == 1 or name == "head_w":
            value = np.zeros(shape)  # every bias, plus the classifier head
        elif name in ("posenc", "label_embeddings"):
            bound = 1.0 / math.sqrt(cfg.embed_dim)
            value = rng.uniform(-bound, bound, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(value)
    return ParameterSet(tensors)


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return tc.add(tc.matmul(x, w), b)


def _attention(params: ParameterSet, prefix: str, x: Tensor, cfg: ModelConfig) -> Tensor:
    batch, tokens, d = x.shape
    heads = cfg.attention_heads
    head_dim = d // heads

    def split_heads(t: Tensor) -> Tensor:
        return tc.transpose(tc.reshape(t, (batch, tokens, heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(_affine(x, params[prefix + "attn_wq"], params[prefix + "attn_bq"]))
    k = split_heads(_affine(x, params[prefix + "attn_wk"], params[prefix + "attn_bk"]))
    v = split_heads(_affine(x, params[prefix + "attn_wv"], params[prefix + "attn_bv"]))
    scores = tc.scale(tc.matmul(q, tc.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    ctx = tc.matmul(tc.softmax(scores), v)
    merged = tc.reshape(tc.transpose(ctx, (0, 2, 1, 3)), (batch, tokens, d))
    return _affine(merged, params[prefix + "attn_wo"], params[prefix + "attn_bo"])


def _transformer(params: ParameterSet, x: Tensor, cfg: ModelConfig) -> Tensor:
    for i in range(cfg.transformer_layers):
        p = f"layer{i}."
        normed = tc.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        x = tc.add(x, _attention(params, p, normed, cfg))
        normed = tc.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        h = tc.relu(_affine(normed, params[p + "mlp_w1"], params[p + "mlp_b1"]))
        x = tc.add(x, _affine(h, params[p + "mlp_w2"], params[p + "mlp_b2"]))
    return tc.layer_norm(x, params["ln_f_g"], params["ln_f_b"])


def _feature_tokens(params: ParameterSet, features: Tensor, cfg: ModelConfig) -> Tensor:
    batch = features.shape[0]
    chunks = tc.reshape(features, (batch, cfg.num_feature_tokens, cfg.chunk_width))
    if cfg.backbone == "identity-features":
        tokens = _affine(chunks, params["backbone.proj_w"], params["backbone.proj_b"])
    else:
        h = tc.relu(_affine(chunks, params["backbone.fc1_w"], params["backbone.fc1_b"]))
        tokens = _affine(h, params["backbone.fc2_w"], params["backbone.fc2_b"])
    if cfg.positional_encoding:
        tokens = tc.add(tokens, params["posenc"])
    return tokens


def _as_batched_features(features, cfg: ModelConfig) -> Tensor:
    t = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float64))
    if t.ndim == 1:
        t = tc.reshape(t, (1, t.shape[0]))
    if t.ndim != 2 or t.shape[1] != cfg.feature_dim:
        raise ShapeError(
            f"features must have shape (batch, {cfg.feature_dim}), got {t.shape}"
        )
    return t


def forward(params: ParameterSet, features, label_tokens, cfg: ModelConfig) -> Tensor:
    """Per-sample, per-class logits.

    `label_tokens` holds the masked label embeddings: (C, d) shared across the
    batch, (batch, C, d) per-sample, or None to run with feature tokens only
    (the plain classifier used by the no-label-token baseline).
    """
    feats = _as_batched_features(features, cfg)
    batch = feats.shape[0]
    tokens = _feature_tokens(params, feats, cfg)

    if label_tokens is None:
        x = _transformer(params, tokens, cfg)
        pooled = tc.mean(x, axis=1)
        return tc.add(tc.matmul(pooled, tc.transpose(params["head_w"], (1, 0))), params["head_b"])

    lab = label_tokens if isinstance(label_tokens, Tensor) else Tensor(np.asarray(label_tokens))
    if lab.ndim == 2:
        lab = tc.broadcast_to(tc.reshape(lab, (1,) + lab.shape), (batch,) + lab.shape)
    if lab.shape != (batch, cfg.num_classes, cfg.embed_dim):
        raise ShapeError(
            f"label tokens must have shape ({batch}, {cfg.num_classes}, {cfg.embed_dim}), "
            f"got {lab.shape}"
        )
    x = tc.concat([tokens, lab], axis=1)
    x = _transformer(params, x, cfg)
    label_out = tc.slice_axis(x, 1, cfg.num_feature_tokens, cfg.num_feature_tokens + cfg.num_classes)
    logits = tc.sum(tc.mul(label_out, params["head_w"]), axis=-1)
    return tc.add(logits, params["head_b"])


def masked_bce_loss(logits: Tensor, targets, states) -> tuple[Tensor, int]:
    """Two-term binary cross-entropy over unknown-state classes only.

    Per sample, classes with a known state contribute exactly zero; samples
    whose states are all known drop out of the batch mean. Returns the scalar
    loss and the number of contributing samples (0 means no gradient signal).
    """
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    st = np.atleast_2d(np.asarray(states))
    if logits.ndim == 1:
        logits = tc.reshape(logits, (1, logits.shape[0]))
    if y.shape != logits.shape or st.shape != logits.shape:
        raise ShapeError(
            f"logits {logits.shape}, targets {y.shape} and states {st.shape} must agree"
        )
    mask = (st == UNKNOWN).astype(np.float64)
    active = int((mask.sum(axis=1) > 0).sum())
    if active == 0:
        return Tensor(0.0), 0
    # BCE via softplus: y*softplus(-z) + (1-y)*softplus(z), exact and stable
    per_class = tc.add(
        tc.mul(Tensor(y), tc.softplus(tc.neg(logits))),
        tc.mul(Tensor(1.0 - y), tc.softplus(logits)),
    )
    total = tc.sum(tc.mul(Tensor(mask), per_class))
    return tc.scale(total, 1.0 / active), active


def predict(params: ParameterSet, features, label_embeddings, cfg: ModelConfig) -> np.ndarray:
    """Presence probabilities under the all-unknown state composition.

    With the unknown state fixed at zero, composing the all-unknown mask
    leaves the label matrix unchanged, so it is passed through as-is.
    """
    rows = getattr(label_embeddings, "rows", label_embeddings)
    logits = forward(params, features, rows, cfg)
    return 1.0 / (1.0 + np.exp(-logits.data))


# ---------------------------------------------------------------------------
# checkpoint container: format version, config echo, named tensor records
# ---------------------------------------------------------------------------

_MAGIC = b"LGTC1\n"


def _config_blob(cfg: ModelConfig) -> bytes:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg)]
    return ("\n".join(lines) + "\n").encode()

_BOOL_FIELDS = {"learnable_label_embeddings", "positional_encoding"}
_STR_FIELDS = {"backbone"}


def _parse_config(blob: bytes) -> ModelConfig:
    kwargs = {}
    for line in blob.decode().splitlines():
        key, _, value = line.partition("=")
        if key in _BOOL_FIELDS:
            kwargs[key] = value == "True"
        elif key in _STR_FIELDS:
            kwargs[key] = value
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def _write_record(buf, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_record(buf) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(buf, 4))
    name = _read_exact(buf, name_len).decode()
    (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim)) if ndim else ()
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").reshape(shape)
    return name, data.astype(np.float64)


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise EOFError("truncated checkpoint file")
    return data


def save_checkpoint(
    path, cfg: ModelConfig, params: ParameterSet, frozen: dict[str, np.ndarray] | None = None
) -> None:
    """Write the named-tensor container; round-trips bit-exactly.

    `frozen` records (e.g. the fixed label-embedding matrix) are stored under
    a ``frozen/`` prefix; they are not model parameters and never aggregate.
    """
    buf = io.BytesIO()
    buf.write(_MAGIC)
    blob = _config_blob(cfg)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    frozen = frozen or {}
    buf.write(struct.pack("<I", len(params) + len(frozen)))
    for name in params.names():
        _write_record(buf, name, params[name].data)
    for name in sorted(frozen):
        _write_record(buf, "frozen/" + name, np.asarray(frozen[name], dtype=np.float64))
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, ParameterSet, dict[str, np.ndarray]]:
    buf = io.BytesIO(Path(path).read_bytes())
    magic = buf.read(len(_MAGIC))
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
    (blob_len,) = struct.unpack("<I", _read_exact(buf, 4))
    cfg = _parse_config(_read_exact(buf, blob_len))
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    tensors: dict[str, Tensor] = {}
    frozen: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr = _read_record(buf)
        if name.startswith("frozen/"):
            frozen[name[len("frozen/"):]] = arr
        else:
            tensors[name] = Tensor(arr)
    return cfg, ParameterSet(tensors), frozen
