"""Causal self-attention sequence encoder (SASRec-style) with tied item embeddings.

The encoder maps a left-padded index window [B, T] to per-position interest
vectors h[B, T, d]. Blocks are pre-norm; a final layer norm is applied before
scoring (recorded in the config). Scoring is the dot product against the same
item-embedding table used on the input side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as tz
from .tensor import Tensor, UsageError

CHECKPOINT_FORMAT = 1


@dataclass
class EncoderConfig:
    n_items: int
    max_len: int = 50
    d: int = 64
    layers: int = 2
    heads: int = 2
    d_ff: int = 256
    dropout: float = 0.2
    final_layer_norm: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise UsageError(f"d={self.d} not divisible by heads={self.heads}")
        if self.n_items < 1 or self.max_len < 1 or self.layers < 1:
            raise UsageError("n_items, max_len and layers must be positive")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class EncoderParams:
    """Named parameter tensors; iteration order is fixed for optimizer state."""

    def __init__(self, config: EncoderConfig, values: dict[str, np.ndarray]):
        self.config = config
        self.tensors: dict[str, Tensor] = {
            name: Tensor(arr, requires_grad=True) for name, arr in values.items()
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: t.data.copy() for k, t in self.tensors.items()})

    @property
    def item_embeddings(self) -> np.ndarray:
        return self.tensors["item_emb"].data


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until within 2 std, matching common init practice."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype)


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Deterministic initialization: truncated normal std 0.02 for weights and
    embeddings, zeros for biases, identity affine for layer norms."""
    rng = np.random.default_rng((seed, 1))
    dt = config.np_dtype
    d, dff = config.d, config.d_ff
    values: dict[str, np.ndarray] = {}

    def tn(shape):
        return _truncated_normal(rng, shape, 0.02, dt)

    values["item_emb"] = tn((config.n_items + 1, d))
    values["pos_emb"] = tn((config.max_len, d))
    for i in range(config.layers):
        p = f"l{i}."
        values[p + "ln1_g"] = np.ones(d, dtype=dt)
        values[p + "ln1_b"] = np.zeros(d, dtype=dt)
        for name in ("wq", "wk", "wv", "wo"):
            values[p + name] = tn((d, d))
            values[p + name.replace("w", "b")] = np.zeros(d, dtype=dt)
        values[p + "ln2_g"] = np.ones(d, dtype=dt)
        values[p + "ln2_b"] = np.zeros(d, dtype=dt)
        values[p + "w1"] = tn((d, dff))
        values[p + "b1"] = np.zeros(dff, dtype=dt)
        values[p + "w2"] = tn((dff, d))
        values[p + "b2"] = np.zeros(d, dtype=dt)
    if config.final_layer_norm:
        values["lnf_g"] = np.ones(d, dtype=dt)
        values["lnf_b"] = np.zeros(d, dtype=dt)
    return EncoderParams(config, values)


def parameter_count(config: EncoderConfig) -> int:
    d, dff = config.d, config.d_ff
    per_layer = 4 * (d * d + d) + (d * dff + dff) + (dff * d + d) + 4 * d
    total = (config.n_items + 1) * d + config.max_len * d + config.layers * per_layer
    if config.final_layer_norm:
        total += 2 * d
    return total


def _layer_norm_affine(x: Tensor, g: Tensor, b: Tensor) -> Tensor:
    return tz.add(tz.mul(tz.layer_norm(x), g), b)


def encode(params: EncoderParams, inputs: np.ndarray, train: bool = False,
           rng: np.random.Generator | None = None) -> Tensor:
    """Forward pass: [B, T] indices -> [B, T, d] interest vectors.

    Position t attends only to non-padding positions <= t; hidden states at
    padding positions are zeroed. Windows are right-aligned: a batch narrower
    than max_len uses the trailing positional embeddings, so cropping leading
    all-padding columns leaves the outputs bit-identical. train=True enables
    dropout (rng required).
    """
    cfg = params.config
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[1] > cfg.max_len:
        raise UsageError(f"inputs must be [B, T<= {cfg.max_len}], got {inputs.shape}")
    if inputs.max(initial=0) > cfg.n_items:
        raise UsageError("item index out of vocabulary range")
    B, T = inputs.shape
    dt = cfg.np_dtype
    p = cfg.dropout
    valid = (inputs != 0)
    valid_f = valid.astype(dt)[:, :, None]  # [B, T, 1]

    x = tz.mul(tz.rows(params["item_emb"], inputs), float(np.sqrt(cfg.d)))
    x = tz.add(x, tz.rows(params["pos_emb"], np.arange(cfg.max_len - T, cfg.max_len)))
    x = tz.dropout(x, p, rng, train)
    x = tz.mul(x, valid_f)

    # attention is allowed to (earlier or same position) AND (non-padding key)
    causal = np.tril(np.ones((T, T), dtype=bool))
    allowed = causal[None, None, :, :] & valid[:, None, None, :]

    H, dh = cfg.heads, cfg.d // cfg.heads
    scale = 1.0 / float(np.sqrt(dh))
    for i in range(cfg.layers):
        pre = f"l{i}."
        a = _layer_norm_affine(x, params[pre + "ln1_g"], params[pre + "ln1_b"])
        q = tz.add(tz.matmul(a, params[pre + "wq"]), params[pre + "bq"])
        k = tz.add(tz.matmul(a, params[pre + "wk"]), params[pre + "bk"])
        v = tz.add(tz.matmul(a, params[pre + "wv"]), params[pre + "bv"])
        q = tz.transpose(tz.reshape(q, (B, T, H, dh)), (0, 2, 1, 3))
        k = tz.transpose(tz.reshape(k, (B, T, H, dh)), (0, 2, 1, 3))
        v = tz.transpose(tz.reshape(v, (B, T, H, dh)), (0, 2, 1, 3))
        scores = tz.mul(tz.matmul(q, tz.transpose(k, (0, 1, 3, 2))), scale)
        attn = tz.softmax(tz.masked_fill(scores, allowed))
        attn = tz.dropout(attn, p, rng, train)
        ctx = tz.reshape(tz.transpose(tz.matmul(attn, v), (0, 2, 1, 3)), (B, T, cfg.d))
        proj = tz.add(tz.matmul(ctx, params[pre + "wo"]), params[pre + "bo"])
        proj = tz.dropout(proj, p, rng, train)
        x = tz.mul(tz.add(x, proj), valid_f)

        f = _layer_norm_affine(x, params[pre + "ln2_g"], params[pre + "ln2_b"])
        f = tz.relu(tz.add(tz.matmul(f, params[pre + "w1"]), params[pre + "b1"]))
        f = tz.dropout(f, p, rng, train)
        f = tz.add(tz.matmul(f, params[pre + "w2"]), params[pre + "b2"])
        f = tz.dropout(f, p, rng, train)
        x = tz.mul(tz.add(x, f), valid_f)

    if cfg.final_layer_norm:
        x = tz.mul(_layer_norm_affine(x, params["lnf_g"], params["lnf_b"]), valid_f)
    return x


def score_all(params: EncoderParams, h: np.ndarray) -> np.ndarray:
    """Dot-product scores of interest vectors against all items 1..n_items.

    h may be [d] or [..., d]; the returned last axis has length n_items and
    column j corresponds to item index j + 1 (padding is excluded).
    """
    h = np.asarray(h)
    if not np.isfinite(h).all():
        raise UsageError("non-finite interest vector")
    return h @ params.item_embeddings[1:].T


_CHECKPOINT_MAGIC = b"SEQRECCP"


def save_checkpoint(path, params: EncoderParams) -> None:
    """Versioned binary dump of all parameter tensors plus the config.

    The container is a JSON header (names, dtypes, shapes) followed by the raw
    C-order array bytes, so identical parameters always produce identical
    files and a load round-trip is bit-exact.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(params.config),
        "tensors": [
            {"name": name, "dtype": str(t.data.dtype), "shape": list(t.data.shape)}
            for name, t in params.tensors.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for t in params.tensors.values():
            fh.write(np.ascontiguousarray(t.data).tobytes())


def load_checkpoint(path) -> EncoderParams:
    with open(path, "rb") as fh:
        if fh.read(8) != _CHECKPOINT_MAGIC:
            raise UsageError(f"{path}: not a checkpoint file")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise UsageError(f"unsupported checkpoint format: {header.get('format')}")
        config = EncoderConfig(**header["config"])
        values = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            dt = np.dtype(spec["dtype"])
            values[spec["name"]] = np.frombuffer(
                fh.read(count * dt.itemsize), dtype=dt
            ).reshape(shape).copy()
    return EncoderParams(config, values)
