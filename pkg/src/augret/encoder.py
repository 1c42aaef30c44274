"""Compact trainable bi-encoder: token embeddings, mean pooling, linear
projection; one parameter set serves both the query and document sides.

    v = proj @ mean(embed[token_i]) + bias

Similarity is the plain inner product; no output normalization by default
(an optional cosine flag exists for fine-tuning parity). Gradients are
exact and analytic; embedding gradients are sparse by touched row.

Parameters are held in float64 in memory and serialized as float32 in the
model file, so repeated runs are bit-reproducible and gradient checks can
run at full double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _util
from .corpus import TokenSeq, Vocab
from .errors import DimMismatch, EmptyInput

MODEL_MAGIC = b"AUGT"
MODEL_VERSION = 1


@dataclass
class EncoderParams:
    embed: np.ndarray  # V x H
    proj: np.ndarray  # H x H
    bias: np.ndarray  # H

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]

    @property
    def dim(self) -> int:
        return self.embed.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.embed.copy(), self.proj.copy(), self.bias.copy())


@dataclass
class GradientSet:
    """Dense proj/bias gradients plus embedding rows touched by the batch."""

    d_embed: dict[int, np.ndarray] = field(default_factory=dict)
    d_proj: np.ndarray | None = None
    d_bias: np.ndarray | None = None

    def add_embed_row(self, row: int, grad: np.ndarray) -> None:
        if row in self.d_embed:
            self.d_embed[row] = self.d_embed[row] + grad
        else:
            self.d_embed[row] = grad.copy()

    def merge(self, other: "GradientSet") -> None:
        for row in sorted(other.d_embed):
            self.add_embed_row(row, other.d_embed[row])
        if other.d_proj is not None:
            self.d_proj = other.d_proj if self.d_proj is None else self.d_proj + other.d_proj
        if other.d_bias is not None:
            self.d_bias = other.d_bias if self.d_bias is None else self.d_bias + other.d_bias


def init_params(vocab_size: int, dim: int, seed: int) -> EncoderParams:
    """embed ~ U(+-1/sqrt(H)), proj = I + U(+-0.01), bias = 0."""
    if vocab_size < 1 or dim < 1:
        raise ValueError("vocab_size and dim must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    embed = rng.uniform(-scale, scale, size=(vocab_size, dim))
    proj = np.eye(dim) + rng.uniform(-0.01, 0.01, size=(dim, dim))
    bias = np.zeros(dim)
    return EncoderParams(embed, proj, bias)


def encode(params: EncoderParams, tokens: TokenSeq) -> np.ndarray:
    if len(tokens) == 0:
        raise EmptyInput("cannot encode an empty token sequence")
    mean = params.embed[tokens.tokens].mean(axis=0)
    return params.proj @ mean + params.bias


def similarity(u: np.ndarray, v: np.ndarray) -> float:
    if u.shape != v.shape:
        raise DimMismatch(f"{u.shape} vs {v.shape}")
    return float(np.dot(u, v))


def encode_backward(params: EncoderParams, tokens: TokenSeq, upstream: np.ndarray) -> GradientSet:
    """Exact gradients of upstream^T . encode(params, tokens)."""
    if len(tokens) == 0:
        raise EmptyInput("cannot backprop through an empty token sequence")
    grads = GradientSet()
    mean = params.embed[tokens.tokens].mean(axis=0)
    grads.d_bias = upstream.copy()
    grads.d_proj = np.outer(upstream, mean)
    per_token = (params.proj.T @ upstream) / len(tokens)
    for t in tokens.tokens:
        grads.add_embed_row(t, per_token)
    return grads


def normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec if norm == 0.0 else vec / norm


def save_model(path: str, params: EncoderParams, vocab: Vocab, metadata: dict) -> None:
    """Magic, version, dims, vocab table, f32 tensors, then a JSON metadata
    record carrying the training config and seed."""
    if len(vocab) != params.vocab_size:
        raise ValueError("vocab size does not match embedding rows")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        _util.write_u32(fh, MODEL_VERSION)
        _util.write_u32(fh, params.dim)
        _util.write_u32(fh, params.vocab_size)
        for term in vocab.id_to_term[1:]:
            _util.write_str(fh, term)
        for tensor in (params.embed, params.proj, params.bias):
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
        _util.write_str(fh, _util.dumps(metadata))


def load_model(path: str) -> tuple[EncoderParams, Vocab, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError(f"not a model file: bad magic {magic!r}")
        version = _util.read_u32(fh)
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model version {version}")
        dim = _util.read_u32(fh)
        vocab_size = _util.read_u32(fh)
        terms = [_util.read_str(fh) for _ in range(vocab_size - 1)]
        def tensor(shape):
            n = int(np.prod(shape))
            arr = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            return arr.astype(np.float64)
        embed = tensor((vocab_size, dim))
        proj = tensor((dim, dim))
        bias = tensor((dim,))
        metadata = json.loads(_util.read_str(fh))
    vocab = Vocab(terms, min_freq=metadata.get("vocab_min_freq", 1))
    return EncoderParams(embed, proj, bias), vocab, metadata
