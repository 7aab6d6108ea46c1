"""One-layer encoder-decoder with pluggable attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ParameterError
from ..kernels import (
    CellCounter,
    HeposSpec,
    LowRankSpec,
    hepos_attention,
    linformer_attention,
    merge_heads,
    multihead_attention,
    pattern_attention,
    split_heads,
)
from ..patterns import PatternSpec, build_mask, causal_mask
from .tasks import BOS
from ..tensor import Tensor, add, cross_entropy, log_softmax_rows, matmul, relu, reshape, take

ENCDEC_KINDS = ("full", "linformer", "hepos")


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = 16
    dim: int = 32
    heads: int = 4
    ffn: int = 64
    encoder: PatternSpec = field(default_factory=PatternSpec)
    encdec: str = "full"
    s_h: int = 2
    k: int = 4
    src_len: int = 16
    tgt_len: int = 17
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ParameterError(f"heads ({self.heads}) must divide the embedding dim ({self.dim})")
        if self.encdec not in ENCDEC_KINDS:
            raise ParameterError(f"enc-dec attention must be one of {ENCDEC_KINDS}, got {self.encdec!r}")
        if self.encoder.learned or self.encoder.is_encdec:
            raise ParameterError(f"encoder pattern {self.encoder.kind!r} is not supported by the toy model")
        if self.encdec == "hepos" and self.s_h > self.src_len:
            raise ParameterError(f"s_h={self.s_h} exceeds the source length {self.src_len}")
        if self.encdec == "linformer" and self.k > self.src_len:
            raise ParameterError(f"k={self.k} exceeds the source length {self.src_len}")
        build_mask(self.encoder, self.src_len)


def init_params(config: ModelConfig) -> dict[str, Tensor]:
    rng = np.random.default_rng(config.seed)
    d, f, v = config.dim, config.ffn, config.vocab

    def mat(rows, cols):
        return rng.standard_normal((rows, cols)) / math.sqrt(rows)

    shapes = {
        "tok_emb": rng.standard_normal((v, d)),
        "src_pos": rng.standard_normal((config.src_len, d)),
        "tgt_pos": rng.standard_normal((config.tgt_len, d)),
    }
    for block in ("enc_self", "dec_self", "cross"):
        for name in ("q", "k", "v", "o"):
            shapes[f"{block}_{name}"] = mat(d, d)
    for block in ("enc", "dec"):
        shapes[f"{block}_ffn1"] = mat(d, f)
        shapes[f"{block}_ffn1_b"] = np.zeros(f)
        shapes[f"{block}_ffn2"] = mat(f, d)
        shapes[f"{block}_ffn2_b"] = np.zeros(d)
    shapes["out"] = 0.01 * mat(d, v)
    if config.encdec == "linformer":
        shapes["lin_E"] = rng.standard_normal((config.k, config.src_len)) / math.sqrt(config.src_len)
        shapes["lin_F"] = rng.standard_normal((config.k, config.src_len)) / math.sqrt(config.src_len)
    return {name: Tensor(value, requires_grad=True) for name, value in shapes.items()}


@dataclass
class Counters:
    encoder: CellCounter = field(default_factory=CellCounter)
    decoder: CellCounter = field(default_factory=CellCounter)
    encdec: CellCounter = field(default_factory=CellCounter)


class Seq2Seq:
    """Embeddings, one encoder block, one decoder block, output projection."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = init_params(config) if params is None else params

    def _ffn(self, x: Tensor, block: str) -> Tensor:
        p = self.params
        h = relu(add(matmul(x, p[f"{block}_ffn1"]), p[f"{block}_ffn1_b"]))
        return add(matmul(h, p[f"{block}_ffn2"]), p[f"{block}_ffn2_b"])

    def _embed(self, ids: np.ndarray, pos: str) -> Tensor:
        b, length = ids.shape
        table = self.params[pos]
        if length > table.shape[0]:
            raise DimensionError(f"sequence of length {length} exceeds the {pos} table ({table.shape[0]})")
        tok = reshape(take(self.params["tok_emb"], ids, axis=0), (b, length, self.config.dim))
        return add(tok, take(table, np.arange(length), axis=0))

    def encode(self, src: np.ndarray, counters: Counters | None = None) -> Tensor:
        c, p = self.config, self.params
        src = np.atleast_2d(np.asarray(src, dtype=np.intp))
        if src.shape[1] != c.src_len:
            raise DimensionError(f"source length {src.shape[1]} != configured {c.src_len}")
        x = self._embed(src, "src_pos")
        q, k, v = (split_heads(matmul(x, p[f"enc_self_{n}"]), c.heads) for n in "qkv")
        att = merge_heads(pattern_attention(q, k, v, c.encoder, counters.encoder if counters else None))
        x = add(x, matmul(att, p["enc_self_o"]))
        return add(x, self._ffn(x, "enc"))

    def _cross(self, y: Tensor, memory: Tensor, counter) -> Tensor:
        c, p = self.config, self.params
        q = matmul(y, p["cross_q"])
        k = matmul(memory, p["cross_k"])
        v = matmul(memory, p["cross_v"])
        if c.encdec == "hepos":
            return hepos_attention(q, k, v, HeposSpec(c.s_h, c.heads), counter)
        if c.encdec == "linformer":
            spec = LowRankSpec(p["lin_E"], p["lin_F"])
            out = linformer_attention(split_heads(q, c.heads), split_heads(k, c.heads), split_heads(v, c.heads), spec, counter)
            return merge_heads(out)
        return multihead_attention(q, k, v, c.heads, counter)

    def decode(self, memory: Tensor, dec_in: np.ndarray, counters: Counters | None = None) -> Tensor:
        """Logits of shape (batch * length, vocab)."""
        c, p = self.config, self.params
        dec_in = np.atleast_2d(np.asarray(dec_in, dtype=np.intp))
        b, length = dec_in.shape
        y = self._embed(dec_in, "tgt_pos")
        q, k, v = (matmul(y, p[f"dec_self_{n}"]) for n in "qkv")
        att = multihead_attention(q, k, v, c.heads, counters.decoder if counters else None, mask=causal_mask(length))
        y = add(y, matmul(att, p["dec_self_o"]))
        y = add(y, matmul(self._cross(y, memory, counters.encdec if counters else None), p["cross_o"]))
        y = add(y, self._ffn(y, "dec"))
        return reshape(matmul(y, p["out"]), (b * length, c.vocab))

    def forward(self, src, dec_in, counters: Counters | None = None) -> Tensor:
        return self.decode(self.encode(src, counters), dec_in, counters)

    def loss(self, src, dec_in, dec_out) -> Tensor:
        return cross_entropy(self.forward(src, dec_in), dec_out)

    def cells_per_example(self, dec_len: int | None = None) -> dict[str, int]:
        """Attended score cells of one forward pass on a single example."""
        c = self.config
        counters = Counters()
        dec_len = c.tgt_len if dec_len is None else dec_len
        self.forward(np.full((1, c.src_len), 4), np.full((1, dec_len), 4), counters)
        return {"encoder": counters.encoder.cells, "decoder": counters.decoder.cells, "encdec": counters.encdec.cells}

    def log_prob_fn(self, source):
        """Next-token log-probabilities given a generated prefix (BOS is implicit)."""
        memory = self.encode(np.asarray([source]))

        def step(prefix):
            dec_in = np.asarray([[BOS, *prefix]])
            logits = self.decode(memory, dec_in).data[-1]
            return log_softmax_rows(logits)

        return step

    @property
    def max_decode_len(self) -> int:
        return self.config.tgt_len
