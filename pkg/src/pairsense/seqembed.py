"""Sliding-window-attention encoder turning a frame sequence into one fixed vector.

Each frame is linearly projected to a value embedding, a learned global token
is prepended, positional encodings are summed on, and stacked attention +
feedforward blocks run with a banded attention mask (the global token attends
to and is attended by everything). The final-layer state at the global-token
position, linearly projected, is the utterance embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensorcore as tc
from .errors import DataError
from .tensorcore import Module, Tensor

POSITIONAL_TYPES = ("sinusoidal", "learned", "none")


@dataclass(frozen=True)
class SeqEncoderConfig:
    value_embed_dim: int = 64
    output_dim: int = 768
    n_layers: int = 2
    n_heads: int = 4
    window_size: int = 65
    max_sequence: int = 4096
    positional: str = "sinusoidal"
    ffn_mult: int = 2

    def __post_init__(self):
        if self.output_dim % self.n_heads != 0:
            raise DataError(f"output_dim {self.output_dim} not divisible by n_heads {self.n_heads}")
        if self.value_embed_dim % self.n_heads != 0:
            raise DataError(f"value_embed_dim {self.value_embed_dim} not divisible by n_heads {self.n_heads}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise DataError(f"window_size must be odd and >= 1, got {self.window_size}")
        if self.max_sequence < 1 or self.n_layers < 1:
            raise DataError("max_sequence and n_layers must be >= 1")
        if self.positional not in POSITIONAL_TYPES:
            raise DataError(f"positional must be one of {POSITIONAL_TYPES}, got {self.positional!r}")

    def to_dict(self) -> dict:
        return {
            "value_embed_dim": self.value_embed_dim, "output_dim": self.output_dim,
            "n_layers": self.n_layers, "n_heads": self.n_heads,
            "window_size": self.window_size, "max_sequence": self.max_sequence,
            "positional": self.positional, "ffn_mult": self.ffn_mult,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeqEncoderConfig":
        return cls(**d)


def sinusoidal_table(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / dim)
    return np.where(i.astype(np.int64) % 2 == 0, np.sin(angles), np.cos(angles))


@lru_cache(maxsize=64)
def window_mask(n_tokens: int, window_size: int) -> np.ndarray:
    """Additive mask (0 allowed, -inf blocked): banded among frame tokens,
    token 0 (global) fully connected in both directions."""
    half = (window_size - 1) // 2
    idx = np.arange(n_tokens)
    allowed = np.abs(idx[:, None] - idx[None, :]) <= half
    allowed[0, :] = True
    allowed[:, 0] = True
    mask = np.where(allowed, 0.0, -np.inf)
    mask.flags.writeable = False
    return mask


class TokenEmbedder(Module):
    """Per-frame linear value embedding + global token + positional encoding."""

    def __init__(self, d_in: int, embed_dim: int, max_sequence: int, positional: str,
                 rng: np.random.Generator):
        super().__init__()
        if positional not in POSITIONAL_TYPES:
            raise DataError(f"unknown positional type {positional!r}")
        self.d_in = d_in
        self.embed_dim = embed_dim
        self.max_sequence = max_sequence
        self.positional = positional
        self.w_value = self.register("value.W", tc.glorot(rng, (d_in, embed_dim)))
        self.b_value = self.register("value.b", np.zeros(embed_dim))
        self.global_token = self.register("global_token", 0.02 * rng.standard_normal(embed_dim))
        if positional == "learned":
            self.pos_table = self.register(
                "positions", 0.02 * rng.standard_normal((max_sequence + 1, embed_dim)))
        elif positional == "sinusoidal":
            self._pos_const = sinusoidal_table(max_sequence + 1, embed_dim)
        else:
            self._pos_const = np.zeros((max_sequence + 1, embed_dim))

    def tokenize(self, frames: np.ndarray) -> Tensor:
        """(B, T, d) or (T, d) frames -> (B, T+1, embed_dim) token embeddings.

        Sequences longer than max_sequence keep their first max_sequence frames.
        """
        frames = np.asarray(frames, dtype=np.float64)
        squeeze = frames.ndim == 2
        if squeeze:
            frames = frames[None]
        if frames.ndim != 3:
            raise DataError(f"frames must be 2-D or 3-D, got shape {frames.shape}")
        b, t, d = frames.shape
        if d != self.d_in:
            raise DataError(f"frame width {d} != embedder input dim {self.d_in}")
        if t > self.max_sequence:
            frames = frames[:, : self.max_sequence]
            t = self.max_sequence
        tokens = tc.matmul(Tensor(frames), self.w_value) + self.b_value
        g = tc.mul(self.global_token.reshape(1, 1, self.embed_dim), Tensor(np.ones((b, 1, 1))))
        x = tc.concat([g, tokens], axis=1)
        if self.positional == "learned":
            x = x + self.pos_table[: t + 1]
        else:
            x = x + Tensor(self._pos_const[: t + 1])
        return x


class AttentionBlock(Module):
    """Multi-head self-attention under an additive mask, then a feedforward,
    each followed by residual + layernorm."""

    def __init__(self, dim: int, n_heads: int, ffn_mult: int, rng: np.random.Generator):
        super().__init__()
        if dim % n_heads != 0:
            raise DataError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.n_heads = n_heads
        h = ffn_mult * dim
        self.w_q = self.register("attn.Wq", tc.glorot(rng, (dim, dim)))
        self.w_k = self.register("attn.Wk", tc.glorot(rng, (dim, dim)))
        self.w_v = self.register("attn.Wv", tc.glorot(rng, (dim, dim)))
        self.w_o = self.register("attn.Wo", tc.glorot(rng, (dim, dim)))
        self.b_q = self.register("attn.bq", np.zeros(dim))
        self.b_k = self.register("attn.bk", np.zeros(dim))
        self.b_v = self.register("attn.bv", np.zeros(dim))
        self.b_o = self.register("attn.bo", np.zeros(dim))
        self.w_f1 = self.register("ffn.W1", tc.glorot(rng, (dim, h)))
        self.b_f1 = self.register("ffn.b1", np.zeros(h))
        self.w_f2 = self.register("ffn.W2", tc.glorot(rng, (h, dim)))
        self.b_f2 = self.register("ffn.b2", np.zeros(dim))

    def _heads(self, x: Tensor, w: Tensor, b: Tensor, n_tokens: int, batch: int) -> Tensor:
        y = tc.matmul(x, w) + b
        y = y.reshape(batch, n_tokens, self.n_heads, self.dim // self.n_heads)
        return tc.swapaxes(y, 1, 2)  # (B, H, N, Dh)

    def attention(self, x: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Masked scaled dot-product self-attention; returns (output, weights)."""
        b, n, _ = x.shape
        dh = self.dim // self.n_heads
        q = self._heads(x, self.w_q, self.b_q, n, b)
        k = self._heads(x, self.w_k, self.b_k, n, b)
        v = self._heads(x, self.w_v, self.b_v, n, b)
        logits = tc.scale(tc.matmul(q, tc.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dh))
        logits = logits + Tensor(mask)
        weights = tc.softmax(logits, axis=-1)  # (B, H, N, N)
        ctx = tc.matmul(weights, v)
        ctx = tc.swapaxes(ctx, 1, 2).reshape(b, n, self.dim)
        return tc.matmul(ctx, self.w_o) + self.b_o, weights

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        attn_out, _ = self.attention(x, mask)
        x = tc.layernorm(x + attn_out)
        ffn = tc.matmul(tc.relu(tc.matmul(x, self.w_f1) + self.b_f1), self.w_f2) + self.b_f2
        return tc.layernorm(x + ffn)


class SeqEncoderModel(Module):
    """Stacked windowed-attention encoder for one modality's frame width."""

    def __init__(self, d_in: int, config: SeqEncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.d_in = d_in
        self.config = config
        e = config.value_embed_dim
        self.embedder = self.adopt("tokens", TokenEmbedder(
            d_in, e, config.max_sequence, config.positional, rng))
        self.blocks = [
            self.adopt(f"block{i}", AttentionBlock(e, config.n_heads, config.ffn_mult, rng))
            for i in range(config.n_layers)
        ]
        self.w_out = self.register("out.W", tc.glorot(rng, (e, config.output_dim)))
        self.b_out = self.register("out.b", np.zeros(config.output_dim))

    def encode_tensor(self, frames: np.ndarray) -> Tensor:
        """(B, T, d) or (T, d) -> (B, output_dim) embedding tensor (graph-recording)."""
        squeeze = np.asarray(frames).ndim == 2
        x = self.embedder.tokenize(frames)
        n = x.shape[1]
        mask = window_mask(n, self.config.window_size)
        for block in self.blocks:
            x = block.forward(x, mask)
        pooled = x[:, 0, :]  # global-token state
        out = tc.matmul(pooled, self.w_out) + self.b_out
        return out[0] if squeeze else out


def tokenize_frames(frames: np.ndarray, model: SeqEncoderModel | TokenEmbedder) -> np.ndarray:
    """Token-embedding matrix ((T+1) x value_embed_dim) for one frame sequence."""
    embedder = model.embedder if isinstance(model, SeqEncoderModel) else model
    out = embedder.tokenize(np.asarray(frames, dtype=np.float64))
    return out.data[0]


def encode(frames: np.ndarray, model: SeqEncoderModel) -> np.ndarray:
    """Fixed-length utterance embedding (output_dim,) for one frame sequence."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise DataError(f"encode expects a (T, d) matrix, got shape {frames.shape}")
    return model.encode_tensor(frames).data


def encode_batch(frames: np.ndarray, model: SeqEncoderModel) -> np.ndarray:
    """(B, T, d) equal-length batch -> (B, output_dim)."""
    return model.encode_tensor(np.asarray(frames, dtype=np.float64)).data
