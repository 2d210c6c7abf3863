"""The MLP classifier and the fusion architectures (early, late, tensor, cross-attention).

Modalities are always handled in the fixed order language, audio, video, so
concatenation layouts never depend on registration order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensorcore as tc
from .datamodel import MODALITY_ORDER, N_CLASSES
from .errors import DataError
from .seqembed import SeqEncoderConfig, SeqEncoderModel, TokenEmbedder
from .tensorcore import Module, Tensor

FUSION_METHODS = ("unimodal", "early", "late", "tensor", "xattn_early", "xattn_late")
CHANNEL_SOURCES = {
    "language": ("sentence_vec", "sentiment_vec", "tfidf"),
    "audio": ("frames", "audio_vec"),
    "video": ("frames",),
}


@dataclass(frozen=True)
class ModalityChannel:
    """One participating modality and which of its features feeds the model."""

    modality: str
    source: str
    encoder: SeqEncoderConfig | None = None

    def __post_init__(self):
        if self.modality not in MODALITY_ORDER:
            raise DataError(f"unknown modality {self.modality!r}")
        if self.source not in CHANNEL_SOURCES[self.modality]:
            raise DataError(f"source {self.source!r} not valid for modality {self.modality!r}")

    @property
    def key(self) -> str:
        return f"{self.modality}:{self.source}"

    def to_dict(self) -> dict:
        d = {"modality": self.modality, "source": self.source}
        if self.encoder is not None:
            d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModalityChannel":
        enc = d.get("encoder")
        return cls(d["modality"], d["source"], SeqEncoderConfig.from_dict(enc) if enc else None)


@dataclass(frozen=True)
class FusionSpec:
    """Which model to build: fusion method, participating channels, widths."""

    method: str
    channels: tuple[ModalityChannel, ...]
    hidden: int = 128
    d_model: int = 32
    n_blocks: int = 1
    max_sequence: int = 4096
    positional: str = "sinusoidal"

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise DataError(f"unknown fusion method {self.method!r}")
        chans = tuple(sorted(self.channels, key=lambda c: MODALITY_ORDER.index(c.modality)))
        object.__setattr__(self, "channels", chans)
        mods = [c.modality for c in chans]
        if len(set(mods)) != len(mods):
            raise DataError("each modality may appear in at most one channel")
        if self.method == "unimodal":
            if len(chans) != 1:
                raise DataError("unimodal takes exactly one channel")
        elif len(chans) < 2:
            raise DataError(f"fusion method {self.method!r} needs >= 2 modalities")
        if self.method == "tensor" and len(chans) != 3:
            raise DataError("tensor fusion takes exactly three modality channels")

    @property
    def is_sequence_route(self) -> bool:
        return self.method.startswith("xattn")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "channels": [c.to_dict() for c in self.channels],
            "hidden": self.hidden, "d_model": self.d_model, "n_blocks": self.n_blocks,
            "max_sequence": self.max_sequence, "positional": self.positional,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionSpec":
        return cls(
            method=d["method"],
            channels=tuple(ModalityChannel.from_dict(c) for c in d["channels"]),
            hidden=d.get("hidden", 128), d_model=d.get("d_model", 32),
            n_blocks=d.get("n_blocks", 1), max_sequence=d.get("max_sequence", 4096),
            positional=d.get("positional", "sinusoidal"),
        )


# ---------------------------------------------------------------------------
# Fusion primitives


def early_fuse(by_modality: Mapping[str, np.ndarray]) -> np.ndarray:
    """Concatenate per-modality vectors in the fixed language/audio/video order."""
    parts = [np.asarray(by_modality[m], dtype=np.float64) for m in MODALITY_ORDER if m in by_modality]
    if not parts:
        raise DataError("early_fuse needs at least one modality vector")
    return np.concatenate(parts, axis=-1)


def late_fuse(probabilities: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted arithmetic mean of per-modality class-probability vectors."""
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in probabilities])
    return stacked.mean(axis=0)


def tensor_fuse(z_l: np.ndarray, z_a: np.ndarray, z_v: np.ndarray) -> np.ndarray:
    """Bias-augmented triple outer product, flattened row-major.

    Output length is (d_l + 1) * (d_a + 1) * (d_v + 1).
    """
    vs = []
    for name, z in (("z_l", z_l), ("z_a", z_a), ("z_v", z_v)):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 1:
            raise DataError(f"{name} must be a vector, got shape {z.shape}")
        vs.append(np.concatenate([z, [1.0]]))
    return np.einsum("i,j,k->ijk", *vs).ravel()


def tensor_fuse_rows(z_l: np.ndarray, z_a: np.ndarray, z_v: np.ndarray) -> np.ndarray:
    """Row-wise tensor fusion for (B, d) inputs -> (B, prod of (d+1))."""
    ones = np.ones((z_l.shape[0], 1))
    a = np.concatenate([z_l, ones], axis=1)
    b = np.concatenate([z_a, ones], axis=1)
    c = np.concatenate([z_v, ones], axis=1)
    return np.einsum("bi,bj,bk->bijk", a, b, c).reshape(a.shape[0], -1)


# ---------------------------------------------------------------------------
# Classifier


class MlpClassifier(Module):
    """Two ReLU feedforward layers with dropout, then a softmax output layer."""

    def __init__(self, d_in: int, hidden: int = 128, n_classes: int = N_CLASSES,
                 dropout_rate: float = 0.5, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if not 0.0 <= dropout_rate < 1.0:
            raise DataError(f"dropout rate must be in [0, 1), got {dropout_rate}")
        self.d_in = d_in
        self.n_classes = n_classes
        self.dropout_rate = dropout_rate
        self.w1 = self.register("fc1.W", tc.glorot(rng, (d_in, hidden)))
        self.b1 = self.register("fc1.b", np.zeros(hidden))
        self.w2 = self.register("fc2.W", tc.glorot(rng, (hidden, hidden)))
        self.b2 = self.register("fc2.b", np.zeros(hidden))
        self.w3 = self.register("out.W", tc.glorot(rng, (hidden, n_classes)))
        self.b3 = self.register("out.b", np.zeros(n_classes))

    def logits(self, x, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        if x.shape[-1] != self.d_in:
            raise DataError(f"input dim {x.shape[-1]} != classifier d_in {self.d_in}")
        if training and rng is None:
            raise DataError("training-mode forward needs an rng for dropout")
        h = tc.relu(tc.matmul(x, self.w1) + self.b1)
        h = tc.dropout(h, self.dropout_rate, rng, training)
        h = tc.relu(tc.matmul(h, self.w2) + self.b2)
        h = tc.dropout(h, self.dropout_rate, rng, training)
        return tc.matmul(h, self.w3) + self.b3

    def probs_tensor(self, x, rng=None, training: bool = False) -> Tensor:
        return tc.softmax(self.logits(x, rng, training), axis=-1)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.probs_tensor(np.atleast_2d(np.asarray(x, dtype=np.float64))).data

    def loss_batch(self, dataset, idx, rng, training: bool) -> Tensor:
        logits = self.logits(dataset.x[idx], rng, training)
        return tc.cross_entropy(logits, dataset.y[idx])

    def predict_dataset(self, dataset) -> np.ndarray:
        return self.predict_proba(dataset.x)


def classify_unimodal(vec: np.ndarray, model: MlpClassifier) -> np.ndarray:
    """Class probabilities for one feature vector; argmax ties go to the lowest index."""
    return model.predict_proba(np.asarray(vec, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# Cross-attention


class CrossAttentionBlock(Module):
    """One crossmodal block: queries from the target sequence attend over the
    source sequence's keys/values (single scoring matrix), then residual +
    layernorm and a feedforward with its own residual + layernorm.

    The attention context is the plain weighted sum of value projections
    (no extra output projection), so uniform weights over identical source
    tokens reproduce that token's value projection exactly.
    """

    def __init__(self, dim: int, ffn_mult: int, rng: np.random.Generator):
        super().__init__()
        self.dim = dim
        h = ffn_mult * dim
        self.w_q = self.register("attn.Wq", tc.glorot(rng, (dim, dim)))
        self.b_q = self.register("attn.bq", np.zeros(dim))
        self.w_k = self.register("attn.Wk", tc.glorot(rng, (dim, dim)))
        self.b_k = self.register("attn.bk", np.zeros(dim))
        self.w_v = self.register("attn.Wv", tc.glorot(rng, (dim, dim)))
        self.b_v = self.register("attn.bv", np.zeros(dim))
        self.w_f1 = self.register("ffn.W1", tc.glorot(rng, (dim, h)))
        self.b_f1 = self.register("ffn.b1", np.zeros(h))
        self.w_f2 = self.register("ffn.W2", tc.glorot(rng, (h, dim)))
        self.b_f2 = self.register("ffn.b2", np.zeros(dim))

    def attention(self, query_seq: Tensor, kv_seq: Tensor) -> tuple[Tensor, Tensor]:
        """Scaled dot-product cross-attention; returns (context, weights).

        The scoring matrix has shape (..., len(query_seq), len(kv_seq)).
        """
        q = tc.matmul(query_seq, self.w_q) + self.b_q
        k = tc.matmul(kv_seq, self.w_k) + self.b_k
        v = tc.matmul(kv_seq, self.w_v) + self.b_v
        logits = tc.scale(tc.matmul(q, tc.swapaxes(k, -1, -2)), 1.0 / np.sqrt(self.dim))
        weights = tc.softmax(logits, axis=-1)
        return tc.matmul(weights, v), weights

    def forward(self, query_seq: Tensor, kv_seq: Tensor) -> Tensor:
        if query_seq.shape[-1] != self.dim or kv_seq.shape[-1] != self.dim:
            raise DataError(
                f"cross-attention dim mismatch: {query_seq.shape[-1]}/{kv_seq.shape[-1]} vs {self.dim}")
        ctx, _ = self.attention(query_seq, kv_seq)
        x = tc.layernorm(query_seq + ctx)
        ffn = tc.matmul(tc.relu(tc.matmul(x, self.w_f1) + self.b_f1), self.w_f2) + self.b_f2
        return tc.layernorm(x + ffn)


def cross_attention_block(query_seq, kv_seq, block: CrossAttentionBlock) -> Tensor:
    """Enrich the query modality's sequence with one crossmodal block."""
    q = query_seq if isinstance(query_seq, Tensor) else Tensor(np.asarray(query_seq, dtype=np.float64))
    kv = kv_seq if isinstance(kv_seq, Tensor) else Tensor(np.asarray(kv_seq, dtype=np.float64))
    return block.forward(q, kv)


class XattnFusionModel(Module):
    """Crossmodal fusion: for every ordered modality pair, a stream of
    cross-attention blocks enriches the target modality with the source's
    sequence; each target's streams are pooled at the global-token state and
    concatenated. The early variant feeds the concatenated pools to one
    classifier; the late variant averages per-target classifier probabilities.
    """

    def __init__(self, channel_dims: Mapping[str, int], variant: str,
                 d_model: int, n_blocks: int, hidden: int, dropout_rate: float,
                 max_sequence: int, positional: str, rng: np.random.Generator,
                 ffn_mult: int = 2):
        super().__init__()
        if variant not in ("early", "late"):
            raise DataError(f"xattn variant must be early or late, got {variant!r}")
        self.modalities = tuple(m for m in MODALITY_ORDER if m in channel_dims)
        if len(self.modalities) < 2:
            raise DataError("cross-attention fusion needs >= 2 modalities")
        self.variant = variant
        self.d_model = d_model
        self.pool_dim = (len(self.modalities) - 1) * d_model
        self.embedders: dict[str, TokenEmbedder] = {}
        for m in self.modalities:
            self.embedders[m] = self.adopt(
                f"tokens.{m}", TokenEmbedder(channel_dims[m], d_model, max_sequence, positional, rng))
        self.streams: dict[tuple[str, str], list[CrossAttentionBlock]] = {}
        for target in self.modalities:
            for source in self.modalities:
                if source == target:
                    continue
                self.streams[(target, source)] = [
                    self.adopt(f"xblock.{target}~{source}.{i}",
                               CrossAttentionBlock(d_model, ffn_mult, rng))
                    for i in range(n_blocks)
                ]
        if variant == "early":
            self.heads = {"": self.adopt(
                "clf", MlpClassifier(len(self.modalities) * self.pool_dim, hidden,
                                     dropout_rate=dropout_rate, rng=rng))}
        else:
            self.heads = {
                m: self.adopt(f"clf.{m}", MlpClassifier(self.pool_dim, hidden,
                                                        dropout_rate=dropout_rate, rng=rng))
                for m in self.modalities
            }

    def pooled(self, seqs: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        """Per-target pooled vectors (B, pool_dim) from equal-length batches."""
        tokens = {m: self.embedders[m].tokenize(seqs[m]) for m in self.modalities}
        out: dict[str, Tensor] = {}
        for target in self.modalities:
            states = []
            for source in self.modalities:
                if source == target:
                    continue
                x = tokens[target]
                for block in self.streams[(target, source)]:
                    x = block.forward(x, tokens[source])
                states.append(x[:, 0, :])
            out[target] = tc.concat(states, axis=-1)
        return out

    def probs_tensor(self, seqs: Mapping[str, np.ndarray], rng=None, training: bool = False) -> Tensor:
        pooled = self.pooled(seqs)
        if self.variant == "early":
            z = tc.concat([pooled[m] for m in self.modalities], axis=-1)
            return self.heads[""].probs_tensor(z, rng, training)
        probs = [self.heads[m].probs_tensor(pooled[m], rng, training) for m in self.modalities]
        stacked = probs[0]
        for p in probs[1:]:
            stacked = stacked + p
        return tc.scale(stacked, 1.0 / len(probs))

    def loss_tensor(self, seqs, targets, rng, training: bool) -> Tensor:
        if self.variant == "early":
            pooled = self.pooled(seqs)
            z = tc.concat([pooled[m] for m in self.modalities], axis=-1)
            logits = self.heads[""].logits(z, rng, training)
            return tc.cross_entropy(logits, targets)
        probs = self.probs_tensor(seqs, rng, training)
        b = probs.shape[0]
        picked = probs[np.arange(b), np.asarray(targets, dtype=np.int64)]
        return tc.scale(tc.sum_(tc.neg(tc.log(picked + 1e-30))), 1.0 / b)

    def loss_batch(self, dataset, idx, rng, training: bool) -> Tensor:
        total = None
        n = len(idx)
        for bucket_idx in dataset.buckets(idx):
            seqs = {m: dataset.stack(m, bucket_idx) for m in self.modalities}
            part = tc.scale(self.loss_tensor(seqs, dataset.y[bucket_idx], rng, training),
                            len(bucket_idx) / n)
            total = part if total is None else total + part
        return total

    def predict_dataset(self, dataset) -> np.ndarray:
        out = np.zeros((len(dataset), N_CLASSES))
        for bucket_idx in dataset.buckets(np.arange(len(dataset))):
            seqs = {m: dataset.stack(m, bucket_idx) for m in self.modalities}
            out[bucket_idx] = self.probs_tensor(seqs).data
        return out


def xattn_fuse(sequences: Mapping[str, np.ndarray], model: XattnFusionModel) -> np.ndarray:
    """Class probabilities from per-modality sequence batches (equal lengths
    within each modality); the model's variant decides early vs late pooling."""
    missing = set(model.modalities) - set(sequences)
    if missing:
        raise DataError(f"sequences missing for modalities: {sorted(missing)}")
    return model.probs_tensor(sequences).data


class EncoderClassifier(Module):
    """Sequence encoder plus MLP head, trained end-to-end on one modality."""

    def __init__(self, d_in: int, encoder_cfg: SeqEncoderConfig, hidden: int,
                 dropout_rate: float, rng: np.random.Generator):
        super().__init__()
        self.encoder = self.adopt("encoder", SeqEncoderModel(d_in, encoder_cfg, rng))
        self.head = self.adopt("head", MlpClassifier(
            encoder_cfg.output_dim, hidden, dropout_rate=dropout_rate, rng=rng))

    def loss_batch(self, dataset, idx, rng, training: bool) -> Tensor:
        total = None
        n = len(idx)
        for bucket_idx in dataset.buckets(idx):
            emb = self.encoder.encode_tensor(dataset.stack(None, bucket_idx))
            logits = self.head.logits(emb, rng, training)
            part = tc.scale(tc.cross_entropy(logits, dataset.y[bucket_idx]), len(bucket_idx) / n)
            total = part if total is None else total + part
        return total

    def predict_dataset(self, dataset) -> np.ndarray:
        out = np.zeros((len(dataset), N_CLASSES))
        for bucket_idx in dataset.buckets(np.arange(len(dataset))):
            emb = self.encoder.encode_tensor(dataset.stack(None, bucket_idx))
            out[bucket_idx] = self.head.probs_tensor(emb).data
        return out
