"""Feature pipeline: normalization, channel embedding, fusion composition,
SMOTE on the exact representation each classifier consumes, and training.

Vector-route methods (unimodal, early, late, tensor) run two stages per fit:
frame-sequence channels first train their encoder end-to-end with a throwaway
head on the fit partition and are then frozen; every record is embedded to
fixed per-channel vectors, z-scored with train statistics, composed per the
fusion method, SMOTE'd (training partition only), and fed to the classifier.
Cross-attention methods consume raw sequences, so the training partition is
oversampled at record level instead and the network trains end-to-end.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensorcore as tc
from .datamodel import (
    Corpus,
    NormStats,
    UtteranceRecord,
    apply_norm,
    fit_norm_stats,
    norm_apply_matrix,
)
from .errors import DataError
from .fusionmodels import (
    EncoderClassifier,
    FusionSpec,
    MlpClassifier,
    ModalityChannel,
    XattnFusionModel,
    late_fuse,
    tensor_fuse_rows,
)
from .resample import SmoteConfig, oversample_records, smote
from .seqembed import SeqEncoderConfig, SeqEncoderModel
from .textfeat import Vocabulary, fit_vocab, preprocess, tfidf
from .trainer import ArrayDataset, SeqDataset, TrainConfig, TrainHistory, make_validation_split, train


def child_seed(seed: int, tag: str) -> int:
    """Stable derived seed for a named sub-task of a run."""
    return int(np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(tag.encode())]).generate_state(1)[0])


def child_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, tag))


def _channel_field(ch: ModalityChannel) -> str | None:
    if ch.source == "frames":
        return f"{ch.modality}_frames"
    if ch.source == "tfidf":
        return None
    return ch.source


def _frame_dim(corpus: Corpus, fieldname: str) -> int:
    for r in corpus:
        m = getattr(r, fieldname)
        if m is not None:
            return m.shape[1]
    raise DataError(f"no record carries {fieldname}; cannot size the channel")


@dataclass
class FittedChannel:
    """Everything needed to turn records into this channel's fixed vector."""

    channel: ModalityChannel
    dim_in: int
    dim_out: int
    vocab: Vocabulary | None = None
    encoder: SeqEncoderModel | None = None
    vec_mean: np.ndarray | None = None
    vec_std: np.ndarray | None = None

    @property
    def key(self) -> str:
        return self.channel.key


def _embed_raw(records: Sequence[UtteranceRecord], fc: FittedChannel) -> tuple[np.ndarray, np.ndarray]:
    """Channel vectors before the second-stage z-scoring, plus presence flags."""
    n = len(records)
    out = np.zeros((n, fc.dim_out))
    present = np.zeros(n, dtype=bool)
    ch = fc.channel
    if ch.source == "tfidf":
        for i, r in enumerate(records):
            if r.modality_mask.has("language") and r.text:
                out[i] = tfidf(preprocess(r.text), fc.vocab)
                present[i] = True
    elif ch.source == "frames":
        fieldname = _channel_field(ch)
        lengths: dict[int, list[int]] = {}
        for i, r in enumerate(records):
            m = getattr(r, fieldname)
            if r.modality_mask.has(ch.modality) and m is not None and m.shape[0] > 0:
                lengths.setdefault(m.shape[0], []).append(i)
                present[i] = True
        for t, idxs in sorted(lengths.items()):
            batch = np.stack([getattr(records[i], fieldname) for i in idxs])
            out[np.asarray(idxs)] = fc.encoder.encode_tensor(batch).data
    else:
        for i, r in enumerate(records):
            v = getattr(r, ch.source)
            if r.modality_mask.has(ch.modality) and v is not None:
                out[i] = v
                present[i] = True
    return out, present


def embed_channel(records: Sequence[UtteranceRecord], fc: FittedChannel) -> np.ndarray:
    """Z-scored channel vectors; absent modalities impute to the zero vector."""
    raw, present = _embed_raw(records, fc)
    if fc.vec_mean is not None:
        raw = norm_apply_matrix(raw, fc.vec_mean, fc.vec_std)
    raw[~present] = 0.0
    return raw


def _sequences(records: Sequence[UtteranceRecord], ch: ModalityChannel, dim_in: int) -> list[np.ndarray]:
    """Per-record sequences for the cross-attention route; masked modality
    records get a zero-imputed single-frame sequence."""
    out = []
    fieldname = _channel_field(ch)
    for r in records:
        if ch.source == "frames":
            m = getattr(r, fieldname)
            if r.modality_mask.has(ch.modality) and m is not None and m.shape[0] > 0:
                out.append(np.asarray(m))
            else:
                out.append(np.zeros((1, dim_in)))
        else:
            v = getattr(r, ch.source)
            if r.modality_mask.has(ch.modality) and v is not None:
                out.append(np.asarray(v).reshape(1, dim_in))
            else:
                out.append(np.zeros((1, dim_in)))
    return out


@dataclass
class FitSnapshot:
    """Pre/post-SMOTE training arrays kept for inspection and leak tests."""

    fit_x: Mapping[str, np.ndarray]
    fit_y: np.ndarray
    smoted_x: Mapping[str, np.ndarray]
    smoted_y: Mapping[str, np.ndarray]
    val_x: Mapping[str, np.ndarray]
    val_y: np.ndarray


@dataclass
class TrainedPipeline:
    """A fitted end-to-end model: stats, channel embedders, classifier(s)."""

    spec: FusionSpec
    cfg: TrainConfig
    stats_raw: NormStats | None
    channels: list[FittedChannel]
    classifiers: dict[str, MlpClassifier]
    xattn: XattnFusionModel | None
    histories: dict[str, TrainHistory]
    fit_snapshot: FitSnapshot | None = None

    def modality_dims(self) -> dict[str, int]:
        return {fc.channel.modality: fc.dim_in for fc in self.channels}

    # -- inference -------------------------------------------------------

    def _normalized(self, corpus: Corpus) -> Corpus:
        return apply_norm(corpus, self.stats_raw) if self.stats_raw is not None else corpus

    def channel_vectors(self, corpus: Corpus) -> dict[str, np.ndarray]:
        records = self._normalized(corpus).records
        return {fc.key: embed_channel(records, fc) for fc in self.channels}

    def compose(self, vectors: Mapping[str, np.ndarray]) -> np.ndarray:
        ordered = [vectors[fc.key] for fc in self.channels]
        if self.spec.method == "unimodal":
            return ordered[0]
        if self.spec.method == "early":
            return np.concatenate(ordered, axis=1)
        if self.spec.method == "tensor":
            return tensor_fuse_rows(*ordered)
        raise DataError(f"compose does not apply to method {self.spec.method!r}")

    def predict_proba(self, corpus: Corpus) -> np.ndarray:
        if self.spec.is_sequence_route:
            records = self._normalized(corpus).records
            y_dummy = np.zeros(len(records), dtype=np.int64)
            ds = SeqDataset(
                {fc.channel.modality: _sequences(records, fc.channel, fc.dim_in) for fc in self.channels},
                y_dummy)
            return self.xattn.predict_dataset(ds)
        vectors = self.channel_vectors(corpus)
        if self.spec.method == "late":
            probs = [self.classifiers[fc.key].predict_proba(vectors[fc.key]) for fc in self.channels]
            return late_fuse(probs)
        return self.classifiers[""].predict_proba(self.compose(vectors))

    def predict_labels(self, corpus: Corpus) -> np.ndarray:
        return self.predict_proba(corpus).argmax(axis=1)

    # -- persistence ------------------------------------------------------

    def named_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for fc in self.channels:
            if fc.encoder is not None:
                for k, v in fc.encoder.state_arrays().items():
                    out[f"encoder/{fc.key}/{k}"] = v
        for key, clf in self.classifiers.items():
            for k, v in clf.state_arrays().items():
                out[f"classifier/{key}/{k}"] = v
        if self.xattn is not None:
            for k, v in self.xattn.state_arrays().items():
                out[f"xattn/{k}"] = v
        return out

    def sidecar_dict(self) -> dict:
        chans = []
        for fc in self.channels:
            entry = {
                "channel": fc.channel.to_dict(),
                "dim_in": fc.dim_in,
                "dim_out": fc.dim_out,
                "vec_mean": None if fc.vec_mean is None else [float(v) for v in fc.vec_mean],
                "vec_std": None if fc.vec_std is None else [float(v) for v in fc.vec_std],
                "vocab": None if fc.vocab is None else {
                    "terms": list(fc.vocab.terms), "df": list(fc.vocab.df), "n_docs": fc.vocab.n_docs},
            }
            chans.append(entry)
        stats = None
        if self.stats_raw is not None:
            stats = {
                f: {"mean": [float(v) for v in m], "std": [float(v) for v in s]}
                for f, (m, s) in self.stats_raw.stats.items()
            }
        return {
            "schema_version": 1,
            "fusion_spec": self.spec.to_dict(),
            "train_config": self.cfg.to_dict(),
            "stats_raw": stats,
            "channels": chans,
        }

    def save(self, prefix) -> None:
        from pathlib import Path
        import json

        prefix = Path(prefix)
        tc.save_checkpoint(prefix.with_suffix(".ckpt"), self.named_arrays())
        with open(prefix.with_suffix(".pipeline.json"), "w", encoding="utf-8") as fh:
            json.dump(self.sidecar_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, prefix) -> "TrainedPipeline":
        from pathlib import Path
        import json

        prefix = Path(prefix)
        arrays = tc.load_checkpoint(prefix.with_suffix(".ckpt"))
        with open(prefix.with_suffix(".pipeline.json"), "r", encoding="utf-8") as fh:
            side = json.load(fh)
        spec = FusionSpec.from_dict(side["fusion_spec"])
        cfg = TrainConfig.from_dict(side["train_config"])
        stats = None
        if side["stats_raw"] is not None:
            stats = NormStats({f: (np.asarray(d["mean"]), np.asarray(d["std"]))
                               for f, d in side["stats_raw"].items()})
        channels, rng = [], np.random.default_rng(0)
        for entry in side["channels"]:
            ch = ModalityChannel.from_dict(entry["channel"])
            fc = FittedChannel(ch, entry["dim_in"], entry["dim_out"])
            if entry["vocab"] is not None:
                fc.vocab = Vocabulary(tuple(entry["vocab"]["terms"]),
                                      tuple(entry["vocab"]["df"]), entry["vocab"]["n_docs"])
            if entry["vec_mean"] is not None:
                fc.vec_mean = np.asarray(entry["vec_mean"])
                fc.vec_std = np.asarray(entry["vec_std"])
            if ch.source == "frames" and not spec.is_sequence_route:
                enc_cfg = ch.encoder or SeqEncoderConfig()
                fc.encoder = SeqEncoderModel(fc.dim_in, enc_cfg, rng)
                prefix_key = f"encoder/{fc.key}/"
                fc.encoder.load_state({k[len(prefix_key):]: v for k, v in arrays.items()
                                       if k.startswith(prefix_key)})
            channels.append(fc)

        classifiers: dict[str, MlpClassifier] = {}
        xattn = None
        if spec.is_sequence_route:
            dims = {fc.channel.modality: fc.dim_in for fc in channels}
            variant = "early" if spec.method == "xattn_early" else "late"
            xattn = XattnFusionModel(dims, variant, spec.d_model, spec.n_blocks, spec.hidden,
                                     cfg.dropout, spec.max_sequence, spec.positional, rng)
            xattn.load_state({k[len("xattn/"):]: v for k, v in arrays.items() if k.startswith("xattn/")})
        else:
            keys = [fc.key for fc in channels] if spec.method == "late" else [""]
            for key in keys:
                pfx = f"classifier/{key}/"
                sub = {k[len(pfx):]: v for k, v in arrays.items() if k.startswith(pfx)}
                d_in = sub["fc1.W"].shape[0]
                hidden = sub["fc1.W"].shape[1]
                clf = MlpClassifier(d_in, hidden, dropout_rate=cfg.dropout, rng=rng)
                clf.load_state(sub)
                classifiers[key] = clf
        return cls(spec, cfg, stats, channels, classifiers, xattn, {})


def fit_pipeline(train_corpus: Corpus, spec: FusionSpec, cfg: TrainConfig,
                 seed: int | None = None, keep_snapshot: bool = False) -> TrainedPipeline:
    """Fit the full pipeline on a training corpus (validation carved by pair)."""
    seed = cfg.seed if seed is None else seed
    if len(train_corpus) == 0:
        raise DataError("training corpus is empty")
    pairs = train_corpus.pair_ids()
    if cfg.val_fraction > 0 and len(pairs) < 2:
        raise DataError("need >= 2 pairs for a validation split")
    fit_pairs, val_pairs = make_validation_split(pairs, cfg.val_fraction, child_seed(seed, "valsplit"))

    raw_fields = sorted({f for ch in spec.channels if (f := _channel_field(ch)) is not None})
    stats_raw = fit_norm_stats(train_corpus, raw_fields) if raw_fields else None
    norm_train = apply_norm(train_corpus, stats_raw) if stats_raw is not None else train_corpus
    fit_c = norm_train.subset(fit_pairs)
    val_c = norm_train.subset(val_pairs) if val_pairs else None
    fit_y = fit_c.labels()
    val_y = val_c.labels() if val_c is not None else np.zeros(0, dtype=np.int64)

    channels: list[FittedChannel] = []
    histories: dict[str, TrainHistory] = {}
    for ch in spec.channels:
        if ch.source == "tfidf":
            vocab = fit_vocab([preprocess(r.text) for r in norm_train])
            channels.append(FittedChannel(ch, len(vocab), len(vocab), vocab=vocab))
        elif ch.source == "frames":
            d = _frame_dim(norm_train, _channel_field(ch))
            if spec.is_sequence_route:
                channels.append(FittedChannel(ch, d, d))
            else:
                enc_cfg = ch.encoder or SeqEncoderConfig()
                model1 = EncoderClassifier(d, enc_cfg, spec.hidden, cfg.dropout,
                                           child_rng(seed, f"stage1-init:{ch.key}"))
                fit_ds = SeqDataset(_sequences(fit_c.records, ch, d), fit_y)
                val_ds = SeqDataset(_sequences(val_c.records, ch, d), val_y) if val_c is not None else None
                stage_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": child_seed(seed, f"stage1:{ch.key}")})
                histories[f"stage1:{ch.key}"] = train(model1, fit_ds, val_ds, stage_cfg)
                channels.append(FittedChannel(ch, d, enc_cfg.output_dim, encoder=model1.encoder))
        else:
            d = {"sentence_vec": 768, "sentiment_vec": 3, "audio_vec": 768}[ch.source]
            channels.append(FittedChannel(ch, d, d))

    if spec.is_sequence_route:
        return _fit_xattn(norm_train, fit_c, val_c, spec, cfg, seed, channels, histories,
                          stats_raw, keep_snapshot)

    # Stage-2 z-scoring of embedded vectors, fitted on the whole training corpus.
    for fc in channels:
        raw, present = _embed_raw(norm_train.records, fc)
        if not present.any():
            raise DataError(f"channel {fc.key}: no record carries this feature")
        fc.vec_mean = raw[present].mean(axis=0)
        fc.vec_std = raw[present].std(axis=0)

    fit_vecs = {fc.key: embed_channel(fit_c.records, fc) for fc in channels}
    val_vecs = ({fc.key: embed_channel(val_c.records, fc) for fc in channels}
                if val_c is not None else {fc.key: np.zeros((0, fc.dim_out)) for fc in channels})

    classifiers: dict[str, MlpClassifier] = {}
    smote_k = SmoteConfig().k_neighbors
    snapshot_fit: dict[str, np.ndarray] = {}
    snapshot_sm_x: dict[str, np.ndarray] = {}
    snapshot_sm_y: dict[str, np.ndarray] = {}
    snapshot_val: dict[str, np.ndarray] = {}

    def _train_clf(key: str, x_fit: np.ndarray, x_val: np.ndarray) -> MlpClassifier:
        xs, ys = smote(x_fit, fit_y, SmoteConfig(smote_k, child_seed(seed, f"smote:{key}")))
        clf = MlpClassifier(x_fit.shape[1], spec.hidden, dropout_rate=cfg.dropout,
                            rng=child_rng(seed, f"clf-init:{key}"))
        clf_cfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": child_seed(seed, f"clf:{key}")})
        histories[f"clf:{key}" if key else "clf"] = train(
            clf, ArrayDataset(xs, ys), ArrayDataset(x_val, val_y) if len(x_val) else None, clf_cfg)
        snapshot_fit[key], snapshot_sm_x[key], snapshot_sm_y[key], snapshot_val[key] = x_fit, xs, ys, x_val
        return clf

    if spec.method == "late":
        for fc in channels:
            classifiers[fc.key] = _train_clf(fc.key, fit_vecs[fc.key], val_vecs[fc.key])
    else:
        pipeline_tmp = TrainedPipeline(spec, cfg, stats_raw, channels, {}, None, {})
        x_fit = pipeline_tmp.compose(fit_vecs)
        x_val = pipeline_tmp.compose(val_vecs) if val_c is not None else np.zeros((0, 1))
        classifiers[""] = _train_clf("", x_fit, x_val)

    snapshot = FitSnapshot(snapshot_fit, fit_y, snapshot_sm_x, snapshot_sm_y,
                           snapshot_val, val_y) if keep_snapshot else None
    return TrainedPipeline(spec, cfg, stats_raw, channels, classifiers, None, histories, snapshot)


def _fit_xattn(norm_train, fit_c, val_c, spec, cfg, seed, channels, histories,
               stats_raw, keep_snapshot) -> TrainedPipeline:
    fit_records = oversample_records(
        fit_c.records, SmoteConfig(seed=child_seed(seed, "smote:records")))
    fit_y = np.asarray([int(r.label) for r in fit_records], dtype=np.int64)
    dims = {fc.channel.modality: fc.dim_in for fc in channels}
    fit_ds = SeqDataset({fc.channel.modality: _sequences(fit_records, fc.channel, fc.dim_in)
                         for fc in channels}, fit_y)
    val_ds = None
    if val_c is not None:
        val_ds = SeqDataset({fc.channel.modality: _sequences(val_c.records, fc.channel, fc.dim_in)
                             for fc in channels}, val_c.labels())
    variant = "early" if spec.method == "xattn_early" else "late"
    model = XattnFusionModel(dims, variant, spec.d_model, spec.n_blocks, spec.hidden,
                             cfg.dropout, spec.max_sequence, spec.positional,
                             child_rng(seed, "xattn-init"))
    xcfg = TrainConfig.from_dict({**cfg.to_dict(), "seed": child_seed(seed, "xattn")})
    histories["xattn"] = train(model, fit_ds, val_ds, xcfg)
    return TrainedPipeline(spec, cfg, stats_raw, channels, {}, model, histories, None)
