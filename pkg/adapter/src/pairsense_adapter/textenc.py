"""Pretrained text encoders (sentence and sentiment vectors), pinned by model id.

Model weights are large external artifacts; when the runtime cannot load
them the extractor fails fast with an actionable message rather than
emitting made-up vectors.
"""

from __future__ import annotations

import numpy as np

from .errors import ToolkitMissingError

SENTENCE_DIM = 768
SENTIMENT_DIM = 3


class SentenceEncoder:
    def __init__(self, model_id: str):
        self.model_id = model_id
        try:
            from transformers import AutoModel, AutoTokenizer  # noqa: F401
        except ImportError:
            raise ToolkitMissingError(
                "sentence encoding needs the 'transformers' package: pip install transformers")
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except Exception as e:
            raise ToolkitMissingError(
                f"cannot load sentence model {model_id!r} ({e}); download it into the local "
                f"model cache or point the job at a cached identifier")

    def encode(self, text: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self._tokenizer(text or " ", return_tensors="pt", truncation=True)
            out = self._model(**tokens).last_hidden_state[0, 0]
        vec = out.numpy().astype(np.float64)
        if vec.shape != (SENTENCE_DIM,):
            raise ToolkitMissingError(
                f"model {self.model_id!r} emits dim {vec.shape}, expected ({SENTENCE_DIM},)")
        return vec


class SentimentEncoder:
    def __init__(self, model_id: str):
        self.model_id = model_id
        try:
            from transformers import AutoModelForSequenceClassification, AutoTokenizer  # noqa: F401
        except ImportError:
            raise ToolkitMissingError(
                "sentiment encoding needs the 'transformers' package: pip install transformers")
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModelForSequenceClassification.from_pretrained(model_id)
        except Exception as e:
            raise ToolkitMissingError(
                f"cannot load sentiment model {model_id!r} ({e}); download it into the local "
                f"model cache or point the job at a cached identifier")

    def encode(self, text: str) -> np.ndarray:
        import torch

        with torch.no_grad():
            tokens = self._tokenizer(text or " ", return_tensors="pt", truncation=True)
            logits = self._model(**tokens).logits[0]
            probs = torch.softmax(logits, dim=-1).numpy().astype(np.float64)
        if probs.shape != (SENTIMENT_DIM,):
            raise ToolkitMissingError(
                f"model {self.model_id!r} emits {probs.shape[0]} classes, expected {SENTIMENT_DIM}")
        return probs
