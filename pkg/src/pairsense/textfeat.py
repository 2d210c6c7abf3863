"""Text preprocessing and TF-IDF vectorization of transcribed utterances.

Weighting: raw term count times smoothed idf ln((1+n_docs)/(1+df)) + 1,
then L2 normalization. The contraction table is a versioned resource file;
apostrophe forms not in the table pass through with the apostrophe stripped.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from math import log
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError

_SPECIAL_CHARS = re.compile(r"[\[\]{}]")
_TOKEN = re.compile(r"[A-Za-z0-9']+")


@lru_cache(maxsize=1)
def _contraction_table() -> Mapping[str, str]:
    text = resources.files("pairsense.resources").joinpath("contractions.tsv").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        term, expansion = line.split("\t")
        table[term.lower()] = expansion
    return table


@lru_cache(maxsize=1)
def _contraction_pattern() -> re.Pattern:
    # Longest alternatives first so can't've wins over can't.
    alts = sorted(_contraction_table(), key=len, reverse=True)
    return re.compile(r"(?<![A-Za-z0-9'])(" + "|".join(re.escape(a) for a in alts) + r")(?![A-Za-z0-9'])",
                      re.IGNORECASE)


def expand_contractions(text: str) -> str:
    table = _contraction_table()
    return _contraction_pattern().sub(lambda m: table[m.group(0).lower()], text)


def preprocess(text: str) -> list[str]:
    """Whitespace/special-char cleanup, contraction expansion, tokenization, lowercasing.

    Empty input gives an empty list.
    """
    text = _SPECIAL_CHARS.sub(" ", text)
    text = " ".join(text.split())
    text = expand_contractions(text)
    tokens = [t.replace("'", "") for t in _TOKEN.findall(text)]
    return [t.lower() for t in tokens if t]


@dataclass(frozen=True)
class Vocabulary:
    """Lexicographically ordered term list with document frequencies."""

    terms: tuple[str, ...]
    df: tuple[int, ...]
    n_docs: int

    def __post_init__(self):
        if len(self.terms) != len(self.df):
            raise DataError("terms and df lengths differ")
        for t, d in zip(self.terms, self.df):
            if not (1 <= d <= self.n_docs):
                raise DataError(f"df({t!r}) = {d} outside [1, {self.n_docs}]")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def index(self, term: str) -> int | None:
        return self._index.get(term)

    def idf(self) -> np.ndarray:
        df = np.asarray(self.df, dtype=np.float64)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0

    def save(self, path: str | Path) -> None:
        obj = {"schema_version": 1, "n_docs": self.n_docs,
               "terms": list(self.terms), "df": list(self.df)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(tuple(obj["terms"]), tuple(obj["df"]), obj["n_docs"])


def fit_vocab(docs: Sequence[Sequence[str]], min_df: int = 1) -> Vocabulary:
    """Vocabulary of terms with document frequency >= min_df, sorted for determinism."""
    if not docs:
        raise DataError("cannot fit a vocabulary on zero documents")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    kept = sorted(t for t, d in df.items() if d >= min_df)
    if not kept:
        raise DataError(f"min_df={min_df} filtered out every term")
    return Vocabulary(tuple(kept), tuple(df[t] for t in kept), len(docs))


def tfidf(doc: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """L2-normalized tf-idf vector; out-of-vocabulary tokens are ignored."""
    out = np.zeros(len(vocab), dtype=np.float64)
    for term in doc:
        i = vocab.index(term)
        if i is not None:
            out[i] += 1.0
    if not out.any():
        return out
    n, dfv = vocab.n_docs, vocab.df
    for i in np.nonzero(out)[0]:
        out[i] *= log((1.0 + n) / (1.0 + dfv[i])) + 1.0
    return out / np.linalg.norm(out)
