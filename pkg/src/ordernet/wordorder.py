"""Word-order lab: embedding files, corpus preprocessing and exact-match scoring.

Each usable corpus line contributes its first five tokens, presented to the
model as a shuffled set of embedding vectors; the target indexes the
shuffled set in original sentence order.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .checkpoint import atomic_write_bytes
from .data import OrderingExample
from .inference import beam_search
from .model import ConfigError
from .tsp import derive_seed

__all__ = [
    "EmbeddingTable",
    "EmbeddingFormatError",
    "load_embeddings",
    "write_embeddings",
    "WordOrderExample",
    "PrepStats",
    "is_header",
    "prepare_corpus",
    "exact_order_accuracy",
    "restore_tokens",
    "SyntheticGrammar",
    "SENTENCE_LENGTH",
]

log = logging.getLogger(__name__)

SENTENCE_LENGTH = 5


class EmbeddingFormatError(ValueError):
    pass


@dataclass
class EmbeddingTable:
    dimension: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    malformed: int = 0
    duplicates: int = 0

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vectors

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[token.lower()]

    def __len__(self) -> int:
        return len(self.vectors)

    def lookup(self, tokens) -> np.ndarray:
        return np.stack([self[t] for t in tokens])


def load_embeddings(path, dimension: int, strict: bool = False) -> EmbeddingTable:
    """Read a text embedding file: ``token v1 ... v_dimension`` per line.

    Lines with the wrong number of values or unparseable floats are skipped
    and counted (``strict=True`` raises instead). Later duplicates win.
    """
    table = EmbeddingTable(dimension)
    seen_any = False
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            seen_any = True
            token, values = parts[0].lower(), parts[1:]
            try:
                if len(values) != dimension:
                    raise ValueError(f"expected {dimension} values, found {len(values)}")
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                if strict:
                    raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
                table.malformed += 1
                continue
            if token in table.vectors:
                table.duplicates += 1
            table.vectors[token] = vec
    if not seen_any:
        raise EmbeddingFormatError(f"{path}: embedding file is empty")
    if table.malformed or table.duplicates:
        log.warning("%s: skipped %d malformed lines, %d duplicate tokens", path, table.malformed, table.duplicates)
    return table


def write_embeddings(path, table: EmbeddingTable) -> None:
    lines = [" ".join([tok] + [repr(float(v)) for v in vec]) for tok, vec in table.vectors.items()]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


@dataclass
class WordOrderExample:
    tokens: list[str]
    x: np.ndarray
    y: np.ndarray
    line: int
    shuffle_seed: int

    @property
    def shuffled_tokens(self) -> list[str]:
        out = [""] * len(self.tokens)
        for t, idx in enumerate(self.y):
            out[idx] = self.tokens[t]
        return out

    def to_ordering(self) -> OrderingExample:
        return OrderingExample(self.x, self.y, {"tokens": list(self.tokens), "line": self.line})


@dataclass
class PrepStats:
    lines: int = 0
    kept: int = 0
    skipped: Counter = field(default_factory=Counter)


def is_header(line: str) -> bool:
    s = line.strip()
    return len(s) >= 1 and s.startswith("=") and s.endswith("=")


def prepare_corpus(text_path, embeddings: EmbeddingTable, shuffle_seed: int,
                   stats: PrepStats | None = None) -> Iterator[WordOrderExample]:
    """Stream shuffled five-token examples from a text corpus.

    Skips blank lines, ``= header =`` lines, lines with fewer than five
    tokens and lines whose first five tokens are not all in the table.
    ``stats`` (if given) receives counts per skip reason. Line numbers are
    1-based and seed each line's shuffle.
    """
    stats = stats if stats is not None else PrepStats()
    with Path(text_path).open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            stats.lines += 1
            if not raw.strip():
                stats.skipped["blank"] += 1
                continue
            if is_header(raw):
                stats.skipped["header"] += 1
                continue
            tokens = raw.lower().split()
            if len(tokens) < SENTENCE_LENGTH:
                stats.skipped["short"] += 1
                continue
            tokens = tokens[:SENTENCE_LENGTH]
            if any(t not in embeddings for t in tokens):
                stats.skipped["oov"] += 1
                continue
            seed = derive_seed(shuffle_seed, lineno)
            perm = np.random.Generator(np.random.Philox(key=seed)).permutation(SENTENCE_LENGTH)
            x = embeddings.lookup([tokens[p] for p in perm])
            stats.kept += 1
            yield WordOrderExample(tokens, x, np.argsort(perm), lineno, seed)


def restore_tokens(shuffled: list[str], order) -> list[str]:
    return [shuffled[int(i)] for i in order]


def exact_order_accuracy(model, examples, beam: int = 1) -> float:
    """Fraction of examples whose decoded order reproduces the sentence.

    Compares token strings so swapping two copies of the same word is not
    an error. ``examples`` may be ``WordOrderExample``s or
    ``OrderingExample``s carrying ``meta["tokens"]``.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("no examples to score")
    hits = 0
    for ex in examples:
        if ex.x.shape[1] != model.input_dim:
            raise ConfigError(f"model expects {model.input_dim}-dimensional embeddings, data has {ex.x.shape[1]}")
        tokens = ex.tokens if isinstance(ex, WordOrderExample) else list(ex.meta["tokens"])
        shuffled = [""] * len(tokens)
        for t, idx in enumerate(ex.y):
            shuffled[idx] = tokens[t]
        order = beam_search(model, ex.x, beam=beam)
        hits += restore_tokens(shuffled, order) == tokens
    return hits / len(examples)


# Synthetic grammar for desk-scale checks. Every word belongs to exactly one
# class and each template uses a distinct set of classes, so the set of
# words in a sentence determines its order.
_CLASSES = {
    "det": ["the", "a", "this", "that", "every", "some"],
    "adj": ["big", "small", "red", "old", "quiet", "happy"],
    "noun": ["dog", "cat", "bird", "child", "farmer", "teacher"],
    "verb": ["runs", "sleeps", "waits", "sings", "jumps", "laughs"],
    "adv": ["quickly", "slowly", "often", "rarely", "loudly", "softly"],
    "pron": ["she", "he", "they", "we", "you", "i"],
    "prep": ["near", "under", "behind", "beside", "above", "inside"],
    "time": ["today", "tonight", "tomorrow", "yesterday", "now", "later"],
}

_TEMPLATES = [
    ("det", "adj", "noun", "verb", "adv"),
    ("pron", "verb", "prep", "det", "noun"),
    ("time", "det", "noun", "verb", "adv"),
    ("pron", "adv", "verb", "prep", "time"),
]


class SyntheticGrammar:
    """Templated five-word sentences with orthonormal word embeddings."""

    def __init__(self, dimension: int = 50, seed: int = 0):
        vocab = [w for words in _CLASSES.values() for w in words]
        if dimension < len(vocab):
            raise ValueError(f"orthogonal embeddings need dimension >= {len(vocab)}, got {dimension}")
        self.vocab = vocab
        self.dimension = dimension
        rng = np.random.Generator(np.random.Philox(key=seed))
        q, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
        self.table = EmbeddingTable(dimension, {w: q[k].copy() for k, w in enumerate(vocab)})

    def sentences(self, count: int, seed: int) -> list[list[str]]:
        """``count`` distinct sentences, templates used round-robin."""
        total = len(_TEMPLATES) * len(_CLASSES["det"]) ** SENTENCE_LENGTH
        if count > total:
            raise ValueError(f"grammar only has {total} distinct sentences")
        rng = np.random.Generator(np.random.Philox(key=seed))
        seen, out = set(), []
        while len(out) < count:
            template = _TEMPLATES[len(out) % len(_TEMPLATES)]
            words = tuple(_CLASSES[c][rng.integers(len(_CLASSES[c]))] for c in template)
            if words not in seen:
                seen.add(words)
                out.append(list(words))
        return out

    def corpus_text(self, sentences: list[list[str]], header_every: int = 0) -> str:
        """Join sentences one per line, optionally with WikiText-style noise."""
        lines = []
        for k, s in enumerate(sentences):
            if header_every and k % header_every == 0:
                lines += ["", f" = Section {k // header_every} = ", ""]
            lines.append(" ".join(s))
        return "\n".join(lines) + "\n"
