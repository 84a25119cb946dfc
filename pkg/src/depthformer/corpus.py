"""Labeled text corpora: tokenization, vocabulary and document-presence counts.

Datasets are TSV files, one document per line: ``label<TAB>text``. The
vocabulary is always frozen on the training split; test documents map
unseen words to ``<UNK>``. Word/label statistics are counted at the
document level (a word counts once per document no matter how often it
repeats), which is what the downstream mutual-information scoring needs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
MASK_TOKEN = "<MASK>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

_TRUTHY = {"1", "true", "yes", "on"}
_FALSY = {"0", "false", "no", "off"}


class CorpusError(ValueError):
    """Malformed input data (bad line, unknown label, empty split)."""


def read_kv_config(path: str | Path) -> dict[str, str]:
    """Parse a plain ``key = value`` config file; '#' starts a comment."""
    out: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CorpusError(f"config line without '=': {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUTHY:
        return True
    if v in _FALSY:
        return False
    raise CorpusError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class TokenizerConfig:
    """Corpus-level settings. ``max_len`` clips long documents."""

    max_len: int = 512
    lowercase: bool = True
    min_freq: int = 1

    @classmethod
    def from_kv(cls, kv: dict[str, str]) -> "TokenizerConfig":
        base = cls()
        return cls(
            max_len=int(kv.get("max_len", base.max_len)),
            lowercase=_parse_bool(kv["lowercase"]) if "lowercase" in kv else base.lowercase,
            min_freq=int(kv.get("min_freq", base.min_freq)),
        )


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Word-level split with punctuation broken off; deterministic."""
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)


class Vocab:
    """word<->id bijection plus per-word document frequency.

    Ids are contiguous from 0; the three special tokens occupy ids 0..2
    and never collide with corpus words.
    """

    def __init__(self, words: list[str], doc_freq: np.ndarray):
        if len(words) != len(doc_freq):
            raise ValueError(f"{len(words)} words but {len(doc_freq)} doc_freq entries")
        self.id_to_word = list(words)
        self.word_to_id = {w: i for i, w in enumerate(words)}
        if len(self.word_to_id) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self.doc_freq = np.asarray(doc_freq, dtype=np.int64)

    @classmethod
    def build(cls, doc_tokens: list[list[str]], min_freq: int = 1) -> "Vocab":
        """Frozen vocabulary from training documents only."""
        presence: dict[str, int] = {}
        for tokens in doc_tokens:
            for w in set(tokens):
                presence[w] = presence.get(w, 0) + 1
        kept = [(w, c) for w, c in presence.items() if c >= min_freq]
        kept.sort(key=lambda wc: (-wc[1], wc[0]))
        words = list(SPECIAL_TOKENS) + [w for w, _ in kept]
        freqs = [0, 0, 0] + [c for _, c in kept]
        return cls(words, np.asarray(freqs, dtype=np.int64))

    @property
    def pad_id(self) -> int:
        return self.word_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.word_to_id[UNK_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.word_to_id[MASK_TOKEN]

    def encode(self, word: str) -> int:
        return self.word_to_id.get(word, self.unk_id)

    def __len__(self) -> int:
        return len(self.id_to_word)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, word in enumerate(self.id_to_word):
                fh.write(f"{word}\t{i}\t{int(self.doc_freq[i])}\n")

    @classmethod
    def read(cls, path: str | Path) -> "Vocab":
        words: list[str] = []
        freqs: list[int] = []
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            parts = raw.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected word<TAB>id<TAB>doc_freq")
            word, idx, freq = parts
            if int(idx) != len(words):
                raise CorpusError(f"{path}:{lineno}: ids must be contiguous from 0")
            words.append(word)
            freqs.append(int(freq))
        return cls(words, np.asarray(freqs, dtype=np.int64))


@dataclass
class Document:
    tokens: np.ndarray  # int64 token ids, non-empty, len <= max_len
    label: int
    raw_text: str


@dataclass
class Corpus:
    documents: list[Document]
    vocab: Vocab
    labels: list[str]
    split: str  # "train" or "test"
    config: TokenizerConfig = field(default_factory=TokenizerConfig)

    def __len__(self) -> int:
        return len(self.documents)

    @property
    def n_labels(self) -> int:
        return len(self.labels)


def load_tsv(
    path: str | Path,
    config: TokenizerConfig | None = None,
    vocab: Vocab | None = None,
    labels: list[str] | None = None,
) -> Corpus:
    """Load one split. Without ``vocab`` this is the training split and the
    vocabulary/label set are built from it; with ``vocab`` (and ``labels``)
    the split is treated as test data against the frozen mappings.
    """
    config = config or TokenizerConfig()
    is_train = vocab is None
    if not is_train and labels is None:
        raise ValueError("test split needs the training label set")

    rows: list[tuple[str, str, list[str]]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if "\t" not in raw:
            raise CorpusError(f"{path}:{lineno}: expected label<TAB>text")
        label, text = raw.split("\t", 1)
        label = label.strip()
        if not label:
            raise CorpusError(f"{path}:{lineno}: empty label")
        tokens = tokenize(text, lowercase=config.lowercase)
        if not tokens:
            raise CorpusError(f"{path}:{lineno}: empty text")
        rows.append((label, text, tokens[: config.max_len]))
    if not rows:
        raise CorpusError(f"{path}: no documents")

    if is_train:
        labels = sorted({label for label, _, _ in rows})
        vocab = Vocab.build([toks for _, _, toks in rows], min_freq=config.min_freq)
    label_to_id = {name: i for i, name in enumerate(labels)}

    documents = []
    for lineno, (label, text, tokens) in enumerate(rows, 1):
        if label not in label_to_id:
            raise CorpusError(f"{path}:{lineno}: unknown label {label!r}")
        ids = np.asarray([vocab.encode(w) for w in tokens], dtype=np.int64)
        documents.append(Document(tokens=ids, label=label_to_id[label], raw_text=text))

    return Corpus(
        documents=documents,
        vocab=vocab,
        labels=list(labels),
        split="train" if is_train else "test",
        config=config,
    )


@dataclass
class CorpusStats:
    """Document-level presence counts from the training split.

    ``joint[w]`` is a per-label vector counting documents that contain
    word ``w`` and carry each label; summing it over labels recovers the
    word's document frequency (documents are single-label).
    """

    n_docs: int
    label_counts: np.ndarray  # (n_labels,) documents per label
    joint: dict[int, np.ndarray]  # word id -> (n_labels,) presence counts
    n_labels: int

    def doc_freq(self, word_id: int) -> int:
        counts = self.joint.get(word_id)
        return 0 if counts is None else int(counts.sum())

    def joint_counts(self, word_id: int) -> np.ndarray:
        counts = self.joint.get(word_id)
        if counts is None:
            return np.zeros(self.n_labels, dtype=np.int64)
        return counts


def collect_stats(corpus: Corpus) -> CorpusStats:
    """Presence statistics; only valid on the training split."""
    if corpus.split != "train":
        raise ValueError(f"statistics must come from the training split, got {corpus.split!r}")
    if not corpus.documents:
        raise CorpusError("empty training split")

    n_labels = corpus.n_labels
    label_counts = np.zeros(n_labels, dtype=np.int64)
    joint: dict[int, np.ndarray] = {}
    for doc in corpus.documents:
        label_counts[doc.label] += 1
        for wid in set(doc.tokens.tolist()):
            row = joint.get(wid)
            if row is None:
                row = np.zeros(n_labels, dtype=np.int64)
                joint[wid] = row
            row[doc.label] += 1
    return CorpusStats(
        n_docs=len(corpus.documents),
        label_counts=label_counts,
        joint=joint,
        n_labels=n_labels,
    )
