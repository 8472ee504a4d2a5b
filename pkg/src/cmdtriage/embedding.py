"""Keyword extraction and word-embedding arithmetic for generation similarity.

A generated skill call is reduced to its slot-filler keywords (the template
itself carries no information about what the robot was asked to move), each
keyword is looked up in a word-embedding table, and the keyword vectors are
averaged into a single point whose Euclidean distances to other generations
feed the uncertainty score.
"""

from __future__ import annotations

import hashlib
import logging
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[a-z0-9']+")
_SLOT_RE = re.compile(r"<[^<>]*>")


class EmbeddingError(Exception):
    """Malformed embedding file or misuse of a loaded table."""


class EmptyKeywordsError(EmbeddingError):
    """A generation yielded no embeddable keywords.

    Callers treat the affected generation as maximally distant from every
    other one (see :attr:`EmbeddingTable.sentinel_distance`) so degenerate
    outputs raise uncertainty instead of masking it.
    """


class AllOutOfVocabularyWarning(UserWarning):
    """Every keyword fell outside the table under the zero OOV policy."""


def load_stopwords() -> frozenset[str]:
    """Return the bundled 50-word function-word list."""
    text = resources.files("cmdtriage.data").joinpath("stopwords.txt").read_text()
    return frozenset(w.strip() for w in text.split() if w.strip())


STOPWORDS = load_stopwords()


@dataclass
class EmbeddingTable:
    """In-memory word -> vector map with a fixed dimension.

    oov_policy:
        "zero"  out-of-vocabulary words contribute a zero vector (default,
                keeps scores finite and conservative);
        "hash"  OOV words map to a deterministic one-hot bucket so that
                distinct unknown words still repel each other.
    """

    dimension: int
    vectors: dict[str, np.ndarray]
    oov_policy: str = "zero"
    _max_norm: float | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise EmbeddingError(f"dimension must be >= 1, got {self.dimension}")
        if self.oov_policy not in ("zero", "hash"):
            raise EmbeddingError(f"unknown oov_policy {self.oov_policy!r}")
        for word, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise EmbeddingError(
                    f"vector for {word!r} has length {vec.shape[0]}, "
                    f"expected {self.dimension}"
                )

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def max_norm(self) -> float:
        if self._max_norm is None:
            if self.vectors:
                self._max_norm = float(
                    max(np.linalg.norm(v) for v in self.vectors.values())
                )
            else:
                self._max_norm = 0.0
        return self._max_norm

    @property
    def sentinel_distance(self) -> float:
        """Distance charged to unembeddable generations: 2x the largest norm."""
        return 2.0 * self.max_norm

    def lookup(self, word: str) -> np.ndarray | None:
        """Vector for an in-vocabulary word, OOV fallback otherwise.

        Returns None for OOV words under the "zero" policy so the caller can
        distinguish a genuine zero vector from a miss.
        """
        vec = self.vectors.get(word)
        if vec is not None:
            return vec
        if self.oov_policy == "hash":
            return self._hash_vector(word)
        return None

    def _hash_vector(self, word: str) -> np.ndarray:
        digest = hashlib.md5(word.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % self.dimension
        vec = np.zeros(self.dimension)
        vec[bucket] = 1.0
        return vec


def load_table(path: str | Path, oov_policy: str = "zero") -> EmbeddingTable:
    """Load a textual embedding file.

    Format: a header line "vocab_size dimension", then one
    "word v1 v2 ... vd" line per word.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingError(f"{path}: malformed header {header.strip()!r}")
        try:
            vocab_size, dimension = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingError(
                f"{path}: malformed header {header.strip()!r}"
            ) from None

        vectors: dict[str, np.ndarray] = {}
        rows = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            word = fields[0]
            if len(fields) != dimension + 1:
                raise EmbeddingError(
                    f"{path}:{lineno}: expected {dimension} values for "
                    f"{word!r}, got {len(fields) - 1}"
                )
            try:
                vec = np.array([float(x) for x in fields[1:]])
            except ValueError:
                raise EmbeddingError(
                    f"{path}:{lineno}: non-numeric value in row for {word!r}"
                ) from None
            if word in vectors:
                logger.warning("%s:%d: duplicate word %r, last wins", path, lineno, word)
            vectors[word] = vec
            rows += 1

    if rows != vocab_size:
        raise EmbeddingError(
            f"{path}: header declares {vocab_size} words, file has {rows}"
        )
    return EmbeddingTable(dimension=dimension, vectors=vectors, oov_policy=oov_policy)


def save_table(table: EmbeddingTable, path: str | Path) -> None:
    """Write a table in the same text format load_table reads.

    Floats are written with repr() so a load round-trips bit-exactly.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dimension}\n")
        for word, vec in table.vectors.items():
            values = " ".join(repr(float(v)) for v in vec)
            fh.write(f"{word} {values}\n")


def _template_pattern(skill_template: str) -> re.Pattern[str]:
    segments = []
    last = 0
    for m in _SLOT_RE.finditer(skill_template):
        segments.append(re.escape(skill_template[last : m.start()]))
        segments.append("(.*?)")
        last = m.end()
    segments.append(re.escape(skill_template[last:]))
    return re.compile("".join(segments))


def _content_words(text: str) -> list[str]:
    tokens = _TOKEN_RE.findall(text.lower())
    return [t for t in tokens if t and t not in STOPWORDS]


def extract_keywords(generation_text: str, skill_template: str | None) -> list[str]:
    """Strip the skill-call template from a generation and keep content words.

    Only the first non-empty line is considered: multi-line generations are
    truncated (logged) because the downstream similarity treats one
    generation as one skill call. If the template does not match, every
    content word of the line is kept instead.

    Raises EmptyKeywordsError when nothing embeddable remains.
    """
    lines = [ln for ln in generation_text.splitlines() if ln.strip()]
    if len(lines) > 1:
        logger.debug("generation has %d lines, keeping the first", len(lines))
    line = lines[0].strip() if lines else ""

    words: list[str] = []
    if skill_template:
        pattern = _template_pattern(skill_template)
        m = pattern.fullmatch(line) or pattern.search(line)
        if m:
            for group in m.groups():
                words.extend(_content_words(group))
        else:
            words = _content_words(line)
    else:
        words = _content_words(line)

    if not words:
        raise EmptyKeywordsError(
            f"no keywords extractable from generation {generation_text!r}"
        )
    return words


def embed(keywords: list[str], table: EmbeddingTable) -> np.ndarray:
    """Mean of the keyword vectors; OOV words handled per the table policy."""
    if not keywords:
        raise EmptyKeywordsError("cannot embed an empty keyword list")
    resolved = []
    misses = 0
    for word in keywords:
        vec = table.lookup(word)
        if vec is None:
            misses += 1
            vec = np.zeros(table.dimension)
        resolved.append(vec)
    if misses == len(keywords) and table.oov_policy == "zero":
        warnings.warn(
            f"all {misses} keywords out of vocabulary; embedding is the zero vector",
            AllOutOfVocabularyWarning,
            stacklevel=2,
        )
    return np.mean(resolved, axis=0)


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two embedding points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def bundled_table_path() -> Path:
    """Path of the small embedding table shipped for tests and demos."""
    return Path(__file__).parent / "data" / "mini_embeddings.txt"
