"""Tokenization, vocabulary, caption/feature/embedding IO, synthetic corpus.

File formats:
  captions   JSON-lines, one object per line: {"image_id": str, "caption": str}
  features   binary "IMFT": magic, u32 version=1, u32 record_count,
             u32 feature_dim; per record u16 id_length, id utf-8 bytes,
             feature_dim float32 values; all little-endian
  vocabulary UTF-8 text, "word<TAB>count" per line in canonical order
  embeddings UTF-8 text, "word v1 ... vD" per line
"""

from __future__ import annotations

import json
import string
import struct
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError
from .rng import RngStream

PAD, START, END, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, START, END, UNK)
PAD_ID, START_ID, END_ID, UNK_ID = 0, 1, 2, 3

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace-split, strip surrounding ASCII punctuation. No stemming."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


@dataclass
class CaptionRecord:
    image_id: str
    caption: str
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.tokens:
            self.tokens = tokenize(self.caption)


@dataclass
class Vocabulary:
    words: list[str]                 # specials first, then content words
    index: dict[str, int]
    counts: dict[str, int]

    @property
    def size(self) -> int:
        return len(self.words)

    def content_words(self) -> list[str]:
        return self.words[len(SPECIALS):]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def to_bytes(self) -> bytes:
        lines = [f"{w}\t{self.counts.get(w, 0)}" for w in self.words]
        return ("\n".join(lines) + "\n").encode("utf-8")

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        words, counts = [], {}
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise FormatError(f"vocabulary file: malformed line {lineno}")
                word, count = parts[0], int(parts[1])
                words.append(word)
                counts[word] = count
        if tuple(words[:4]) != SPECIALS:
            raise FormatError("vocabulary file: special tokens missing or out of order")
        return cls(words=words, index={w: i for i, w in enumerate(words)}, counts=counts)


def build_vocab(captions: list[CaptionRecord], size: int = 10000) -> Vocabulary:
    """Top-`size` content words by count, ties broken lexicographically."""
    if not captions:
        raise DataError("build_vocab: empty caption set")
    counter: Counter[str] = Counter()
    for rec in captions:
        counter.update(rec.tokens)
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:size]
    words = list(SPECIALS) + [w for w, _ in ranked]
    counts = {w: 0 for w in SPECIALS}
    counts.update(dict(ranked))
    return Vocabulary(words=words, index={w: i for i, w in enumerate(words)}, counts=counts)


def load_captions(path) -> list[CaptionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"captions file: invalid JSON on line {lineno}: {e}")
            if "image_id" not in obj or "caption" not in obj:
                raise FormatError(f"captions file: missing field on line {lineno}")
            records.append(CaptionRecord(image_id=str(obj["image_id"]), caption=obj["caption"]))
    return records


def save_captions(records: list[CaptionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({"image_id": rec.image_id, "caption": rec.caption}) + "\n")


@dataclass
class FeatureStore:
    feature_dim: int
    features: dict[str, np.ndarray] = field(default_factory=dict)  # float32 vectors

    def get(self, image_id: str) -> np.ndarray:
        if image_id not in self.features:
            raise DataError(f"no feature vector for image id '{image_id}'")
        return self.features[image_id]


MAGIC = b"IMFT"
FEATURE_VERSION = 1


def save_features(store: FeatureStore, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, len(store.features), store.feature_dim))
        for image_id, vec in store.features.items():
            id_bytes = image_id.encode("utf-8")
            f.write(struct.pack("<H", len(id_bytes)))
            f.write(id_bytes)
            f.write(np.asarray(vec, dtype="<f4").tobytes())


def load_features(path) -> FeatureStore:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16:
        raise FormatError("feature file truncated before header", offset=len(data))
    if data[:4] != MAGIC:
        raise FormatError(f"feature file: bad magic {data[:4]!r}, expected {MAGIC.decode()!r}", offset=0)
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != FEATURE_VERSION:
        raise FormatError(f"feature file: unsupported version {version}", offset=4)
    store = FeatureStore(feature_dim=dim)
    off = 16
    for _ in range(count):
        if off + 2 > len(data):
            raise FormatError("feature file truncated in record header", offset=off)
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + 4 * dim > len(data):
            raise FormatError("feature file truncated in record body", offset=off)
        image_id = data[off : off + id_len].decode("utf-8")
        off += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off).copy()
        off += 4 * dim
        if image_id in store.features:
            raise FormatError(f"feature file: duplicate image id '{image_id}'", offset=off)
        store.features[image_id] = vec
    return store


def load_embeddings(path, vocab: Vocabulary, seed: int = 0, default_dim: int = 300):
    """Embedding matrix (vocab.size x D, float64) initialized from a text vector file.

    Vocab words present in the file get their vectors; everything else
    (including specials) gets seeded uniform noise in [-0.1, 0.1].
    Returns (matrix, coverage fraction over content words).
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    wanted = set(vocab.words)
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if line.strip() == "":
                    continue
                raise FormatError(f"embedding file: malformed line {lineno}")
            word, vals = parts[0], parts[1:]
            try:
                vec = np.array([float(v) for v in vals], dtype=np.float64)
            except ValueError:
                raise FormatError(f"embedding file: malformed line {lineno}")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise FormatError(
                    f"embedding file: line {lineno} has {vec.size} values, expected {dim}"
                )
            if word in wanted:
                vectors[word] = vec
    if dim is None:
        dim = default_dim
    rng = RngStream(seed)
    matrix = rng.uniform_range(-0.1, 0.1, (vocab.size, dim))
    hits = 0
    for i, word in enumerate(vocab.words):
        if word in vectors:
            matrix[i] = vectors[word]
            if word not in SPECIALS:
                hits += 1
    n_content = len(vocab.content_words())
    coverage = hits / n_content if n_content else 0.0
    return matrix, coverage


# --- synthetic corpus -------------------------------------------------------

COLORS = ["red", "blue", "green", "black", "white", "brown", "gray", "orange", "yellow", "spotted"]
ANIMALS = ["cat", "dog", "bird", "horse", "sheep", "bear", "rabbit", "fox", "goat", "duck", "pig", "owl"]
VERB_PHRASES = [
    "runs in the park",
    "sleeps on the sofa",
    "eats some fresh grass",
    "plays with a ball",
    "walks along the beach",
    "sits under a tree",
    "swims across the pond",
    "jumps over the fence",
]
TEMPLATES = [
    "a {c} {a} {vp}",
    "the {c} {a} {vp}",
    "one {c} {a} {vp}",
    "a {c} {a} {vp} today",
    "the {c} {a} {vp} now",
]


def synth_corpus(seed: int, n_images: int, vocab_spec: dict | None = None):
    """Deterministic toy captioning corpus.

    Each image is a (color, animal, verb-phrase) triple; its feature vector is
    the concatenated one-hot encoding of the three slots, so captions are
    fully recoverable from features. Five paraphrase references per image.
    Returns (caption records, FeatureStore).
    """
    if n_images < 1:
        raise DataError("synth_corpus: n_images must be >= 1")
    spec = vocab_spec or {}
    colors = spec.get("colors", COLORS)
    animals = spec.get("animals", ANIMALS)
    vps = spec.get("verb_phrases", VERB_PHRASES)
    templates = spec.get("templates", TEMPLATES)
    n_combos = len(colors) * len(animals) * len(vps)
    if n_images > n_combos:
        raise DataError(f"synth_corpus: at most {n_combos} distinct images available")
    rng = RngStream(seed)
    picks = rng.permutation(n_combos)[:n_images]
    dim = len(colors) + len(animals) + len(vps)
    store = FeatureStore(feature_dim=dim)
    records: list[CaptionRecord] = []
    for k, combo in enumerate(picks):
        vi, rest = divmod(int(combo), len(colors) * len(animals))
        ai, ci = divmod(rest, len(colors))
        image_id = f"synth-{k:04d}"
        vec = np.zeros(dim, dtype=np.float32)
        vec[ci] = 1.0
        vec[len(colors) + ai] = 1.0
        vec[len(colors) + len(animals) + vi] = 1.0
        store.features[image_id] = vec
        for tmpl in templates:
            caption = tmpl.format(c=colors[ci], a=animals[ai], vp=vps[vi])
            records.append(CaptionRecord(image_id=image_id, caption=caption))
    return records, store
