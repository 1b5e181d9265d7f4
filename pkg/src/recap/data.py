"""Caption preprocessing, vocabulary, frame-feature handling, synthetic corpus.

Feature files are binary, little-endian: magic ``VFRM``, version u32 = 1,
row count u32, feature dim u32, then row-major float32 payload. Caption
files are JSON Lines, one ``{"video_id": ..., "captions": [...]}`` record
per line. Split files are plain text, one video id per line.
"""

from __future__ import annotations

import json
import math
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

MAX_CAPTION_TOKENS = 30
NUM_FRAMES = 28

FEATURE_MAGIC = b"VFRM"
FEATURE_VERSION = 1


class CorpusError(ValueError):
    """Base class for corpus and file-format failures."""


class EmptyCaptionError(CorpusError):
    """Caption text is empty after cleaning; the record is rejected."""


class FeatureFormatError(CorpusError):
    """Feature file carries a bad magic or version."""


class FeatureTruncatedError(CorpusError):
    """Feature file payload is shorter than its header promises."""


class FeatureValueError(CorpusError):
    """Feature file payload contains non-finite values."""


def preprocess_caption(text: str) -> list[str]:
    """Lowercase, strip punctuation (Unicode P*), split, truncate to 30.

    Raises EmptyCaptionError if nothing survives cleaning.
    """
    cleaned = "".join(
        " " if unicodedata.category(ch).startswith("P") else ch for ch in text
    )
    tokens = cleaned.lower().split()
    if not tokens:
        raise EmptyCaptionError(f"caption empty after cleaning: {text!r}")
    return tokens[:MAX_CAPTION_TOKENS]


class Vocabulary:
    """Token/id table with reserved ids 0=PAD, 1=BOS, 2=EOS, 3=UNK."""

    def __init__(self, words: Sequence[str], min_count: int = 1):
        self.min_count = min_count
        self.id_to_token: list[str] = list(RESERVED)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for w in words:
            if w in self.token_to_id:
                raise CorpusError(f"duplicate or reserved vocabulary word: {w!r}")
            self.token_to_id[w] = len(self.id_to_token)
            self.id_to_token.append(w)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def words(self) -> list[str]:
        return self.id_to_token[len(RESERVED):]


def build_vocab(captions: Sequence[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Frequency-filtered vocabulary; ids assigned frequency-desc, ties lexicographic."""
    if min_count < 1:
        raise CorpusError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    total = 0
    for toks in captions:
        for t in toks:
            counts[t] = counts.get(t, 0) + 1
            total += 1
    if total == 0:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    return Vocabulary(kept, min_count=min_count)


@dataclass
class CaptionRecord:
    """One tokenized caption; ids exclude BOS/EOS, length capped at 30."""

    video_id: str
    tokens: list[int]

    def __post_init__(self):
        if len(self.tokens) > MAX_CAPTION_TOKENS:
            raise CorpusError(
                f"caption for {self.video_id} has {len(self.tokens)} tokens (max {MAX_CAPTION_TOKENS})"
            )


@dataclass
class VideoFeatures:
    """Raw per-frame feature matrix for one video, shape (m', d)."""

    video_id: str
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise CorpusError(
                f"feature matrix for {self.video_id} must be 2-D with >= 1 row"
            )


@dataclass
class SampledFeatures:
    """Exactly 28 feature rows; rows at and beyond valid_count are zero."""

    matrix: np.ndarray
    valid_count: int


def sample_frames(vf: VideoFeatures) -> SampledFeatures:
    """Pick 28 equally spaced rows, index floor(i*m'/28); zero-pad short videos."""
    m = vf.matrix.shape[0]
    d = vf.matrix.shape[1]
    out = np.zeros((NUM_FRAMES, d), dtype=np.float64)
    if m >= NUM_FRAMES:
        idx = [(i * m) // NUM_FRAMES for i in range(NUM_FRAMES)]
        out[:] = vf.matrix[idx]
        valid = NUM_FRAMES
    else:
        out[:m] = vf.matrix
        valid = m
    return SampledFeatures(matrix=out, valid_count=valid)


def write_features(vf: VideoFeatures, path) -> None:
    payload = np.ascontiguousarray(vf.matrix, dtype="<f4")
    m, d = vf.matrix.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, m, d))
        f.write(payload.tobytes())


def read_features(path) -> VideoFeatures:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic, expected {FEATURE_MAGIC!r}")
    version, m, d = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    expected = 16 + 4 * m * d
    if len(raw) < expected:
        raise FeatureTruncatedError(
            f"{path}: payload holds {(len(raw) - 16) // 4} floats, header promises {m * d}"
        )
    matrix = np.frombuffer(raw[16:expected], dtype="<f4").reshape(m, d).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise FeatureValueError(f"{path}: payload contains non-finite values")
    return VideoFeatures(video_id=path.stem, matrix=matrix)


# --- deterministic synthetic corpus ---------------------------------------
#
# All randomness comes from xorshift64* with a splitmix64 seed scramble so
# corpora are bit-reproducible across platforms:
#   splitmix64: s += 0x9E3779B97F4A7C15; z = s; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
#               z = (z ^ z>>27) * 0x94D049BB133111EB; z ^= z>>31
#   xorshift64*: x ^= x>>12; x ^= x<<25; x ^= x>>27; output x * 0x2545F4914F6CDD1D

_MASK64 = (1 << 64) - 1


class XorShift64Star:
    """xorshift64* PRNG; uniforms use the top 53 bits, gaussians Box-Muller."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        s = (s + 0x9E3779B97F4A7C15) & _MASK64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        z ^= z >> 31
        self.state = z if z != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        return self.next_u64() % n

    def gauss(self) -> float:
        u1 = self.uniform()
        while u1 == 0.0:
            u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


SUBJECTS = ("cat", "dog", "man", "woman", "bird", "horse", "robot", "chef")
VERBS = ("runs", "jumps", "eats", "holds", "throws", "watches", "lifts", "paints")
OBJECTS = ("ball", "apple", "book", "box", "cup", "stick", "hat", "drum")
_ROLE_PHASES = (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)


def _role_weight(t: int, role: int) -> float:
    return 1.0 + 0.5 * math.sin(2.0 * math.pi * t / NUM_FRAMES + _ROLE_PHASES[role])


def gen_synthetic(
    seed: int, n_videos: int, d: int, noise_sigma: float = 0.05
) -> tuple[list[VideoFeatures], list[CaptionRecord], Vocabulary]:
    """Deterministic toy corpus: one "subject verb object" caption per video.

    Every lexicon word owns a fixed seed-derived d-vector; frame t of a video
    is the role-weighted sum of its three word vectors plus Gaussian noise.
    The role weights are fixed sinusoids phase-shifted per role, so subject,
    verb and object dominate different parts of the timeline.
    """
    if n_videos < 1:
        raise CorpusError(f"n_videos must be >= 1, got {n_videos}")
    if d < 8:
        raise CorpusError(f"feature dim must be >= 8, got {d}")
    rng = XorShift64Star(seed)
    lexicon = list(SUBJECTS) + list(VERBS) + list(OBJECTS)
    vocab = Vocabulary(lexicon)
    word_vecs = {
        w: np.array([rng.gauss() for _ in range(d)], dtype=np.float64) for w in lexicon
    }
    features: list[VideoFeatures] = []
    captions: list[CaptionRecord] = []
    for v in range(n_videos):
        vid = f"vid{v:04d}"
        words = (
            SUBJECTS[rng.randint(8)],
            VERBS[rng.randint(8)],
            OBJECTS[rng.randint(8)],
        )
        frames = np.zeros((NUM_FRAMES, d), dtype=np.float64)
        for t in range(NUM_FRAMES):
            for role, w in enumerate(words):
                frames[t] += _role_weight(t, role) * word_vecs[w]
            for k in range(d):
                frames[t, k] += noise_sigma * rng.gauss()
        features.append(VideoFeatures(video_id=vid, matrix=frames))
        captions.append(CaptionRecord(video_id=vid, tokens=vocab.encode(words)))
    return features, captions, vocab


# --- corpus containers and disk layout -------------------------------------


@dataclass
class Corpus:
    vocab: Vocabulary
    features: dict[str, SampledFeatures]
    captions: dict[str, list[CaptionRecord]] = field(default_factory=dict)

    @property
    def feat_dim(self) -> int:
        any_feat = next(iter(self.features.values()))
        return any_feat.matrix.shape[1]


@dataclass
class Splits:
    train: list[str]
    val: list[str]
    test: list[str]


def split_by_id_order(video_ids: Sequence[str]) -> Splits:
    """70/10/20 split over the id-sorted list."""
    ids = sorted(video_ids)
    n = len(ids)
    n_train = (7 * n) // 10
    n_val = n // 10
    return Splits(
        train=ids[:n_train],
        val=ids[n_train : n_train + n_val],
        test=ids[n_train + n_val :],
    )


def corpus_from_synthetic(
    features: Sequence[VideoFeatures],
    captions: Sequence[CaptionRecord],
    vocab: Vocabulary,
) -> Corpus:
    feat = {vf.video_id: sample_frames(vf) for vf in features}
    caps: dict[str, list[CaptionRecord]] = {}
    for rec in captions:
        caps.setdefault(rec.video_id, []).append(rec)
    return Corpus(vocab=vocab, features=feat, captions=caps)


def write_corpus(
    out_dir,
    features: Sequence[VideoFeatures],
    captions: Sequence[CaptionRecord],
    vocab: Vocabulary,
) -> None:
    """Write feature files, captions JSONL and 70/10/20 split files."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for vf in features:
        write_features(vf, out / "features" / f"{vf.video_id}.vfrm")
    by_vid: dict[str, list[str]] = {}
    for rec in captions:
        by_vid.setdefault(rec.video_id, []).append(" ".join(vocab.decode(rec.tokens)))
    with open(out / "captions.jsonl", "w") as f:
        for vid in sorted(by_vid):
            f.write(json.dumps({"video_id": vid, "captions": by_vid[vid]}) + "\n")
    splits = split_by_id_order([vf.video_id for vf in features])
    for name, ids in (("train", splits.train), ("val", splits.val), ("test", splits.test)):
        with open(out / f"{name}.txt", "w") as f:
            for vid in ids:
                f.write(vid + "\n")


def read_captions_file(path) -> dict[str, list[list[str]]]:
    """Parse a captions JSONL file into video_id -> list of token lists.

    Records that clean to empty are reported on return rather than raised,
    matching the skip-and-report contract.
    """
    result: dict[str, list[list[str]]] = {}
    skipped: list[str] = []
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                vid = rec["video_id"]
                texts = rec["captions"]
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise CorpusError(f"{path}:{line_no}: malformed caption record: {e}")
            for text in texts:
                try:
                    toks = preprocess_caption(text)
                except EmptyCaptionError:
                    skipped.append(f"{vid}:{text!r}")
                    continue
                result.setdefault(vid, []).append(toks)
    if skipped:
        import sys

        print(
            f"warning: skipped {len(skipped)} empty-after-cleaning captions in {path}",
            file=sys.stderr,
        )
    return result


def read_split_file(path) -> list[str]:
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


def _assemble_corpus(
    features_dir, token_lists: dict[str, list[list[str]]], vocab: Vocabulary
) -> Corpus:
    features: dict[str, SampledFeatures] = {}
    for f in sorted(Path(features_dir).glob("*.vfrm")):
        vf = read_features(f)
        features[vf.video_id] = sample_frames(vf)
    if not features:
        raise CorpusError(f"no .vfrm feature files under {features_dir}")
    captions: dict[str, list[CaptionRecord]] = {}
    for vid, per_vid in token_lists.items():
        captions[vid] = [
            CaptionRecord(video_id=vid, tokens=vocab.encode(toks)) for toks in per_vid
        ]
    return Corpus(vocab=vocab, features=features, captions=captions)


def load_corpus(
    features_dir, captions_path, train_ids: Sequence[str], min_count: int = 1
) -> Corpus:
    """Assemble a corpus from disk; the vocabulary uses training captions only."""
    token_lists = read_captions_file(captions_path)
    train_set = set(train_ids)
    vocab = build_vocab(
        [
            toks
            for vid, per_vid in sorted(token_lists.items())
            if vid in train_set
            for toks in per_vid
        ],
        min_count=min_count,
    )
    return _assemble_corpus(features_dir, token_lists, vocab)


def load_corpus_with_vocab(features_dir, captions_path, vocab: Vocabulary) -> Corpus:
    """Assemble a corpus from disk under an existing (checkpoint) vocabulary."""
    token_lists = read_captions_file(captions_path)
    return _assemble_corpus(features_dir, token_lists, vocab)
